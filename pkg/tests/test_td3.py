import dataclasses

import numpy as np
import pytest

from windbess.core import BessMode, SystemConfig
from windbess.data import NormStats, synth_trace
from windbess.env import BessEnv, WindEnv
from windbess.nn import Mlp
from windbess.td3 import (
    Batch,
    ReplayBuffer,
    Td3Agent,
    Td3Hyper,
    critic_target,
    decode_bess_action,
    decode_wind_action,
    rollout,
    select_action,
    train,
    train_joint,
    train_step,
)

SMALL = Td3Hyper(batch_size=16, warmup_steps=32, hidden=(8, 8), buffer_capacity=10_000)


def nets_equal(a: Mlp, b: Mlp) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a.params, b.params))


@pytest.mark.parametrize("raw, mode, p_spot, p_curtail", [
    ([0.9, 0.0, -1.0], BessMode.CHARGE, 5.0, 0.0),
    ([0.0, 1.0, 1.0], BessMode.IDLE, 10.0, 10.0),
    ([-0.9, 1.0, 1.0], BessMode.DISCHARGE, 10.0, 0.0),
])
def test_decode_bess_examples(cfg, raw, mode, p_spot, p_curtail):
    a = decode_bess_action(raw, cfg)
    assert (a.mode, a.p_spot, a.p_curtail) == (mode, p_spot, p_curtail)


@pytest.mark.parametrize("raw, mw", [(1.0, 67.0), (-1.0, 0.0), (0.0, 33.5), (3.0, 67.0)])
def test_decode_wind_examples(cfg, raw, mw):
    assert decode_wind_action([raw], cfg).availability == mw


def test_select_action_noise_free_is_forward():
    actor = Mlp([4, 8, 3], "tanh")
    x = np.arange(4.0)
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(select_action(actor, x, 0.0, rng), actor.forward(x))


def test_noisy_action_is_seeded_and_bounded():
    actor = Mlp([4, 8, 3], "tanh")
    a = select_action(actor, np.ones(4), 5.0, np.random.default_rng(3))
    b = select_action(actor, np.ones(4), 5.0, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a) <= 1.0)


def test_warmup_actions_are_uniform():
    agent = Td3Agent(4, 3, Td3Hyper(warmup_steps=10**9), seed=1)
    acts = np.array([agent.act(np.zeros(4), 0.1) for _ in range(20_000)])
    assert acts.min() >= -1.0 and acts.max() <= 1.0
    assert np.allclose(acts.mean(axis=0), 0.0, atol=0.02)
    assert np.allclose(acts.var(axis=0), 1.0 / 3.0, atol=0.02)


def _constant_critic(agent, attr, value):
    net = getattr(agent, attr)
    for p in net.params:
        p[...] = 0.0
    net.biases[-1][...] = value


def _target_agent():
    agent = Td3Agent(2, 1, SMALL, seed=0)
    _constant_critic(agent, "critic1_target", 5.0)
    _constant_critic(agent, "critic2_target", 3.0)
    return agent


def _batch(rew, done):
    return Batch(np.zeros((1, 2)), np.zeros((1, 1)), np.array([rew]), np.zeros((1, 2)), np.array([done]))


def test_critic_target_takes_twin_minimum():
    y = critic_target(_batch(1.0, 0.0), _target_agent(), dataclasses.replace(SMALL, gamma=0.99),
                      noise=np.zeros((1, 1)))
    assert y[0] == pytest.approx(3.97, rel=1e-12)


def test_critic_target_terminal_and_undiscounted():
    agent = _target_agent()
    assert critic_target(_batch(1.0, 1.0), agent, SMALL, noise=np.zeros((1, 1)))[0] == 1.0
    assert critic_target(_batch(2.0, 0.0), agent, dataclasses.replace(SMALL, gamma=0.0),
                         noise=np.zeros((1, 1)))[0] == 2.0


def _filled_buffer(seed=0, n=64, obs_dim=4, act_dim=3):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(1000, obs_dim, act_dim, seed)
    for _ in range(n):
        buf.push(rng.normal(size=obs_dim), rng.uniform(-1, 1, act_dim), rng.normal(),
                 rng.normal(size=obs_dim), False)
    return buf


def test_actor_update_is_delayed():
    agent = Td3Agent(4, 3, SMALL, seed=2)
    buf = _filled_buffer()
    actor0, target0 = agent.actor.copy(), agent.actor_target.copy()
    train_step(agent, buf)
    assert nets_equal(agent.actor, actor0) and nets_equal(agent.actor_target, target0)
    assert not nets_equal(agent.critic1, Td3Agent(4, 3, SMALL, seed=2).critic1)
    train_step(agent, buf)
    assert not nets_equal(agent.actor, actor0)
    assert (agent.critic_updates, agent.actor_updates) == (2, 1)


def test_train_step_is_deterministic():
    diags = []
    for _ in range(2):
        agent = Td3Agent(4, 3, SMALL, seed=5)
        buf = _filled_buffer(seed=4)
        diags.append([train_step(agent, buf) for _ in range(4)])
    assert diags[0] == diags[1]


def test_train_step_needs_a_full_batch():
    with pytest.raises(ValueError):
        train_step(Td3Agent(4, 3, SMALL), _filled_buffer(n=3))


def test_preactivation_penalty_shrinks_actor_output():
    outs = []
    for c in (0.0, 10.0):
        hyper = dataclasses.replace(SMALL, preact_penalty=c, policy_delay=1, actor_lr=1e-2)
        agent = Td3Agent(4, 3, hyper, seed=3)
        buf = _filled_buffer(seed=1)
        for _ in range(50):
            train_step(agent, buf)
        _, cache = agent.actor.forward_cache(buf.obs[:64])
        outs.append(float(np.mean(Mlp.preactivation(cache) ** 2)))
    assert outs[1] < outs[0]


def test_replay_sampling_is_uniform():
    buf = ReplayBuffer(10, 1, 1, seed=0)
    for i in range(10):
        buf.push([i], [0.0], 0.0, [0.0], False)
    counts = np.bincount(buf.sample(100_000).obs[:, 0].astype(int), minlength=10)
    assert np.all(np.abs(counts / 10_000 - 1.0) < 0.05)


def test_replay_ring_overwrites_oldest():
    buf = ReplayBuffer(3, 1, 1)
    for i in range(5):
        buf.push([i], [0.0], float(i), [0.0], False)
    assert len(buf) == 3 and sorted(buf.rew.tolist()) == [2.0, 3.0, 4.0]
    with pytest.raises(FloatingPointError):
        buf.push([np.nan], [0.0], 0.0, [0.0], False)


def _bess_env(days=2, seed=0, coupling="persistence"):
    trace = synth_trace(days, seed)
    return BessEnv(trace, SystemConfig(), norm=NormStats.from_trace(trace), coupling=coupling)


def test_zero_episodes_leave_agent_unchanged():
    agent = Td3Agent(4, 3, SMALL, seed=0)
    before = agent.snapshot()
    _, curve = train(_bess_env(), agent, 0)
    assert curve == [] and all(nets_equal(before[k], getattr(agent, k)) for k in before)


def test_training_curve_is_reproducible():
    curves = [train(_bess_env(), Td3Agent(4, 3, SMALL, seed=3), 2, seed=3)[1] for _ in range(2)]
    assert curves[0] == curves[1] and len(curves[0]) == 2


def test_best_snapshot_is_restored():
    agent = Td3Agent(4, 3, SMALL, seed=1)
    scores = iter([1.0, 5.0, 2.0, 5.0])
    actors = {}
    train(_bess_env(), agent, 4, seed=1, validate=lambda: next(scores),
          on_episode=lambda log: actors.__setitem__(log.episode, agent.actor.copy()))
    assert nets_equal(agent.actor, actors[1])
    assert not nets_equal(agent.actor, actors[3])


def test_joint_training_logs_both_agents():
    trace = synth_trace(2, 1)
    norm = NormStats.from_trace(trace)
    cfg = SystemConfig()
    wind = Td3Agent(2, 1, SMALL, seed=1)
    bess = Td3Agent(4, 3, SMALL, seed=2)
    logs = []
    wc, bc = train_joint(WindEnv(trace, cfg, norm=norm), BessEnv(trace, cfg, norm=norm), wind, bess, 2,
                         on_episode=logs.append, validate=lambda: (0.0, 0.0))
    assert len(wc) == len(bc) == 2
    assert [log.agent for log in logs] == ["wind", "bess", "wind", "bess"]
    assert all(log.score == 0.0 for log in logs)


def test_agent_checkpoint_round_trip(tmp_path):
    agent = Td3Agent(4, 3, SMALL, seed=4)
    agent.save(tmp_path / "a")
    back = Td3Agent.load(tmp_path / "a", 4, 3)
    assert back.hyper == agent.hyper
    assert all(nets_equal(getattr(agent, k), getattr(back, k)) for k in Td3Agent._NETS)
    with pytest.raises(ValueError):
        Td3Agent.load(tmp_path / "a", expected_obs_dim=2)


def test_rollout_counts_decisions():
    trace = synth_trace(2, 0)
    led = rollout(trace, SystemConfig(), Td3Agent(4, 3, SMALL), Td3Agent(2, 1, SMALL),
                  NormStats.from_trace(trace))
    assert led.meta["decisions"] == len(led.steps) == 576
    assert all("reward_wind" in s.extras for s in led.steps)
    with pytest.raises(ValueError):
        rollout(trace, SystemConfig(), Td3Agent(4, 3, SMALL))


@pytest.mark.slow
def test_return_improves_on_sinusoidal_trace():
    trace = synth_trace(30, 0)
    env = BessEnv(trace, SystemConfig(), norm=NormStats.from_trace(trace), coupling="persistence")
    _, curve = train(env, Td3Agent(4, 3, Td3Hyper(), seed=0), 30, seed=0)
    assert np.mean(curve[-10:]) > np.mean(curve[:10])
