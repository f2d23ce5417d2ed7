"""TD3 (twin delayed DDPG) agents for the wind and battery MDPs."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import BessAction, BessMode, SystemConfig, WindAction
from .env import BessEnv, WindEnv
from .metrics import EpisodeLedger
from .nn import Adam, Mlp, soft_update

BESS_OBS_DIM, BESS_ACT_DIM = 4, 3
WIND_OBS_DIM, WIND_ACT_DIM = 2, 1


@dataclass(frozen=True)
class Td3Hyper:
    gamma: float = 0.99
    polyak: float = 0.005
    policy_delay: int = 2
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5
    exploration_noise_std: float = 0.1
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    warmup_steps: int = 2880
    hidden: tuple[int, ...] = (64, 64)
    reward_scale: float = 100.0
    preact_penalty: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.polyak < 1.0):
            raise ValueError("polyak must lie in (0, 1)")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if self.preact_penalty < 0:
            raise ValueError("preact_penalty must be >= 0")


@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer with a seeded uniform sampler."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, seed: int = 0):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.act = np.zeros((self.capacity, act_dim))
        self.rew = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.size = 0
        self.ptr = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def push(self, obs, act, rew: float, next_obs, done: bool) -> None:
        row = (np.asarray(obs, float), np.asarray(act, float), float(rew),
               np.asarray(next_obs, float), float(done))
        if not all(np.all(np.isfinite(x)) for x in row):
            raise FloatingPointError("non-finite transition")
        i = self.ptr
        self.obs[i], self.act[i], self.rew[i], self.next_obs[i], self.done[i] = row
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self.rng.integers(0, self.size, n)

    def sample(self, n: int) -> Batch:
        i = self.sample_indices(n)
        return Batch(self.obs[i], self.act[i], self.rew[i], self.next_obs[i], self.done[i])


class Td3Agent:
    def __init__(self, obs_dim: int, act_dim: int, hyper: Optional[Td3Hyper] = None, seed: int = 0):
        self.hyper = hyper or Td3Hyper()
        self.obs_dim, self.act_dim = obs_dim, act_dim
        init_rng, self.rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        h = list(self.hyper.hidden)
        self.actor = Mlp([obs_dim, *h, act_dim], "tanh", init_rng)
        self.critic1 = Mlp([obs_dim + act_dim, *h, 1], "identity", init_rng)
        self.critic2 = Mlp([obs_dim + act_dim, *h, 1], "identity", init_rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = Adam(self.actor, self.hyper.actor_lr)
        self.critic1_opt = Adam(self.critic1, self.hyper.critic_lr)
        self.critic2_opt = Adam(self.critic2, self.hyper.critic_lr)
        self.critic_updates = 0
        self.actor_updates = 0
        self.env_steps = 0

    def act(self, obs_vec, noise_std: float = 0.0) -> np.ndarray:
        if self.env_steps < self.hyper.warmup_steps and noise_std > 0:
            return self.rng.uniform(-1.0, 1.0, self.act_dim)
        return select_action(self.actor, obs_vec, noise_std, self.rng)

    _NETS = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")

    def snapshot(self) -> dict:
        return {name: getattr(self, name).copy() for name in self._NETS}

    def restore(self, snap: dict) -> None:
        for name in self._NETS:
            setattr(self, name, snap[name].copy())

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in self._NETS:
            getattr(self, name).save(d / f"{name}.mlp")
        meta = {"obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "critic_updates": self.critic_updates, "actor_updates": self.actor_updates,
                "hyper": asdict(self.hyper)}
        (d / "agent.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory, expected_obs_dim: Optional[int] = None,
             expected_act_dim: Optional[int] = None) -> "Td3Agent":
        d = Path(directory)
        if not (d / "agent.json").is_file():
            raise FileNotFoundError(f"no agent checkpoint in {d}")
        meta = json.loads((d / "agent.json").read_text())
        hyper = meta["hyper"]
        hyper["hidden"] = tuple(hyper["hidden"])
        agent = cls(meta["obs_dim"], meta["act_dim"], Td3Hyper(**hyper))
        for name in cls._NETS:
            setattr(agent, name, Mlp.load(d / f"{name}.mlp"))
        if agent.actor.sizes[0] != agent.obs_dim or agent.actor.sizes[-1] != agent.act_dim:
            raise ValueError(f"{d}: actor shape {agent.actor.sizes} disagrees with metadata")
        if expected_obs_dim is not None and agent.obs_dim != expected_obs_dim:
            raise ValueError(f"{d}: checkpoint observation width {agent.obs_dim}, need {expected_obs_dim}")
        if expected_act_dim is not None and agent.act_dim != expected_act_dim:
            raise ValueError(f"{d}: checkpoint action width {agent.act_dim}, need {expected_act_dim}")
        agent.critic_updates = meta["critic_updates"]
        agent.actor_updates = meta["actor_updates"]
        return agent


def decode_bess_action(raw, cfg: SystemConfig) -> BessAction:
    """Map a tanh-squashed 3-vector to a battery action.

    The first component picks the mode in three equal bands
    (discharge below -1/3, charge above 1/3), the other two scale the
    spot bid and the curtailment draw over ``[0, p_max_bess]``.
    """
    r = np.clip(np.asarray(raw, dtype=float), -1.0, 1.0)
    if r[0] < -1.0 / 3.0:
        mode = BessMode.DISCHARGE
    elif r[0] > 1.0 / 3.0:
        mode = BessMode.CHARGE
    else:
        mode = BessMode.IDLE
    p_spot = (r[1] + 1.0) / 2.0 * cfg.p_max_bess
    p_curtail = (r[2] + 1.0) / 2.0 * cfg.p_max_bess
    if mode is BessMode.DISCHARGE:
        p_curtail = 0.0
    return BessAction(mode, float(p_spot), float(p_curtail))


def decode_wind_action(raw, cfg: SystemConfig) -> WindAction:
    r = float(np.clip(np.asarray(raw, dtype=float).reshape(-1)[0], -1.0, 1.0))
    return WindAction((r + 1.0) / 2.0 * cfg.p_max_wind)


def select_action(actor: Mlp, obs_vec, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    a = actor.forward(obs_vec)
    if noise_std > 0:
        a = np.clip(a + rng.normal(0.0, noise_std, a.shape), -1.0, 1.0)
    return a


def _q(critic: Mlp, obs, act) -> np.ndarray:
    return critic.forward(np.concatenate([obs, act], axis=1))[:, 0]


def critic_target(batch: Batch, agent: Td3Agent, hyper: Td3Hyper,
                  rng: Optional[np.random.Generator] = None,
                  noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Clipped double-Q bootstrap target with target-policy smoothing.

    ``noise`` overrides the sampled smoothing noise (before clipping).
    """
    a_next = agent.actor_target.forward(batch.next_obs)
    if noise is None:
        rng = rng if rng is not None else agent.rng
        noise = rng.normal(0.0, hyper.target_noise_std, a_next.shape)
    noise = np.clip(noise, -hyper.target_noise_clip, hyper.target_noise_clip)
    a_next = np.clip(a_next + noise, -1.0, 1.0)
    q1 = _q(agent.critic1_target, batch.next_obs, a_next)
    q2 = _q(agent.critic2_target, batch.next_obs, a_next)
    return batch.rew + hyper.gamma * (1.0 - batch.done) * np.minimum(q1, q2)


def _critic_update(critic: Mlp, opt: Adam, x: np.ndarray, y: np.ndarray) -> float:
    q, cache = critic.forward_cache(x)
    err = q[:, 0] - y
    loss = float(np.mean(err ** 2))
    grads, _ = critic.backward(cache, (2.0 / len(y)) * err[:, None])
    opt.step(critic, grads)
    return loss


def train_step(agent: Td3Agent, buffer: ReplayBuffer, hyper: Optional[Td3Hyper] = None) -> dict:
    """One critic regression step, plus the delayed actor and target update."""
    hyper = hyper or agent.hyper
    if len(buffer) < hyper.batch_size:
        raise ValueError(f"buffer holds {len(buffer)} transitions, need {hyper.batch_size}")
    batch = buffer.sample(hyper.batch_size)
    y = critic_target(batch, agent, hyper)
    x = np.concatenate([batch.obs, batch.act], axis=1)
    loss1 = _critic_update(agent.critic1, agent.critic1_opt, x, y)
    loss2 = _critic_update(agent.critic2, agent.critic2_opt, x, y)
    agent.critic_updates += 1

    actor_loss = None
    if agent.critic_updates % hyper.policy_delay == 0:
        a, a_cache = agent.actor.forward_cache(batch.obs)
        q, q_cache = agent.critic1.forward_cache(np.concatenate([batch.obs, a], axis=1))
        # an L2 pull on the pre-tanh output keeps the actor out of saturation
        z = Mlp.preactivation(a_cache)
        c = hyper.preact_penalty
        actor_loss = float(-np.mean(q) + c * np.mean(np.sum(z * z, axis=1)))
        _, dx = agent.critic1.backward(q_cache, np.full_like(q, -1.0 / len(q)))
        dz = (2.0 * c / len(q)) * z if c > 0 else None
        grads, _ = agent.actor.backward(a_cache, dx[:, agent.obs_dim:], dz)
        agent.actor_opt.step(agent.actor, grads)
        agent.actor_updates += 1
        soft_update(agent.actor_target, agent.actor, hyper.polyak)
        soft_update(agent.critic1_target, agent.critic1, hyper.polyak)
        soft_update(agent.critic2_target, agent.critic2, hyper.polyak)

    for v in (loss1, loss2, actor_loss):
        if v is not None and not np.isfinite(v):
            raise FloatingPointError("TD3 loss diverged")
    return {"critic1_loss": loss1, "critic2_loss": loss2, "actor_loss": actor_loss,
            "critic_updates": agent.critic_updates, "actor_updates": agent.actor_updates}


@dataclass
class EpisodeLog:
    episode: int
    agent: str
    trace_episode: int
    ret: float
    critic_loss: Optional[float]
    actor_loss: Optional[float]
    score: Optional[float] = None

    def to_dict(self) -> dict:
        return {"episode": self.episode, "agent": self.agent, "trace_episode": self.trace_episode,
                "return": self.ret, "critic_loss": self.critic_loss, "actor_loss": self.actor_loss,
                "score": self.score}


class _BestKeeper:
    """Tracks the best-scoring snapshot of one agent.

    Scoring starts once the agent is past warmup; a score that only ties
    the best keeps the earlier snapshot.
    """

    def __init__(self, agent: Td3Agent, every: int):
        if every < 1:
            raise ValueError("validate_every must be >= 1")
        self.agent, self.every = agent, every
        self.best_score: Optional[float] = None
        self.best_episode: Optional[int] = None
        self._snap: Optional[dict] = None

    def due(self, episode: int) -> bool:
        return (episode + 1) % self.every == 0 and self.agent.env_steps >= self.agent.hyper.warmup_steps

    def offer(self, episode: int, score: float) -> None:
        score = float(score)
        if self.best_score is None or score > self.best_score:
            self.best_score, self.best_episode = score, episode
            self._snap = self.agent.snapshot()

    def finish(self) -> None:
        if self._snap is not None:
            self.agent.restore(self._snap)


@dataclass
class _Learner:
    name: str
    agent: Td3Agent
    buffer: ReplayBuffer
    ret: float = 0.0
    closs: list = field(default_factory=list)
    aloss: list = field(default_factory=list)

    def record(self, obs_vec, raw, reward, next_vec, done) -> None:
        hyper = self.agent.hyper
        self.buffer.push(obs_vec, raw, reward / hyper.reward_scale, next_vec, done)
        self.agent.env_steps += 1
        self.ret += reward
        if self.agent.env_steps >= hyper.warmup_steps and len(self.buffer) >= hyper.batch_size:
            d = train_step(self.agent, self.buffer)
            self.closs.append(0.5 * (d["critic1_loss"] + d["critic2_loss"]))
            if d["actor_loss"] is not None:
                self.aloss.append(d["actor_loss"])

    def flush(self, episode: int, trace_episode: int) -> EpisodeLog:
        log = EpisodeLog(episode, self.name, trace_episode, self.ret,
                         float(np.mean(self.closs)) if self.closs else None,
                         float(np.mean(self.aloss)) if self.aloss else None)
        self.ret, self.closs, self.aloss = 0.0, [], []
        return log


def _buffer_for(agent: Td3Agent, seed: int) -> ReplayBuffer:
    return ReplayBuffer(agent.hyper.buffer_capacity, agent.obs_dim, agent.act_dim, seed)


def train(env, agent: Td3Agent, episodes: int, hyper: Optional[Td3Hyper] = None, seed: int = 0,
          on_episode: Optional[Callable[[EpisodeLog], None]] = None,
          validate: Optional[Callable[[], float]] = None,
          validate_every: int = 1) -> tuple[Td3Agent, list[float]]:
    """Train one agent on a single environment (``WindEnv`` or ``BessEnv``).

    Trace episodes are visited in order and wrap around. A ``BessEnv``
    must not use ``coupling="policy"`` here; use :func:`train_joint`.

    With ``validate`` set, the callable scores the current networks every
    ``validate_every`` episodes after warmup (higher is better) and the
    agent ends up holding the best-scoring snapshot rather than the last.

    Returns the agent and its undiscounted per-episode return curve.
    """
    if hyper is not None and hyper != agent.hyper:
        agent.hyper = hyper
    if episodes > 0 and env.n_episodes < 1:
        raise ValueError("trace holds no complete episode")
    is_bess = isinstance(env, BessEnv)
    name = "bess" if is_bess else "wind"
    learner = _Learner(name, agent, _buffer_for(agent, seed))
    keeper = _BestKeeper(agent, validate_every)
    curve = []
    for ep in range(episodes):
        k = ep % env.n_episodes
        obs = env.reset(k)
        vec = obs.vector(env.norm, env.cfg) if is_bess else obs.vector(env.norm)
        done = False
        while not done:
            raw = agent.act(vec, agent.hyper.exploration_noise_std)
            if is_bess:
                res = env.step(decode_bess_action(raw, env.cfg))
                nxt = res.observation.vector(env.norm, env.cfg)
            else:
                res = env.step(decode_wind_action(raw, env.cfg))
                nxt = res.observation.vector(env.norm)
            learner.record(vec, raw, res.reward, nxt, res.done)
            vec, done = nxt, res.done
        log = learner.flush(ep, k)
        if validate is not None and keeper.due(ep):
            log.score = float(validate())
            keeper.offer(ep, log.score)
        curve.append(log.ret)
        if on_episode:
            on_episode(log)
    keeper.finish()
    return agent, curve


def train_joint(wind_env: WindEnv, bess_env: BessEnv, wind_agent: Td3Agent, bess_agent: Td3Agent,
                episodes: int, seed: int = 0,
                on_episode: Optional[Callable[[EpisodeLog], None]] = None,
                validate: Optional[Callable[[], tuple[float, float]]] = None,
                validate_every: int = 1) -> tuple[list[float], list[float]]:
    """Train both agents in lockstep on the same trace.

    With ``coupling="policy"`` the battery sees the curtailment produced by
    the wind agent's current (exploring) bid; otherwise the battery env's own
    coupling rule applies and the two learners only share the clock.
    ``validate`` works as in :func:`train` but returns a ``(wind, bess)``
    score pair; each agent keeps its own best snapshot.
    """
    if episodes > 0 and min(wind_env.n_episodes, bess_env.n_episodes) < 1:
        raise ValueError("trace holds no complete episode")
    buf_seeds = np.random.SeedSequence(seed).generate_state(2)
    wl = _Learner("wind", wind_agent, _buffer_for(wind_agent, int(buf_seeds[0])))
    bl = _Learner("bess", bess_agent, _buffer_for(bess_agent, int(buf_seeds[1])))
    keepers = (_BestKeeper(wind_agent, validate_every), _BestKeeper(bess_agent, validate_every))
    wind_curve, bess_curve = [], []
    n = min(wind_env.n_episodes, bess_env.n_episodes)
    for ep in range(episodes):
        k = ep % n
        wv = wind_env.reset(k).vector(wind_env.norm)
        bv = bess_env.reset(k).vector(bess_env.norm, bess_env.cfg)
        done = False
        while not done:
            wraw = wind_agent.act(wv, wind_agent.hyper.exploration_noise_std)
            wres = wind_env.step(decode_wind_action(wraw, wind_env.cfg))
            bid = wres.ledger.wind_bid if bess_env.coupling == "policy" else None
            braw = bess_agent.act(bv, bess_agent.hyper.exploration_noise_std)
            bres = bess_env.step(decode_bess_action(braw, bess_env.cfg), wind_bid=bid)
            wn = wres.observation.vector(wind_env.norm)
            bn = bres.observation.vector(bess_env.norm, bess_env.cfg)
            wl.record(wv, wraw, wres.reward, wn, wres.done)
            bl.record(bv, braw, bres.reward, bn, bres.done)
            wv, bv, done = wn, bn, bres.done
        scores: tuple = (None, None)
        if validate is not None and any(kp.due(ep) for kp in keepers):
            scores = tuple(float(v) for v in validate())
        for learner, curve, keeper, score in zip((wl, bl), (wind_curve, bess_curve), keepers, scores):
            log = learner.flush(ep, k)
            if score is not None and keeper.due(ep):
                log.score = score
                keeper.offer(ep, score)
            curve.append(log.ret)
            if on_episode:
                on_episode(log)
    for keeper in keepers:
        keeper.finish()
    return wind_curve, bess_curve


def rollout(trace, cfg: SystemConfig, bess_agent: Td3Agent, wind_agent: Optional[Td3Agent] = None,
            norm=None, coupling: str = "policy", episode_len: int = 288,
            initial_energy: Optional[float] = None, label: str = "JointDRL"):
    """Noise-free evaluation of trained policies, one trace episode after another.

    Returns the joint ledger: battery env steps carry the wind settlement of
    the bid in force and, with a wind agent, its reward under
    ``extras["reward_wind"]``. ``meta`` holds the decision count and the
    wall-clock seconds spent choosing actions.
    """
    if coupling == "policy" and wind_agent is None:
        raise ValueError("coupling='policy' needs a wind agent")
    wind_env = WindEnv(trace, cfg, episode_len, norm)
    bess_env = BessEnv(trace, cfg, episode_len, norm, initial_energy, coupling)
    if bess_env.n_episodes < 1:
        raise ValueError("evaluation trace holds no complete episode")
    ledger = EpisodeLedger(label=label)
    decide = 0.0
    decisions = 0
    for k in range(bess_env.n_episodes):
        bobs = bess_env.reset(k)
        wobs = wind_env.reset(k)
        done = False
        while not done:
            t0 = time.perf_counter()
            bid = None
            if wind_agent is not None:
                wraw = wind_agent.actor.forward(wobs.vector(wind_env.norm))
                wact = decode_wind_action(wraw, cfg)
            braw = bess_agent.actor.forward(bobs.vector(bess_env.norm, cfg))
            bact = decode_bess_action(braw, cfg)
            decide += time.perf_counter() - t0
            decisions += 1
            wres = None
            if wind_agent is not None:
                wres = wind_env.step(wact)
                wobs = wres.observation
                if coupling == "policy":
                    bid = wres.ledger.wind_bid
            res = bess_env.step(bact, wind_bid=bid)
            if wres is not None:
                res.ledger.extras["reward_wind"] = wres.reward
            ledger.append(res.ledger)
            bobs, done = res.observation, res.done
    ledger.meta.update({"decisions": decisions, "decision_seconds": decide})
    return ledger
