"""Episodic wind-farm and battery MDPs driven by a market trace.

One episode is one day of 288 intervals. The observation handed to the
agent before interval ``t`` describes interval ``t-1``; on the first step of
an episode the episode's own first tick plays that role.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    BessAction,
    BessMode,
    MarketTick,
    StepLedger,
    SystemConfig,
    WindAction,
    clamp_feasible,
    curtailed_power,
    settle_step,
    settle_wind,
)
from .data import INTERVALS_PER_DAY, NormStats, Trace

COUPLINGS = ("policy", "persistence", "perfect")


@dataclass(frozen=True)
class WindObservation:
    prev_wind_actual: float
    prev_price: float

    def vector(self, norm: NormStats) -> np.ndarray:
        return np.array([norm.wind(self.prev_wind_actual), norm.price(self.prev_price)])


@dataclass(frozen=True)
class BessObservation:
    prev_energy: float
    curtail_freq: float
    prev_wind_actual: float
    prev_price: float

    def vector(self, norm: NormStats, cfg: SystemConfig) -> np.ndarray:
        mid = 0.5 * (cfg.e_max + cfg.e_min)
        half = 0.5 * (cfg.e_max - cfg.e_min)
        return np.array([
            (self.prev_energy - mid) / half,
            2.0 * self.curtail_freq - 1.0,
            norm.wind(self.prev_wind_actual),
            norm.price(self.prev_price),
        ])


@dataclass(frozen=True)
class BessState:
    energy: float
    ema_price: float
    curtail_window: tuple[bool, ...]


@dataclass
class StepResult:
    observation: Union[WindObservation, BessObservation]
    reward: float
    done: bool
    ledger: StepLedger


def update_ema(prev_ema: float, price: float, tau: float) -> float:
    return tau * prev_ema + (1.0 - tau) * price


def curtail_frequency(window: Sequence[bool]) -> float:
    return sum(1 for w in window if w) / len(window)


def _sgn(x: float) -> float:
    return 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)


def wind_reward(action: WindAction, tick: MarketTick, cfg: SystemConfig) -> float:
    a = action.availability / cfg.p_max_wind
    return -tick.spot_price * abs(a * cfg.p_max_wind - tick.wind_actual)


def arbitrage_reward(action: BessAction, price: float, ema: float, cfg: SystemConfig) -> float:
    """Buy-below-average / sell-above-average shaping reward.

    Positive for charging under the moving average or discharging above it,
    negative for the reverse, zero when price equals the average.
    """
    if cfg.p_max_bess == 0:
        return 0.0
    a_spot = action.p_spot / cfg.p_max_bess
    i_ch = _sgn(ema - price)
    i_dch = _sgn(price - ema)
    mode = action.mode
    return a_spot * abs(price - ema) * (i_ch * mode.v_ch / cfg.eta_ch + i_dch * mode.v_dch * cfg.eta_dch)


def curtailment_reward(action: BessAction, curtailed: float, freq: float, cfg: SystemConfig) -> float:
    # draw normalized by the battery rating, surplus by the wind rating
    if cfg.p_max_bess == 0 or action.mode is BessMode.DISCHARGE:
        return 0.0
    a_wc = action.p_curtail / cfg.p_max_bess
    return cfg.beta_incentive * min(a_wc, curtailed / cfg.p_max_wind) * freq / cfg.eta_ch


class _EpisodeCursor:
    def __init__(self, trace: Union[Trace, Sequence[MarketTick]], episode_len: int):
        self.ticks = tuple(trace.ticks if isinstance(trace, Trace) else trace)
        if episode_len < 1:
            raise ValueError("episode_len must be >= 1")
        self.episode_len = episode_len
        self.n_episodes = len(self.ticks) // episode_len
        self.start = 0
        self.t = 0
        self.done = True

    def begin(self, episode_index: int) -> None:
        if not (0 <= episode_index < self.n_episodes):
            raise IndexError(f"episode {episode_index} out of range [0, {self.n_episodes})")
        self.start = episode_index * self.episode_len
        self.t = 0
        self.done = False

    def tick(self, offset: int = 0) -> MarketTick:
        return self.ticks[self.start + self.t + offset]

    def prev_tick(self) -> MarketTick:
        return self.tick(-1) if self.t > 0 else self.tick()

    def advance(self) -> bool:
        self.t += 1
        self.done = self.t >= self.episode_len
        return self.done


class WindEnv:
    """Wind-farm bidding MDP: observe last interval, bid availability, get penalized for deviation."""

    def __init__(self, trace, cfg: Optional[SystemConfig] = None,
                 episode_len: int = INTERVALS_PER_DAY, norm: Optional[NormStats] = None):
        self.cfg = cfg or SystemConfig()
        self.norm = norm or NormStats.identity()
        self._cur = _EpisodeCursor(trace, episode_len)

    @property
    def n_episodes(self) -> int:
        return self._cur.n_episodes

    @property
    def done(self) -> bool:
        return self._cur.done

    def current_tick(self) -> MarketTick:
        return self._cur.tick()

    def _observe(self) -> WindObservation:
        prev = self._cur.prev_tick()
        return WindObservation(prev.wind_actual, prev.spot_price)

    def reset(self, episode_index: int) -> WindObservation:
        self._cur.begin(episode_index)
        return self._observe()

    def step(self, action: WindAction) -> StepResult:
        if self._cur.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        cfg = self.cfg
        tick = self._cur.tick()
        bid = min(max(action.availability, 0.0), cfg.p_max_wind)
        clipped = WindAction(bid)
        dispatched, revenue = settle_wind(bid, tick, cfg)
        reward = wind_reward(clipped, tick, cfg)
        ledger = StepLedger(
            wind_dispatched=dispatched,
            wind_curtailed=curtailed_power(tick.wind_actual, bid),
            wind_revenue=revenue,
            t_index=tick.t_index,
            spot_price=tick.spot_price,
            wind_actual=tick.wind_actual,
            wind_bid=bid,
            reward=reward,
            dt_hours=cfg.dt_hours,
        )
        done = self._cur.advance()
        obs = WindObservation(tick.wind_actual, tick.spot_price)
        return StepResult(obs, reward, done, ledger)


class BessEnv:
    """Battery bidding MDP with arbitrage and curtailment-absorption rewards.

    ``coupling`` decides where the wind bid (and so the curtailment signal)
    comes from when ``step`` is not handed one: ``"persistence"`` bids the
    previous interval's actual output, ``"perfect"`` bids the actual output
    (no curtailment ever), and ``"policy"`` requires the caller to pass the
    wind agent's bid.
    """

    def __init__(self, trace, cfg: Optional[SystemConfig] = None,
                 episode_len: int = INTERVALS_PER_DAY, norm: Optional[NormStats] = None,
                 initial_energy: Optional[float] = None, coupling: str = "policy"):
        self.cfg = cfg or SystemConfig()
        self.norm = norm or NormStats.identity()
        if coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}, got {coupling!r}")
        self.coupling = coupling
        e0 = self.cfg.e_min if initial_energy is None else float(initial_energy)
        if not (self.cfg.e_min <= e0 <= self.cfg.e_max):
            raise ValueError(f"initial energy {e0} outside [{self.cfg.e_min}, {self.cfg.e_max}]")
        self.initial_energy = e0
        self._cur = _EpisodeCursor(trace, episode_len)
        self.energy = e0
        self.ema = 0.0
        self.window: deque = deque([False] * self.cfg.window_len, maxlen=self.cfg.window_len)

    @property
    def n_episodes(self) -> int:
        return self._cur.n_episodes

    @property
    def done(self) -> bool:
        return self._cur.done

    @property
    def state(self) -> BessState:
        return BessState(self.energy, self.ema, tuple(self.window))

    def set_state(self, state: BessState) -> None:
        cfg = self.cfg
        if len(state.curtail_window) != cfg.window_len:
            raise ValueError("curtail_window must have length window_len")
        if not (cfg.e_min <= state.energy <= cfg.e_max):
            raise ValueError("energy outside limits")
        self.energy = state.energy
        self.ema = state.ema_price
        self.window = deque(state.curtail_window, maxlen=cfg.window_len)

    def current_tick(self) -> MarketTick:
        return self._cur.tick()

    def observe(self) -> BessObservation:
        prev = self._cur.prev_tick()
        return BessObservation(self.energy, curtail_frequency(self.window),
                               prev.wind_actual, prev.spot_price)

    def reset(self, episode_index: int) -> BessObservation:
        self._cur.begin(episode_index)
        self.energy = self.initial_energy
        self.ema = self._cur.tick().spot_price
        self.window = deque([False] * self.cfg.window_len, maxlen=self.cfg.window_len)
        return self.observe()

    def default_wind_bid(self) -> float:
        tick = self._cur.tick()
        if self.coupling == "perfect":
            return tick.wind_actual
        if self.coupling == "persistence":
            return self._cur.prev_tick().wind_actual
        raise ValueError("coupling='policy' needs the wind agent's bid passed to step()")

    def step(self, raw_action: BessAction, wind_bid: Optional[float] = None) -> StepResult:
        if self._cur.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        cfg = self.cfg
        tick = self._cur.tick()
        bid = self.default_wind_bid() if wind_bid is None else wind_bid
        bid = min(max(bid, 0.0), cfg.p_max_wind)
        curtailed = curtailed_power(tick.wind_actual, bid)

        action = clamp_feasible(raw_action, self.energy, curtailed, cfg)
        self.ema = update_ema(self.ema, tick.spot_price, cfg.tau_ema)
        self.window.append(curtailed > 0)
        freq = curtail_frequency(self.window)

        r_spot = arbitrage_reward(action, tick.spot_price, self.ema, cfg)
        r_wc = curtailment_reward(action, curtailed, freq, cfg)
        reward = r_spot + r_wc

        ledger = settle_step(action, bid, tick, self.energy, cfg)
        ledger.curtail_freq = freq
        ledger.reward = reward
        ledger.extras = {"reward_arbitrage": r_spot, "reward_curtailment": r_wc}
        self.energy = ledger.energy

        done = self._cur.advance()
        obs = BessObservation(self.energy, freq, tick.wind_actual, tick.spot_price)
        return StepResult(obs, reward, done, ledger)
