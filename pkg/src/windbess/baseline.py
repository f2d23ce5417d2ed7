"""Predict-and-optimize benchmark: naive forecasts plus a state-of-charge DP.

The optimizer is an exact backward induction over a lattice. Stored energy
lives on ``soc_steps`` evenly spaced points; battery powers are integer
multiples of the power that moves the battery by one lattice step in one
interval, so every planned transition lands on the lattice.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    BessAction,
    BessMode,
    MarketTick,
    SystemConfig,
    WindAction,
    clamp_feasible,
    curtailed_power,
    degradation_step,
    energy_delta,
    settle_bess,
    settle_step,
    settle_wind,
)
from .data import Trace
from .metrics import EpisodeLedger

FORECAST_METHODS = ("persistence", "ema_drift", "perfect")
_EPS = 1e-9


@dataclass(frozen=True)
class Forecast:
    """Predicted price and wind paths over a planning horizon.

    ``availability`` is the wind bid the plan assumes; it defaults to the
    wind forecast itself, in which case no curtailment is planned for.
    """

    price: np.ndarray
    wind: np.ndarray
    availability: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "price", np.asarray(self.price, dtype=float).reshape(-1))
        object.__setattr__(self, "wind", np.asarray(self.wind, dtype=float).reshape(-1))
        if self.availability is not None:
            object.__setattr__(self, "availability", np.asarray(self.availability, dtype=float).reshape(-1))
        if len(self.price) != len(self.wind):
            raise ValueError("price and wind paths differ in length")
        if self.availability is not None and len(self.availability) != len(self.price):
            raise ValueError("availability path differs in length")

    @property
    def horizon(self) -> int:
        return len(self.price)

    def bid(self, t: int) -> float:
        return float(self.wind[t] if self.availability is None else self.availability[t])

    def planned_curtailment(self, t: int) -> float:
        return curtailed_power(float(self.wind[t]), self.bid(t))


@dataclass
class DpPlan:
    bess_actions: list[BessAction] = field(default_factory=list)
    wind_actions: list[WindAction] = field(default_factory=list)
    objective: float = 0.0
    energies: list[float] = field(default_factory=list)


def forecast(history: Sequence[MarketTick], horizon: int, method: str = "persistence",
             tau: float = 0.9, window: int = 288) -> Forecast:
    """Naive point forecast from past ticks.

    ``persistence`` repeats the last observation; ``ema_drift`` repeats the
    exponential moving average (smoothing ``tau``) of the last ``window``
    ticks, seeded with the oldest tick of that window.
    """
    if len(history) == 0:
        raise ValueError("forecast needs a non-empty history")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if method == "persistence":
        p, w = history[-1].spot_price, history[-1].wind_actual
    elif method == "ema_drift":
        recent = history[-window:]
        p, w = recent[0].spot_price, recent[0].wind_actual
        for tick in recent[1:]:
            p = tau * p + (1.0 - tau) * tick.spot_price
            w = tau * w + (1.0 - tau) * tick.wind_actual
    else:
        raise ValueError(f"unknown forecast method {method!r}")
    return Forecast(np.full(horizon, p), np.full(horizon, w))


def perfect_forecast(ticks: Sequence[MarketTick]) -> Forecast:
    return Forecast([t.spot_price for t in ticks], [t.wind_actual for t in ticks])


@dataclass(frozen=True)
class Lattice:
    e0: float
    e_step: float
    p_step: float
    k_max: int
    j_lo: int
    j_hi: int

    @property
    def n(self) -> int:
        return self.j_hi - self.j_lo + 1

    def energy(self, j: int) -> float:
        return self.e0 + j * self.e_step


def make_lattice(e0: float, cfg: SystemConfig, soc_steps: int) -> Lattice:
    """Energy lattice through ``e0`` with spacing ``(e_max - e_min)/(soc_steps - 1)``."""
    if soc_steps < 2:
        raise ValueError("soc_steps must be >= 2")
    if not (cfg.e_min <= e0 <= cfg.e_max):
        raise ValueError(f"initial energy {e0} outside [{cfg.e_min}, {cfg.e_max}]")
    e_step = (cfg.e_max - cfg.e_min) / (soc_steps - 1)
    p_step = e_step / cfg.dt_hours
    k_max = int(math.floor(cfg.p_max_bess / p_step + _EPS))
    while k_max > 0 and k_max * p_step > cfg.p_max_bess:
        k_max -= 1
    j_lo = -int(math.floor((e0 - cfg.e_min) / e_step + _EPS))
    j_hi = int(math.floor((cfg.e_max - e0) / e_step + _EPS))
    while j_lo < 0 and e0 + j_lo * e_step < cfg.e_min:
        j_lo += 1
    while j_hi > 0 and e0 + j_hi * e_step > cfg.e_max:
        j_hi -= 1
    return Lattice(e0, e_step, p_step, k_max, j_lo, j_hi)


def lattice_actions(lat: Lattice, planned_curtailment: float) -> list[tuple[int, BessAction]]:
    """All lattice actions for one interval, paired with their lattice move.

    Order matters for tie-breaking: idle, then discharge, then charge.
    """
    out = [(0, BessAction(BessMode.IDLE, 0.0, 0.0))]
    for k in range(1, lat.k_max + 1):
        out.append((-k, BessAction(BessMode.DISCHARGE, k * lat.p_step, 0.0)))
    for total in range(0, lat.k_max + 1):
        for m in range(0, total + 1):
            if m * lat.p_step > planned_curtailment:
                break
            out.append((total, BessAction(BessMode.CHARGE, (total - m) * lat.p_step, m * lat.p_step)))
    return out


def step_value(action: BessAction, wind_bid: float, tick: MarketTick, cfg: SystemConfig) -> float:
    """Net one-interval contribution to the joint objective."""
    _, wind_rev = settle_wind(wind_bid, tick, cfg)
    return wind_rev + settle_bess(action, tick, cfg) - degradation_step(action, cfg)


def dp_optimize(fc: Forecast, e0: float, cfg: SystemConfig, soc_steps: int = 55) -> DpPlan:
    """Maximize the forecast-evaluated joint objective by backward induction.

    The wind bid is the wind forecast (or ``fc.availability``). Ties are
    broken towards idling, then towards the earliest action in
    :func:`lattice_actions` order.

    Raises:
        ValueError: ``e0`` outside the energy limits or ``soc_steps < 2``.
    """
    lat = make_lattice(e0, cfg, soc_steps)
    T = fc.horizon
    if T == 0:
        return DpPlan([], [], 0.0, [e0])
    n = lat.n
    moves = range(-lat.k_max, lat.k_max + 1)
    best_r = np.full((T, len(moves)), -np.inf)
    best_a: list[dict[int, BessAction]] = []
    for t in range(T):
        tick = MarketTick(t, float(fc.price[t]), float(fc.wind[t]))
        bid = fc.bid(t)
        chosen: dict[int, BessAction] = {}
        for dj, act in lattice_actions(lat, fc.planned_curtailment(t)):
            v = step_value(act, bid, tick, cfg)
            col = dj + lat.k_max
            if v > best_r[t, col]:
                best_r[t, col] = v
                chosen[dj] = act
        best_a.append(chosen)

    value = np.zeros(n)
    policy = np.zeros((T, n), dtype=int)
    order = [0] + [d for d in moves if d != 0]
    for t in range(T - 1, -1, -1):
        new = np.full(n, -np.inf)
        arg = np.zeros(n, dtype=int)
        for dj in order:
            r = best_r[t, dj + lat.k_max]
            if r == -np.inf:
                continue
            src = np.arange(n)
            dst = src + dj
            ok = (dst >= 0) & (dst < n)
            cand = np.full(n, -np.inf)
            cand[ok] = r + value[dst[ok]]
            better = cand > new
            new[better] = cand[better]
            arg[better] = dj
        value, policy[t] = new, arg

    j = -lat.j_lo
    plan = DpPlan(objective=float(value[j]), energies=[e0])
    e = e0
    for t in range(T):
        dj = int(policy[t, j])
        act = best_a[t][dj]
        plan.bess_actions.append(act)
        plan.wind_actions.append(WindAction(fc.bid(t)))
        e = e + energy_delta(act, fc.planned_curtailment(t), cfg)
        plan.energies.append(e)
        j += dj
    return plan


def execute(action: BessAction, wind_bid: float, tick: MarketTick, e_now: float, cfg: SystemConfig):
    """Settle a planned action against the true tick; returns (ledger, was_clamped)."""
    curtailed = curtailed_power(tick.wind_actual, wind_bid)
    safe = clamp_feasible(action, e_now, curtailed, cfg)
    ledger = settle_step(safe, wind_bid, tick, e_now, cfg)
    return ledger, safe != action


def rolling_run(trace, cfg: Optional[SystemConfig] = None, horizon: int = 12, soc_steps: int = 55,
                method: str = "persistence", e0: Optional[float] = None,
                episode_len: Optional[int] = None, label: str = "P&O") -> EpisodeLedger:
    """Receding-horizon simulation: forecast, optimize, execute the first action.

    Realized money and curtailment come from the true ticks. With
    ``episode_len`` set the battery restarts from ``e0`` at every episode
    boundary and plans never look past the end of the current episode.
    ``method="perfect"`` feeds the true future as the forecast.
    """
    cfg = cfg or SystemConfig()
    if method not in FORECAST_METHODS:
        raise ValueError(f"unknown forecast method {method!r}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    ticks = list(trace.ticks if isinstance(trace, Trace) else trace)
    if len(ticks) == 0:
        raise ValueError("empty trace")
    e_start = cfg.e_min if e0 is None else float(e0)
    ledger = EpisodeLedger(label=label)
    e = e_start
    clamped = 0
    t0 = time.perf_counter()
    for t, tick in enumerate(ticks):
        if episode_len and t % episode_len == 0:
            e = e_start
        ep_end = (t // episode_len + 1) * episode_len if episode_len else len(ticks)
        h = min(horizon, ep_end - t, len(ticks) - t)
        if method == "perfect":
            fc = perfect_forecast(ticks[t:t + h])
        else:
            # the very first interval has no past; it is forecast from itself
            history = ticks[max(0, t - 288):t] or [tick]
            fc = forecast(history, h, method, tau=cfg.tau_ema)
        plan = dp_optimize(fc, e, cfg, soc_steps)
        step, was_clamped = execute(plan.bess_actions[0], plan.wind_actions[0].availability, tick, e, cfg)
        clamped += was_clamped
        e = step.energy
        ledger.append(step)
    ledger.meta.update({"clamped_actions": clamped, "decisions": len(ticks),
                        "wall_seconds": time.perf_counter() - t0})
    return ledger


def perfect_foresight(trace, cfg: Optional[SystemConfig] = None, episode_len: int = 288,
                      soc_steps: int = 55, e0: Optional[float] = None,
                      label: str = "perfect-foresight") -> EpisodeLedger:
    """Per-episode DP on the true ticks: the upper benchmark for arbitrage."""
    cfg = cfg or SystemConfig()
    ticks = list(trace.ticks if isinstance(trace, Trace) else trace)
    e_start = cfg.e_min if e0 is None else float(e0)
    ledger = EpisodeLedger(label=label)
    for start in range(0, len(ticks) - episode_len + 1, episode_len):
        ep = ticks[start:start + episode_len]
        plan = dp_optimize(perfect_forecast(ep), e_start, cfg, soc_steps)
        e = e_start
        for act, wact, tick in zip(plan.bess_actions, plan.wind_actions, ep):
            step, _ = execute(act, wact.availability, tick, e, cfg)
            e = step.energy
            ledger.append(step)
    return ledger
