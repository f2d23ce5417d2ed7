"""Settlement and physics of a single 5-minute dispatch interval.

Everything here is a pure function of value inputs. Money is in AU$, power
in MW, energy in MWh and prices in AU$/MWh.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class SystemConfig:
    """Physical and market parameters of the co-located wind-battery plant.

    Defaults are the initialized parameters of the reference study
    (10 MWh battery kept between 5% and 95% state of charge).
    """

    dt_hours: float = 5.0 / 60.0
    lambda_penalty: float = 1.5
    eta_ch: float = 0.95
    eta_dch: float = 0.95
    c_degradation: float = 1.0
    p_max_wind: float = 67.0
    p_max_bess: float = 10.0
    e_min: float = 0.5
    e_max: float = 9.5
    window_len: int = 10
    tau_ema: float = 0.9
    beta_incentive: float = 10.0
    gamma_discount: float = 0.99

    def __post_init__(self):
        if not (0.0 < self.e_min < self.e_max):
            raise ValueError(f"need 0 < e_min < e_max, got {self.e_min}, {self.e_max}")
        if not (0.0 < self.eta_ch <= 1.0 and 0.0 < self.eta_dch <= 1.0):
            raise ValueError("efficiencies must lie in (0, 1]")
        if self.dt_hours <= 0:
            raise ValueError("dt_hours must be positive")
        if int(self.window_len) != self.window_len or self.window_len < 1:
            raise ValueError("window_len must be an integer >= 1")
        if not (0.0 <= self.tau_ema < 1.0):
            raise ValueError("tau_ema must lie in [0, 1)")
        if not (0.0 < self.gamma_discount <= 1.0):
            raise ValueError("gamma_discount must lie in (0, 1]")
        if self.p_max_wind <= 0 or self.p_max_bess < 0:
            raise ValueError("power ratings must be non-negative (wind strictly positive)")
        if self.lambda_penalty < 0 or self.c_degradation < 0 or self.beta_incentive < 0:
            raise ValueError("penalty, degradation and incentive coefficients must be >= 0")

    def with_overrides(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class MarketTick:
    """Exogenous observation of one dispatch interval."""

    t_index: int
    spot_price: float
    wind_actual: float


@dataclass(frozen=True)
class WindAction:
    availability: float


class BessMode(enum.Enum):
    CHARGE = "charge"
    DISCHARGE = "discharge"
    IDLE = "idle"

    @property
    def v_ch(self) -> int:
        return 1 if self is BessMode.CHARGE else 0

    @property
    def v_dch(self) -> int:
        return 1 if self is BessMode.DISCHARGE else 0


@dataclass(frozen=True)
class BessAction:
    """Battery decision: operating mode, spot-market bid and curtailment draw (MW)."""

    mode: BessMode
    p_spot: float = 0.0
    p_curtail: float = 0.0


@dataclass
class StepLedger:
    """Settlement record of one interval.

    The first seven fields are the settlement quantities proper; the rest is
    context kept so that reports can be built from ledgers alone.
    """

    wind_dispatched: float = 0.0
    wind_curtailed: float = 0.0
    wind_revenue: float = 0.0
    bess_revenue: float = 0.0
    degradation_cost: float = 0.0
    energy_delta: float = 0.0
    absorbed_curtailment: float = 0.0
    t_index: int = 0
    spot_price: float = 0.0
    wind_actual: float = 0.0
    wind_bid: float = 0.0
    mode: str = BessMode.IDLE.value
    p_spot: float = 0.0
    p_curtail: float = 0.0
    energy: float = 0.0
    curtail_freq: float = 0.0
    spot_charged: float = 0.0
    reward: float = 0.0
    dt_hours: float = 5.0 / 60.0
    extras: dict = field(default_factory=dict)


def settle_wind(forecast: float, tick: MarketTick, cfg: SystemConfig) -> tuple[float, float]:
    """Dispatched power and spot revenue of the wind farm for one interval.

    The deviation penalty applies to both over- and under-forecast.
    """
    actual = tick.wind_actual
    dispatched = min(actual, forecast)
    deviation = abs(actual - forecast)
    revenue = cfg.dt_hours * tick.spot_price * (dispatched - cfg.lambda_penalty * deviation)
    return dispatched, revenue


def curtailed_power(actual: float, forecast: float) -> float:
    """Wind surplus above the dispatch target (zero unless actual > forecast)."""
    return actual - forecast if actual > forecast else 0.0


def settle_bess(action: BessAction, tick: MarketTick, cfg: SystemConfig) -> float:
    # curtailment draw is free onsite energy and never reaches the market
    factor = action.mode.v_dch * cfg.eta_dch - action.mode.v_ch / cfg.eta_ch
    return cfg.dt_hours * tick.spot_price * action.p_spot * factor


def degradation_step(action: BessAction, cfg: SystemConfig) -> float:
    if action.mode is not BessMode.DISCHARGE:
        return 0.0
    return cfg.c_degradation * cfg.dt_hours * action.p_spot


def energy_delta(action: BessAction, curtailed: float, cfg: SystemConfig) -> float:
    """Stored-energy change in MWh.

    Charging efficiency is not applied here; it only enters the money side.
    """
    sign = action.mode.v_ch - action.mode.v_dch
    absorbed = min(action.p_curtail, curtailed) if action.mode is not BessMode.DISCHARGE else 0.0
    return cfg.dt_hours * (sign * action.p_spot + absorbed)


def absorbed_energy(action: BessAction, curtailed: float, cfg: SystemConfig) -> float:
    if action.mode is BessMode.DISCHARGE:
        return 0.0
    return cfg.dt_hours * min(action.p_curtail, curtailed)


def _energy_ok(e_now: float, action: BessAction, curtailed: float, cfg: SystemConfig) -> bool:
    e_next = e_now + energy_delta(action, curtailed, cfg)
    return cfg.e_min <= e_next <= cfg.e_max


def _shrink_until(value: float, ok, tiny: float) -> float:
    # walk a float down towards zero until ok(value) holds; covers rounding residue
    step = tiny
    while value > 0.0 and not ok(value):
        value = max(0.0, value - step)
        step *= 2.0
    return value


def clamp_feasible(raw: BessAction, e_now: float, curtailed: float, cfg: SystemConfig) -> BessAction:
    """Project a raw battery action onto the feasible set.

    Order: mode rules, then power ratings, then energy limits. When an energy
    limit binds the spot bid is cut before the curtailment draw. The result
    is a fixed point: clamping it again returns it unchanged.

    Raises:
        ValueError: if ``e_now`` lies outside ``[e_min, e_max]`` or a power is NaN.
    """
    if not (cfg.e_min <= e_now <= cfg.e_max):
        raise ValueError(f"stored energy {e_now} outside [{cfg.e_min}, {cfg.e_max}]")
    if math.isnan(raw.p_spot) or math.isnan(raw.p_curtail):
        raise ValueError("NaN power in raw action")
    curtailed = max(0.0, curtailed)
    mode = raw.mode
    p_max = cfg.p_max_bess

    if mode is BessMode.IDLE:
        return BessAction(BessMode.IDLE, 0.0, 0.0)

    p_spot = float(min(max(raw.p_spot, 0.0), p_max))
    p_curtail = 0.0 if mode is BessMode.DISCHARGE else float(min(max(raw.p_curtail, 0.0), p_max))

    if p_spot + p_curtail > p_max:
        p_spot = max(0.0, p_max - p_curtail)
        p_spot = _shrink_until(p_spot, lambda p: p + p_curtail <= p_max, float(np.spacing(p_max)))

    tiny = float(np.spacing(cfg.e_max)) / cfg.dt_hours
    if mode is BessMode.DISCHARGE:
        if not _energy_ok(e_now, BessAction(mode, p_spot, 0.0), curtailed, cfg):
            p_spot = min(p_spot, max(0.0, (e_now - cfg.e_min) / cfg.dt_hours))
            p_spot = _shrink_until(
                p_spot, lambda p: _energy_ok(e_now, BessAction(mode, p, 0.0), curtailed, cfg), tiny)
        return BessAction(mode, p_spot, 0.0)

    if not _energy_ok(e_now, BessAction(mode, p_spot, p_curtail), curtailed, cfg):
        headroom = max(0.0, (cfg.e_max - e_now) / cfg.dt_hours)
        absorbed = min(p_curtail, curtailed)
        if absorbed <= headroom:
            p_spot = min(p_spot, headroom - absorbed)
        else:
            p_spot = 0.0
            p_curtail = headroom
        p_spot = _shrink_until(
            p_spot, lambda p: _energy_ok(e_now, BessAction(mode, p, p_curtail), curtailed, cfg), tiny)
        if p_spot == 0.0:
            p_curtail = _shrink_until(
                p_curtail, lambda p: _energy_ok(e_now, BessAction(mode, 0.0, p), curtailed, cfg), tiny)
    return BessAction(mode, p_spot, p_curtail)


def settle_step(
    action: BessAction,
    wind_bid: float,
    tick: MarketTick,
    e_now: float,
    cfg: SystemConfig,
) -> StepLedger:
    """Settle an already-clamped battery action and a wind bid against one tick."""
    dispatched, wind_rev = settle_wind(wind_bid, tick, cfg)
    curtailed = curtailed_power(tick.wind_actual, wind_bid)
    de = energy_delta(action, curtailed, cfg)
    return StepLedger(
        wind_dispatched=dispatched,
        wind_curtailed=curtailed,
        wind_revenue=wind_rev,
        bess_revenue=settle_bess(action, tick, cfg),
        degradation_cost=degradation_step(action, cfg),
        energy_delta=de,
        absorbed_curtailment=absorbed_energy(action, curtailed, cfg),
        t_index=tick.t_index,
        spot_price=tick.spot_price,
        wind_actual=tick.wind_actual,
        wind_bid=wind_bid,
        mode=action.mode.value,
        p_spot=action.p_spot,
        p_curtail=action.p_curtail,
        energy=e_now + de,
        spot_charged=cfg.dt_hours * action.p_spot if action.mode is BessMode.CHARGE else 0.0,
        dt_hours=cfg.dt_hours,
    )


def objective_total(ledgers: Iterable[StepLedger]) -> tuple[float, float, float, float]:
    """Wind revenue, battery revenue, degradation cost and their net total."""
    ledgers = list(ledgers)
    r_wind = math.fsum(s.wind_revenue for s in ledgers)
    r_bess = math.fsum(s.bess_revenue for s in ledgers)
    c_deg = math.fsum(s.degradation_cost for s in ledgers)
    return r_wind, r_bess, c_deg, r_wind + r_bess - c_deg
