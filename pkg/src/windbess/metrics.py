"""Revenue and curtailment accounting, quartile analysis and report emitters."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from .core import BessMode, StepLedger

GROUPINGS = ("spot_price", "curtail_freq")


@dataclass
class EpisodeLedger:
    """Step ledgers of a rollout together with their totals.

    ``curtailed_mwh`` is the gross surplus above the wind bid; the part not
    absorbed by the battery is ``spilled_mwh``.
    """

    steps: list[StepLedger] = field(default_factory=list)
    label: str = ""
    meta: dict = field(default_factory=dict)

    def append(self, step: StepLedger) -> None:
        self.steps.append(step)

    def extend(self, steps: Iterable[StepLedger]) -> None:
        self.steps.extend(steps)

    def _sum(self, attr: str) -> float:
        return math.fsum(getattr(s, attr) for s in self.steps)

    @property
    def wind_revenue(self) -> float:
        return self._sum("wind_revenue")

    @property
    def bess_revenue(self) -> float:
        return self._sum("bess_revenue")

    @property
    def degradation(self) -> float:
        return self._sum("degradation_cost")

    @property
    def total(self) -> float:
        return self.wind_revenue + self.bess_revenue - self.degradation

    @property
    def arbitrage_revenue(self) -> float:
        """Battery market revenue net of degradation."""
        return self.bess_revenue - self.degradation

    @property
    def curtailed_mwh(self) -> float:
        return math.fsum(s.wind_curtailed * s.dt_hours for s in self.steps)

    @property
    def absorbed_mwh(self) -> float:
        return self._sum("absorbed_curtailment")

    @property
    def spilled_mwh(self) -> float:
        return max(0.0, self.curtailed_mwh - self.absorbed_mwh)

    @property
    def spot_charged_mwh(self) -> float:
        return self._sum("spot_charged")


@dataclass(frozen=True)
class Summary:
    wind_revenue: float = 0.0
    bess_revenue: float = 0.0
    degradation: float = 0.0
    total: float = 0.0
    curtailed_mwh: float = 0.0
    absorbed_mwh: float = 0.0
    spilled_mwh: float = 0.0
    spot_charged_mwh: float = 0.0
    steps: int = 0

    @property
    def curtailment_share(self) -> float:
        """Fraction of charged energy that came from curtailed wind."""
        charged = self.absorbed_mwh + self.spot_charged_mwh
        return self.absorbed_mwh / charged if charged > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "wind_revenue": self.wind_revenue,
            "bess_revenue": self.bess_revenue,
            "degradation": self.degradation,
            "total_revenue": self.total,
            "curtailed_mwh": self.curtailed_mwh,
            "absorbed_mwh": self.absorbed_mwh,
            "spilled_mwh": self.spilled_mwh,
            "spot_charged_mwh": self.spot_charged_mwh,
            "curtailment_share": self.curtailment_share,
            "steps": self.steps,
        }


def summarize(ledgers: Union[EpisodeLedger, Iterable[Union[EpisodeLedger, StepLedger]]]) -> Summary:
    """Totals over any mix of episode ledgers and bare step ledgers."""
    if isinstance(ledgers, EpisodeLedger):
        ledgers = [ledgers]
    steps: list[StepLedger] = []
    for item in ledgers:
        if isinstance(item, EpisodeLedger):
            steps.extend(item.steps)
        else:
            steps.append(item)
    if not steps:
        return Summary()
    w = float(np.sum([s.wind_revenue for s in steps]))
    b = float(np.sum([s.bess_revenue for s in steps]))
    c = float(np.sum([s.degradation_cost for s in steps]))
    curtailed = float(np.sum([s.wind_curtailed * s.dt_hours for s in steps]))
    absorbed = float(np.sum([s.absorbed_curtailment for s in steps]))
    return Summary(
        wind_revenue=w,
        bess_revenue=b,
        degradation=c,
        total=w + b - c,
        curtailed_mwh=curtailed,
        absorbed_mwh=absorbed,
        spilled_mwh=max(0.0, curtailed - absorbed),
        spot_charged_mwh=float(np.sum([s.spot_charged for s in steps])),
        steps=len(steps),
    )


@dataclass(frozen=True)
class QuartileReport:
    group_by: str
    edges: tuple[float, float, float]
    counts: tuple[int, int, int, int]
    curtail_share: tuple[float, ...]
    spot_share: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"group_by": self.group_by, "edges": list(self.edges), "counts": list(self.counts),
                "curtailment_share": list(self.curtail_share), "spot_share": list(self.spot_share)}


def _charging_steps(steps: Iterable[StepLedger]) -> list[StepLedger]:
    return [s for s in steps
            if s.mode == BessMode.CHARGE.value and (s.spot_charged + s.absorbed_curtailment) > 0]


def quartile_analysis(ledgers, group_by: str = "spot_price") -> QuartileReport:
    """Share of charging energy drawn from curtailment, bucketed by quartiles.

    Buckets are ``(-inf, Q1]``, ``(Q1, Q2]``, ``(Q2, Q3]``, ``(Q3, inf)`` over
    the charging steps, so a value equal to an edge falls in the lower
    bucket. Each bucket reports the mean per-step curtailment share.

    Raises:
        ValueError: fewer than four charging steps or an unknown grouping.
    """
    if group_by not in GROUPINGS:
        raise ValueError(f"group_by must be one of {GROUPINGS}")
    if isinstance(ledgers, EpisodeLedger):
        ledgers = [ledgers]
    steps: list[StepLedger] = []
    for item in ledgers:
        steps.extend(item.steps if isinstance(item, EpisodeLedger) else [item])
    charging = _charging_steps(steps)
    if len(charging) < 4:
        raise ValueError(f"quartile analysis needs >= 4 charging steps, got {len(charging)}")
    x = np.array([getattr(s, group_by) for s in charging], dtype=float)
    share = np.array([s.absorbed_curtailment / (s.absorbed_curtailment + s.spot_charged)
                      for s in charging])
    q1, q2, q3 = (float(v) for v in np.quantile(x, [0.25, 0.5, 0.75], method="linear"))
    bucket = np.searchsorted(np.array([q1, q2, q3]), x, side="left")
    counts, c_share, s_share = [], [], []
    for k in range(4):
        sel = bucket == k
        counts.append(int(sel.sum()))
        m = float(share[sel].mean()) if sel.any() else float("nan")
        c_share.append(m)
        s_share.append(1.0 - m if sel.any() else float("nan"))
    return QuartileReport(group_by, (q1, q2, q3), tuple(counts), tuple(c_share), tuple(s_share))


TABLE_ROWS = (
    ("Revenue (AU$)", "Wind", "wind_revenue"),
    ("Revenue (AU$)", "BESS", "bess_revenue"),
    ("Revenue (AU$)", "Degradation", "degradation"),
    ("Revenue (AU$)", "Total", "total_revenue"),
    ("Wind Curtailment (MWh)", "Curtailed", "curtailed_mwh"),
    ("Wind Curtailment (MWh)", "Absorbed", "absorbed_mwh"),
    ("Wind Curtailment (MWh)", "Spilled", "spilled_mwh"),
    ("BESS charging (MWh)", "From spot", "spot_charged_mwh"),
)


def format_table(columns: dict[str, dict]) -> str:
    """Plain-text table with one column per method, rows as in :data:`TABLE_ROWS`."""
    names = list(columns)
    head = f"{'':24s}{'':12s}" + "".join(f"{n:>16s}" for n in names)
    lines = [head, "-" * len(head)]
    for group, row, key in TABLE_ROWS:
        vals = "".join(f"{columns[n][key]:16.3f}" for n in names)
        lines.append(f"{group:24s}{row:12s}{vals}")
    return "\n".join(lines)


def format_quartiles(rep: QuartileReport) -> str:
    labels = ["<=Q1", "Q1-Q2", "Q2-Q3", ">Q3"]
    lines = [f"quartiles of {rep.group_by}: Q1={rep.edges[0]:.4f} Q2={rep.edges[1]:.4f} Q3={rep.edges[2]:.4f}"]
    for lab, n, c, s in zip(labels, rep.counts, rep.curtail_share, rep.spot_share):
        lines.append(f"  {lab:6s} n={n:5d} curtailment={c:.4f} spot={s:.4f}")
    return "\n".join(lines)


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cumulative_csv(series: dict[str, EpisodeLedger]) -> str:
    """Long-format ``series,step,value`` cumulative net revenue per method."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["series", "step", "value"])
    for name, led in series.items():
        acc = 0.0
        for i, s in enumerate(led.steps):
            acc += s.wind_revenue + s.bess_revenue - s.degradation_cost
            w.writerow([name, i, repr(acc)])
    return buf.getvalue()
