"""Market traces: CSV ingestion, chronological splits and a synthetic generator."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import MarketTick

logger = logging.getLogger(__name__)

CSV_HEADER = ("timestamp", "spot_price_aud_mwh", "wind_actual_mw")
INTERVALS_PER_DAY = 288
DAYS_PER_MONTH = 30


class DataError(ValueError):
    """Malformed or unusable trace data."""


@dataclass(frozen=True)
class Trace:
    """Ordered, evenly spaced sequence of market ticks."""

    ticks: tuple[MarketTick, ...]
    interval_minutes: float = 5.0
    source: str = "memory"
    timestamps: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        idx = [t.t_index for t in self.ticks]
        if len(idx) > 1:
            steps = np.diff(idx)
            if np.any(steps <= 0):
                bad = int(np.argmax(steps <= 0)) + 1
                raise DataError(f"t_index not strictly increasing at position {bad}")
            if np.any(steps != steps[0]):
                bad = int(np.argmax(steps != steps[0])) + 1
                raise DataError(f"uneven interval spacing at position {bad}")
        if self.timestamps is not None and len(self.timestamps) != len(self.ticks):
            raise DataError("timestamps and ticks differ in length")

    def __len__(self) -> int:
        return len(self.ticks)

    def __getitem__(self, i):
        if isinstance(i, slice):
            ts = self.timestamps[i] if self.timestamps is not None else None
            return Trace(self.ticks[i], self.interval_minutes, self.source, ts)
        return self.ticks[i]

    def __iter__(self):
        return iter(self.ticks)

    @cached_property
    def prices(self) -> np.ndarray:
        return np.array([t.spot_price for t in self.ticks], dtype=float)

    @cached_property
    def wind(self) -> np.ndarray:
        return np.array([t.wind_actual for t in self.ticks], dtype=float)

    def n_episodes(self, episode_len: int = INTERVALS_PER_DAY) -> int:
        return len(self) // episode_len

    def digest(self) -> str:
        """SHA-256 over the exact tick values, used to prove two runs saw the same data."""
        h = hashlib.sha256()
        for t in self.ticks:
            h.update(f"{t.t_index},{t.spot_price!r},{t.wind_actual!r}\n".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class NormStats:
    """Mean and standard deviation of the trace features, fit on the training split."""

    price_mean: float
    price_std: float
    wind_mean: float
    wind_std: float

    def __post_init__(self):
        for name in ("price_std", "wind_std"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"degenerate feature: {name}={v}")

    @classmethod
    def from_trace(cls, trace: Trace) -> "NormStats":
        if len(trace) == 0:
            raise DataError("cannot fit normalization on an empty trace")
        return cls(
            float(trace.prices.mean()), float(trace.prices.std()),
            float(trace.wind.mean()), float(trace.wind.std()),
        )

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(0.0, 1.0, 0.0, 1.0)

    def price(self, x):
        return (x - self.price_mean) / self.price_std

    def wind(self, x):
        return (x - self.wind_mean) / self.wind_std

    def to_dict(self) -> dict:
        return {"price_mean": self.price_mean, "price_std": self.price_std,
                "wind_mean": self.wind_mean, "wind_std": self.wind_std}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(float(d["price_mean"]), float(d["price_std"]),
                   float(d["wind_mean"]), float(d["wind_std"]))


def _parse_timestamp(raw: str):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        return datetime.fromisoformat(raw)


def load_csv(path, p_max_wind: float = 67.0) -> Trace:
    """Read a trace from ``timestamp,spot_price_aud_mwh,wind_actual_mw`` CSV.

    Timestamps are either all integer interval indices or all ISO-8601.
    Wind readings outside ``[0, p_max_wind]`` are clipped with a warning.

    Raises:
        DataError: missing file, wrong header, non-finite or empty values
            (all offending rows are listed), or non-monotone timestamps.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != CSV_HEADER:
            missing = [c for c in CSV_HEADER if c not in header]
            raise DataError(f"{path}: header must be {','.join(CSV_HEADER)}; missing {missing or 'none'}")
        rows = list(reader)

    stamps, prices, winds, bad = [], [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        try:
            if len(row) != 3:
                raise ValueError
            ts = _parse_timestamp(row[0])
            price, wind = float(row[1]), float(row[2])
            if not (math.isfinite(price) and math.isfinite(wind)):
                raise ValueError
        except ValueError:
            bad.append(lineno)
            continue
        stamps.append(ts)
        prices.append(price)
        winds.append(wind)
    if bad:
        raise DataError(f"{path}: rejected rows with missing or non-finite values: {bad}")
    if not stamps:
        raise DataError(f"{path}: no data rows")

    iso = isinstance(stamps[0], datetime)
    if any(isinstance(s, datetime) != iso for s in stamps):
        raise DataError(f"{path}: mixed integer and ISO-8601 timestamps")
    for i in range(1, len(stamps)):
        if stamps[i] <= stamps[i - 1]:
            raise DataError(f"{path}: timestamps not increasing at row {i + 2}")

    interval_minutes = 5.0
    if iso:
        if len(stamps) > 1:
            interval_minutes = (stamps[1] - stamps[0]).total_seconds() / 60.0
        idx = [round((s - stamps[0]).total_seconds() / 60.0 / interval_minutes) for s in stamps]
        offsets = [(s - stamps[0]).total_seconds() / 60.0 for s in stamps]
        for i, (k, off) in enumerate(zip(idx, offsets)):
            if abs(k * interval_minutes - off) > 1e-6 or k != i:
                raise DataError(f"{path}: uneven timestamp spacing at row {i + 2}")
        timestamps = tuple(s.isoformat() for s in stamps)
    else:
        idx = stamps
        timestamps = None

    w = np.asarray(winds, dtype=float)
    out = (w > p_max_wind) | (w < 0)
    if out.any():
        rows_out = [int(i) + 2 for i in np.flatnonzero(out)]
        logger.warning("%s: clipping %d wind readings outside [0, %g] (rows %s)",
                       path, len(rows_out), p_max_wind, rows_out[:10])
        w = np.clip(w, 0.0, p_max_wind)
    ticks = tuple(MarketTick(int(i), p, float(x)) for i, p, x in zip(idx, prices, w))
    try:
        return Trace(ticks, interval_minutes, str(path), timestamps)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_csv(trace: Trace, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, t in enumerate(trace.ticks):
            ts = trace.timestamps[i] if trace.timestamps is not None else t.t_index
            w.writerow([ts, repr(t.spot_price), repr(t.wind_actual)])


def split(trace: Trace, train_fraction: float = 11 / 12,
          episode_len: int = INTERVALS_PER_DAY) -> tuple[Trace, Trace]:
    """Chronological train/eval split on an episode boundary.

    The cut is placed at the whole episode nearest to ``train_fraction`` of
    the trace; leftover ticks that do not fill an episode stay in eval.
    """
    if not (0.0 < train_fraction < 1.0):
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_eps = len(trace) // episode_len
    n_train = int(math.floor(n_eps * train_fraction + 0.5))
    if n_train < 1 or n_eps - n_train < 1:
        raise DataError(
            f"trace of {len(trace)} ticks cannot give one {episode_len}-tick episode per split")
    cut = n_train * episode_len
    return trace[:cut], trace[cut:]


PRICE_SHAPES = ("sine", "plateau", "blocks")


@dataclass(frozen=True)
class SynthProfile:
    """Knobs of the synthetic market generator.

    ``price_shape`` is ``"sine"`` for a pure diurnal sinusoid, ``"plateau"``
    for a flattened sinusoid ``tanh(k cos)/tanh(k)`` with sharpness ``k``,
    which keeps the same bounds but spends most of the day near them, or
    ``"blocks"`` for a time-of-use style day: ``price_blocks`` lists
    ``(start_interval, price)`` pairs and the price jumps between levels
    in a single interval. The mean and amplitude are ignored for blocks.
    """

    price_mean: float = 60.0
    price_amplitude: float = 40.0
    price_shape: str = "sine"
    plateau_sharpness: float = 4.0
    peak_interval: int = 216            # 18:00
    price_blocks: tuple = ((0, 70.0), (144, 20.0), (192, 110.0))
    price_noise_std: float = 8.0
    price_noise_ar: float = 0.9
    spike_prob: float = 0.002
    spike_scale: float = 300.0
    negative_prob: float = 0.002
    negative_scale: float = 40.0
    wind_mean: float = 25.0
    wind_std: float = 10.0
    wind_ar: float = 0.97
    surplus_prob: float = 0.004
    surplus_len: int = 36
    surplus_gust_std: float = 12.0
    p_max_wind: float = 67.0

    def __post_init__(self):
        if self.price_shape not in PRICE_SHAPES:
            raise ValueError(f"unknown price_shape {self.price_shape!r}")
        starts = [int(b[0]) for b in self.price_blocks]
        if not starts or starts[0] != 0 or starts != sorted(set(starts)) or starts[-1] >= INTERVALS_PER_DAY:
            raise ValueError("price_blocks must start at interval 0 with increasing starts inside one day")
        if not (0.0 <= self.price_noise_ar < 1.0 and 0.0 <= self.wind_ar < 1.0):
            raise ValueError("AR coefficients must lie in [0, 1)")
        for name in ("spike_prob", "negative_prob", "surplus_prob"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must be a probability")


def diurnal_shape(n: int, profile: SynthProfile) -> np.ndarray:
    if profile.price_shape == "blocks":
        day = np.empty(INTERVALS_PER_DAY)
        for start, level in profile.price_blocks:
            day[int(start):] = float(level)
        return np.tile(day, -(-n // INTERVALS_PER_DAY))[:n]
    phase = 2.0 * np.pi * (np.arange(n) - profile.peak_interval) / INTERVALS_PER_DAY
    c = np.cos(phase)
    if profile.price_shape == "plateau":
        k = profile.plateau_sharpness
        c = np.tanh(k * c) / np.tanh(k)
    return profile.price_mean + profile.price_amplitude * c


def synth_trace(days: int, seed: int, profile: Optional[SynthProfile] = None) -> Trace:
    """Seeded synthetic 5-minute trace of ``days`` days.

    Price: diurnal profile + AR(1) noise + rare upward spikes and negative
    dips. Wind: AR(1) around ``wind_mean`` clipped to ``[0, p_max_wind]``,
    with occasional surplus episodes adding i.i.d. positive gusts, which is
    what a bidder looking at the previous interval cannot anticipate.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    p = profile or SynthProfile()
    n = days * INTERVALS_PER_DAY
    price_rng, wind_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    price = diurnal_shape(n, p)
    if p.price_noise_std > 0:
        eps = price_rng.standard_normal(n) * p.price_noise_std * math.sqrt(1 - p.price_noise_ar ** 2)
        noise = np.empty(n)
        acc = price_rng.standard_normal() * p.price_noise_std
        for i in range(n):
            acc = p.price_noise_ar * acc + eps[i]
            noise[i] = acc
        price = price + noise
    if p.spike_prob > 0:
        spikes = price_rng.random(n) < p.spike_prob
        price = price + spikes * price_rng.exponential(p.spike_scale, n)
    if p.negative_prob > 0:
        dips = price_rng.random(n) < p.negative_prob
        price = np.where(dips, -price_rng.exponential(p.negative_scale, n), price)

    wind = np.empty(n)
    shock = wind_rng.standard_normal(n) * p.wind_std * math.sqrt(1 - p.wind_ar ** 2)
    level = p.wind_mean + wind_rng.standard_normal() * p.wind_std
    start = wind_rng.random(n) < p.surplus_prob
    gusts = np.abs(wind_rng.standard_normal(n)) * p.surplus_gust_std
    remaining = 0
    for i in range(n):
        level = p.wind_mean + p.wind_ar * (level - p.wind_mean) + shock[i]
        level = min(max(level, 0.0), p.p_max_wind)
        if remaining == 0 and start[i]:
            remaining = p.surplus_len
        extra = 0.0
        if remaining > 0:
            extra = gusts[i]
            remaining -= 1
        wind[i] = min(max(level + extra, 0.0), p.p_max_wind)

    ticks = tuple(MarketTick(i, float(price[i]), float(wind[i])) for i in range(n))
    return Trace(ticks, 5.0, f"synth(days={days},seed={seed})")


def concat_days(traces: Sequence[Trace]) -> Trace:
    """Join traces end to end, renumbering t_index from zero."""
    ticks = []
    for tr in traces:
        for t in tr.ticks:
            ticks.append(MarketTick(len(ticks), t.spot_price, t.wind_actual))
    return Trace(tuple(ticks), traces[0].interval_minutes if traces else 5.0, "concat")
