"""Run configuration: one TOML file, validated up front, echoed back verbatim.

Layout::

    seed = 0
    episodes = 40
    coupling = "policy"          # policy | persistence | perfect
    train_fraction = 0.9166666666666666
    select_best = true           # keep the best validation snapshot
    validation_days = 3          # trailing training days used for that score
    initial_energy = 0.5         # optional, defaults to e_min

    [data]
    source = "synth"             # synth | csv
    csv = "trace.csv"            # required when source = "csv"
    days = 360                   # synth only
    seed = 0                     # synth only, defaults to the run seed

    [data.profile]               # SynthProfile fields
    [system]                     # SystemConfig fields
    [td3]                        # Td3Hyper fields except gamma (taken from system)
    [baseline]                   # horizon, soc_steps, method
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import SystemConfig
from .data import SynthProfile
from .env import COUPLINGS
from .td3 import Td3Hyper
from .baseline import FORECAST_METHODS

DATA_SOURCES = ("synth", "csv")


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"
    csv: str = ""
    days: int = 360
    seed: Optional[int] = None
    profile: SynthProfile = field(default_factory=SynthProfile)


@dataclass(frozen=True)
class BaselineConfig:
    horizon: int = 12
    soc_steps: int = 55
    method: str = "persistence"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    episodes: int = 40
    coupling: str = "policy"
    train_fraction: float = 11 / 12
    select_best: bool = True
    validation_days: int = 3
    initial_energy: Optional[float] = None
    out: str = "run"
    data: DataConfig = field(default_factory=DataConfig)
    system: SystemConfig = field(default_factory=SystemConfig)
    td3: Td3Hyper = field(default_factory=Td3Hyper)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def hyper(self) -> Td3Hyper:
        return dataclasses.replace(self.td3, gamma=self.system.gamma_discount)

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed


_TOP_SCALARS = {"seed": int, "episodes": int, "coupling": str, "train_fraction": float,
                "select_best": bool, "validation_days": int, "initial_energy": float, "out": str}


def _check_keys(section: str, got: dict, allowed) -> None:
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown key(s) at {where}: {', '.join(unknown)}")


def _coerce(section: str, key: str, value: Any, kind: type) -> Any:
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected true/false, got {value!r}")
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {value!r}")
    return value


def _build(cls, section: str, raw: dict, exclude: tuple = ()):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in exclude}
    _check_keys(section, raw, fields)
    kwargs = {}
    for key, value in raw.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{section}.{key}: expected an array")
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        elif default is not None:
            value = _coerce(section, key, value, type(default))
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def from_dict(raw: dict) -> RunConfig:
    """Validate a parsed config mapping; every problem raises :class:`ConfigError`."""
    raw = dict(raw)
    sections = ("data", "system", "td3", "baseline")
    _check_keys("", raw, list(_TOP_SCALARS) + list(sections))
    top = {k: _coerce("", k, raw[k], t) for k, t in _TOP_SCALARS.items() if k in raw}

    data_raw = dict(raw.get("data", {}))
    profile = _build(SynthProfile, "data.profile", data_raw.pop("profile", {}))
    _check_keys("data", data_raw, ("source", "csv", "days", "seed"))
    data = DataConfig(
        source=_coerce("data", "source", data_raw.get("source", "synth"), str),
        csv=_coerce("data", "csv", data_raw.get("csv", ""), str),
        days=_coerce("data", "days", data_raw.get("days", 360), int),
        seed=_coerce("data", "seed", data_raw["seed"], int) if "seed" in data_raw else None,
        profile=profile,
    )
    if data.source not in DATA_SOURCES:
        raise ConfigError(f"data.source must be one of {DATA_SOURCES}, got {data.source!r}")
    if data.source == "csv" and not data.csv:
        raise ConfigError("data.csv is required when data.source = 'csv'")
    if data.days < 1:
        raise ConfigError("data.days must be >= 1")

    cfg = RunConfig(
        **top,
        data=data,
        system=_build(SystemConfig, "system", raw.get("system", {})),
        td3=_build(Td3Hyper, "td3", raw.get("td3", {}), exclude=("gamma",)),
        baseline=_build(BaselineConfig, "baseline", raw.get("baseline", {})),
    )
    if cfg.coupling not in COUPLINGS:
        raise ConfigError(f"coupling must be one of {COUPLINGS}, got {cfg.coupling!r}")
    if cfg.baseline.method not in FORECAST_METHODS:
        raise ConfigError(f"baseline.method must be one of {FORECAST_METHODS}")
    if cfg.baseline.horizon < 1 or cfg.baseline.soc_steps < 2:
        raise ConfigError("baseline.horizon must be >= 1 and baseline.soc_steps >= 2")
    if cfg.episodes < 0:
        raise ConfigError("episodes must be >= 0")
    if not (0.0 < cfg.train_fraction < 1.0):
        raise ConfigError("train_fraction must lie in (0, 1)")
    if cfg.validation_days < 1:
        raise ConfigError("validation_days must be >= 1")
    e0 = cfg.initial_energy
    if e0 is not None and not (cfg.system.e_min <= e0 <= cfg.system.e_max):
        raise ConfigError(f"initial_energy {e0} outside [{cfg.system.e_min}, {cfg.system.e_max}]")
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw)


def _plain(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if getattr(obj, f.name) is not None}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def to_dict(cfg: RunConfig) -> dict:
    d = _plain(cfg)
    d["td3"].pop("gamma", None)
    return d


def dumps(cfg: RunConfig) -> str:
    """Effective config as TOML; :func:`load` on the result gives back ``cfg``."""
    return tomli_w.dumps(to_dict(cfg))
