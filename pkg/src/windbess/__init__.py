"""Joint wind-farm and battery bidding lab: settlement model, MDPs, TD3 agents and a DP benchmark."""

from .core import BessAction, BessMode, MarketTick, StepLedger, SystemConfig, WindAction
from .data import NormStats, SynthProfile, Trace, load_csv, split, synth_trace, write_csv
from .metrics import EpisodeLedger, summarize

__all__ = [
    "BessAction", "BessMode", "EpisodeLedger", "MarketTick", "NormStats", "StepLedger",
    "SynthProfile", "SystemConfig", "Trace", "WindAction", "load_csv", "split", "summarize",
    "synth_trace", "write_csv",
]
__version__ = "0.1.0"
