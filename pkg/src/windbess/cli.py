"""Command-line entry point: ``python -m windbess {synth,train,evaluate,compare}``.

Output directory layout (``--out``)::

    config.echo                 effective run config (TOML, re-loadable)
    data/trace.csv              synth only
    checkpoints/wind/           actor, critics, targets (.mlp) + agent.json
    checkpoints/bess/           same for the battery agent
    checkpoints/run.json        normalization stats, trace hash, selection info
    logs/train_log.jsonl        one record per agent per training episode
    logs/latency.json           wall-clock timings (the only non-reproducible file)
    reports/                    deterministic text/JSON/CSV reports

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics, runconfig
from .baseline import perfect_foresight, rolling_run
from .data import INTERVALS_PER_DAY, DataError, NormStats, Trace, load_csv, split, synth_trace, write_csv
from .env import BessEnv, WindEnv
from .metrics import EpisodeLedger
from .runconfig import ConfigError, RunConfig
from .td3 import (
    BESS_ACT_DIM,
    BESS_OBS_DIM,
    WIND_ACT_DIM,
    WIND_OBS_DIM,
    Td3Agent,
    rollout,
    train_joint,
)

logger = logging.getLogger("windbess")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class CheckpointError(RuntimeError):
    """Missing or incompatible checkpoint."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="windbess", description="Joint wind-farm and battery bidding lab.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "synth": "write the configured synthetic trace to <out>/data/trace.csv",
        "train": "train the wind and battery agents on the training split",
        "evaluate": "noise-free rollout of trained policies on both splits",
        "compare": "trained policies vs predict-and-optimize on the eval split",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="run-config TOML (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--episodes", type=int, help="training episodes (overrides the config)")
        p.add_argument("--checkpoint", type=Path, help="checkpoint directory (default <out>/checkpoints)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = runconfig.load(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("episodes", args.episodes)) if v is not None}
    if args.out is not None:
        overrides["out"] = str(args.out)
    if overrides:
        cfg = runconfig.from_dict({**runconfig.to_dict(cfg), **overrides})
    return cfg


def load_trace(cfg: RunConfig) -> Trace:
    if cfg.data.source == "csv":
        return load_csv(cfg.data.csv, cfg.system.p_max_wind)
    return synth_trace(cfg.data.days, cfg.data_seed, cfg.data.profile)


def split_trace(cfg: RunConfig, trace: Trace) -> tuple[Trace, Trace]:
    return split(trace, cfg.train_fraction, INTERVALS_PER_DAY)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _echo_config(cfg: RunConfig, out: Path) -> None:
    _write(out / "config.echo", runconfig.dumps(cfg))


def _checkpoint_dir(args, cfg: RunConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "checkpoints"


def load_agents(ckpt: Path) -> tuple[Td3Agent, Td3Agent, NormStats, dict]:
    meta_path = ckpt / "run.json"
    if not meta_path.is_file():
        raise CheckpointError(f"no checkpoint found at {ckpt}")
    try:
        meta = json.loads(meta_path.read_text())
        wind = Td3Agent.load(ckpt / "wind", WIND_OBS_DIM, WIND_ACT_DIM)
        bess = Td3Agent.load(ckpt / "bess", BESS_OBS_DIM, BESS_ACT_DIM)
        norm = NormStats.from_dict(meta["norm"])
    except (ValueError, KeyError, FileNotFoundError) as exc:
        raise CheckpointError(f"{ckpt}: {exc}") from None
    return wind, bess, norm, meta


def cmd_synth(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    trace = synth_trace(cfg.data.days, cfg.data_seed, cfg.data.profile)
    write_csv(trace, out / "data" / "trace.csv")
    _echo_config(cfg, out)
    print(f"wrote {len(trace)} ticks to {out / 'data' / 'trace.csv'} (sha256 {trace.digest()})")
    return EXIT_OK


def _validation_scorer(cfg: RunConfig, val: Trace, wind: Td3Agent, bess: Td3Agent, norm: NormStats):
    def score() -> tuple[float, float]:
        led = rollout(val, cfg.system, bess, wind, norm, cfg.coupling, initial_energy=cfg.initial_energy)
        return (sum(s.extras.get("reward_wind", 0.0) for s in led.steps),
                sum(s.reward for s in led.steps))
    return score


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    trace = load_trace(cfg)
    train_tr, eval_tr = split_trace(cfg, trace)
    norm = NormStats.from_trace(train_tr)
    hyper = cfg.hyper()
    wind_seed, bess_seed, buf_seed = (int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(3))
    wind = Td3Agent(WIND_OBS_DIM, WIND_ACT_DIM, hyper, wind_seed)
    bess = Td3Agent(BESS_OBS_DIM, BESS_ACT_DIM, hyper, bess_seed)
    wind_env = WindEnv(train_tr, cfg.system, INTERVALS_PER_DAY, norm)
    bess_env = BessEnv(train_tr, cfg.system, INTERVALS_PER_DAY, norm, cfg.initial_energy, cfg.coupling)

    val_days = min(cfg.validation_days, train_tr.n_episodes())
    val = train_tr[len(train_tr) - val_days * INTERVALS_PER_DAY:]
    validate = _validation_scorer(cfg, val, wind, bess, norm) if cfg.select_best else None

    log_lines = []
    t0 = time.perf_counter()
    train_joint(wind_env, bess_env, wind, bess, cfg.episodes, buf_seed,
                on_episode=lambda log: log_lines.append(json.dumps(log.to_dict(), sort_keys=True)),
                validate=validate)
    elapsed = time.perf_counter() - t0

    ckpt = _checkpoint_dir(args, cfg)
    wind.save(ckpt / "wind")
    bess.save(ckpt / "bess")
    selected = {}
    for rec in map(json.loads, log_lines):
        if rec["score"] is not None and (rec["agent"] not in selected
                                         or rec["score"] > selected[rec["agent"]]["score"]):
            selected[rec["agent"]] = {"episode": rec["episode"], "score": rec["score"]}
    meta = {"norm": norm.to_dict(), "trace_sha256": trace.digest(), "train_ticks": len(train_tr),
            "eval_ticks": len(eval_tr), "episodes": cfg.episodes, "seed": cfg.seed,
            "coupling": cfg.coupling, "selected": selected}
    _write(ckpt / "run.json", metrics.to_json(meta))
    _write(out / "logs" / "train_log.jsonl", "".join(line + "\n" for line in log_lines))
    _echo_config(cfg, out)
    _merge_timing(out, {"train_seconds": elapsed})
    print(f"trained {cfg.episodes} episodes on {len(train_tr)} ticks; checkpoints in {ckpt}")
    return EXIT_OK


def _merge_timing(out: Path, entries: dict) -> None:
    path = out / "logs" / "latency.json"
    current = json.loads(path.read_text()) if path.is_file() else {}
    current.update(entries)
    _write(path, metrics.to_json(current))


def _report_text(label: str, split_name: str, trace: Trace, led: EpisodeLedger) -> str:
    summary = metrics.summarize(led)
    lines = [f"report: {label} on {split_name} split",
             f"trace sha256: {trace.digest()}  ticks: {len(trace)}",
             "",
             metrics.format_table({label: summary.to_dict()}),
             f"{'BESS charging':24s}{'Curt. share':12s}{summary.curtailment_share:16.4f}",
             ""]
    for group in metrics.GROUPINGS:
        try:
            lines.append(metrics.format_quartiles(metrics.quartile_analysis(led, group)))
        except ValueError as exc:
            lines.append(f"quartiles of {group}: unavailable ({exc})")
    return "\n".join(lines) + "\n"


def _report_json(label: str, split_name: str, trace: Trace, led: EpisodeLedger) -> dict:
    quart = {}
    for group in metrics.GROUPINGS:
        try:
            quart[group] = metrics.quartile_analysis(led, group).to_dict()
        except ValueError as exc:
            quart[group] = {"error": str(exc)}
    return {"label": label, "split": split_name, "trace_sha256": trace.digest(), "ticks": len(trace),
            "summary": metrics.summarize(led).to_dict(), "quartiles": quart}


def _latency_line(label: str, led: EpisodeLedger) -> str:
    n = led.meta.get("decisions", len(led.steps))
    secs = led.meta.get("decision_seconds", led.meta.get("wall_seconds", 0.0))
    per = 1e3 * secs / n if n else float("nan")
    return f"decision latency [{label}]: {per:.4f} ms per decision over {n} decisions ({secs:.3f} s)"


def _evaluate_policy(cfg: RunConfig, trace: Trace, wind, bess, norm) -> EpisodeLedger:
    """Noise-free rollout; with a non-policy coupling the wind column settles the coupling's bid."""
    if trace.n_episodes() < 1:
        raise DataError("evaluation split holds no complete episode")
    return rollout(trace, cfg.system, bess, wind, norm, cfg.coupling,
                   initial_energy=cfg.initial_energy, label="JointDRL")


def cmd_evaluate(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    wind, bess, norm, _ = load_agents(_checkpoint_dir(args, cfg))
    trace = load_trace(cfg)
    train_tr, eval_tr = split_trace(cfg, trace)
    timings, stdout = {}, []
    for split_name, part in (("eval", eval_tr), ("train", train_tr)):
        led = _evaluate_policy(cfg, part, wind, bess, norm)
        text = _report_text("JointDRL", split_name, part, led)
        _write(out / "reports" / f"evaluate_{split_name}.txt", text)
        _write(out / "reports" / f"evaluate_{split_name}.json",
               metrics.to_json(_report_json("JointDRL", split_name, part, led)))
        if split_name == "eval":
            _write(out / "reports" / "evaluate_cumulative.csv", metrics.cumulative_csv({"JointDRL": led}))
        line = _latency_line(f"JointDRL/{split_name}", led)
        timings[f"evaluate_{split_name}"] = {"decisions": led.meta["decisions"],
                                             "decision_seconds": led.meta["decision_seconds"]}
        stdout.append(text + line)
    _merge_timing(out, timings)
    _echo_config(cfg, out)
    print("\n\n".join(stdout))
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    wind, bess, norm, _ = load_agents(_checkpoint_dir(args, cfg))
    trace = load_trace(cfg)
    _, eval_tr = split_trace(cfg, trace)
    if len(eval_tr) == 0 or eval_tr.n_episodes() < 1:
        raise DataError("evaluation split is empty")
    drl = _evaluate_policy(cfg, eval_tr, wind, bess, norm)
    bl = cfg.baseline
    po = rolling_run(eval_tr, cfg.system, bl.horizon, bl.soc_steps, bl.method,
                     cfg.initial_energy, INTERVALS_PER_DAY, label="P&O")
    oracle = perfect_foresight(eval_tr, cfg.system, INTERVALS_PER_DAY, bl.soc_steps, cfg.initial_energy)
    runs = {"JointDRL": drl, "P&O": po, "Oracle": oracle}
    columns = {name: metrics.summarize(led).to_dict() for name, led in runs.items()}
    digest = eval_tr.digest()
    text = "\n".join([
        "comparison on eval split (Oracle = perfect-foresight DP on the true ticks)",
        f"trace sha256: {digest}  ticks: {len(eval_tr)}  (identical input for every column)",
        "",
        metrics.format_table(columns),
    ]) + "\n"
    _write(out / "reports" / "compare.txt", text)
    _write(out / "reports" / "compare.json",
           metrics.to_json({"trace_sha256": digest, "ticks": len(eval_tr), "columns": columns}))
    _write(out / "reports" / "compare_cumulative.csv", metrics.cumulative_csv(runs))
    lat = [_latency_line("JointDRL", drl), _latency_line("P&O", po)]
    _merge_timing(out, {"compare": {
        "JointDRL": {"decisions": drl.meta["decisions"], "decision_seconds": drl.meta["decision_seconds"]},
        "P&O": {"decisions": po.meta["decisions"], "decision_seconds": po.meta["wall_seconds"]}}})
    _echo_config(cfg, out)
    print(text + "\n".join(lat))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, FloatingPointError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
