import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from windbess import runconfig
from windbess.cli import main
from windbess.nn import Mlp
from windbess.td3 import Td3Agent

TINY = """\
seed = 5
episodes = 2
validation_days = 1
train_fraction = 0.75

[data]
days = 4

[td3]
hidden = [8, 8]
warmup_steps = 64
batch_size = 16
buffer_capacity = 5000

[baseline]
horizon = 4
soc_steps = 19
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TINY)
    return path


def run(*args):
    return main([str(a) for a in args])


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in ("latency.json", "config.echo")}


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["train", "--episodes", "many"])
    assert exc.value.code == 1


def test_config_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("wobble = 1\n")
    assert run("train", "--config", bad, "--out", tmp_path / "o") == 1
    assert "wobble" in capsys.readouterr().err
    assert run("train", "--config", tmp_path / "absent.toml") == 1


def test_missing_data_file_exits_two(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    missing = tmp_path / "gone.csv"
    cfg.write_text(f'[data]\nsource = "csv"\ncsv = "{missing}"\n')
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 2
    assert str(missing) in capsys.readouterr().err


def test_empty_eval_split_exits_two(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[data]\ndays = 1\n")
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 2


def test_evaluate_without_checkpoint_exits_three(tmp_path, config, capsys):
    assert run("evaluate", "--config", config, "--out", tmp_path / "o") == 3
    assert "checkpoint" in capsys.readouterr().err


def test_zero_episodes_saves_initialization(tmp_path, config):
    out = tmp_path / "o"
    assert run("train", "--config", config, "--out", out, "--episodes", 0) == 0
    cfg = runconfig.load(config)
    seeds = [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(3)]
    fresh = Td3Agent(4, 3, cfg.hyper(), seeds[1])
    for name in Td3Agent._NETS:
        saved = Mlp.load(out / "checkpoints" / "bess" / f"{name}.mlp")
        assert all(np.array_equal(a, b) for a, b in zip(saved.params, getattr(fresh, name).params))


def test_train_evaluate_compare_are_reproducible(tmp_path, config, capsys):
    trees = []
    for name in ("a", "b"):
        out = tmp_path / name
        for cmd in ("train", "evaluate", "compare"):
            assert run(cmd, "--config", config, "--out", out, "--seed", 7) == 0
        trees.append(tree(out))
    assert trees[0] == trees[1]
    files = set(trees[0])
    for f in ("checkpoints/run.json", "checkpoints/bess/actor.mlp", "logs/train_log.jsonl",
              "reports/evaluate_eval.txt", "reports/evaluate_eval.json", "reports/compare.txt",
              "reports/compare.json", "reports/compare_cumulative.csv"):
        assert f in files
    out = tmp_path / "a"
    assert runconfig.load(out / "config.echo") == dataclasses.replace(runconfig.load(config), out=str(out), seed=7)
    ev, tr = ((out / "reports" / f"evaluate_{k}.txt").read_text() for k in ("eval", "train"))
    assert "on eval split" in ev and "on train split" in tr and ev != tr
    table = (out / "reports" / "compare.txt").read_text()
    for row in ("Wind", "BESS", "Total", "Curtailed", "Absorbed"):
        assert row in table
    digest = json.loads((out / "reports" / "compare.json").read_text())["trace_sha256"]
    assert digest in table
    compare = json.loads((out / "reports" / "compare.json").read_text())
    assert set(compare["columns"]) == {"JointDRL", "P&O", "Oracle"}
    timings = json.loads((out / "logs" / "latency.json").read_text())
    assert {"train_seconds", "evaluate_eval", "compare"} <= set(timings)
    stdout = capsys.readouterr().out
    assert "decision latency [JointDRL/eval]" in stdout and "decision latency [P&O]" in stdout


def test_synth_then_csv_source(tmp_path, config):
    out = tmp_path / "s"
    assert run("synth", "--config", config, "--out", out) == 0
    csv_cfg = tmp_path / "csv.toml"
    csv_cfg.write_text(TINY.replace("days = 4", f'source = "csv"\ncsv = "{out / "data" / "trace.csv"}"'))
    assert run("train", "--config", csv_cfg, "--out", tmp_path / "c", "--episodes", 0) == 0
    assert run("train", "--config", config, "--out", tmp_path / "d", "--episodes", 0) == 0
    a = json.loads((tmp_path / "c" / "checkpoints" / "run.json").read_text())
    b = json.loads((tmp_path / "d" / "checkpoints" / "run.json").read_text())
    assert a["trace_sha256"] == b["trace_sha256"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "windbess", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "compare" in res.stdout
