import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from fedsim.cli import main
from fedsim.config import (ConfigError, apply_overrides, parse_config,
                           resolve)

BASE = {
    "dataset": {"kind": "synthetic", "num_classes": 3, "dim": 5,
                "samples_per_class": 40, "class_separation": 3.0},
    "partition": {"scheme": "dominant_class", "psi": 0.5},
    "N": 8, "M": 3, "H": 4, "K": 4, "total_budget_s": 500.0,
    "batch_size": 8, "seed": 11, "eval_every": 2,
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(BASE))
    return path


def _run(args):
    return CliRunner().invoke(main, args)


# ----------------------------------------------------------------- config

def test_defaults_resolved(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{}")
    cfg = parse_config(path)
    assert cfg.M == 10 and cfg.H == 50 and cfg.K == 100
    assert cfg.theta_min == 0.01 and cfg.theta_probe == 0.1
    assert cfg.strategy == "fedcg"
    assert cfg.dataset["num_classes"] == 10 and cfg.dataset["dim"] == 32


def test_resolve_rejects_m_exceeding_n():
    with pytest.raises(ConfigError, match="M"):
        resolve({"N": 5, "M": 10})


def test_resolve_rejects_unknown_strategy():
    with pytest.raises(ConfigError, match="strategy"):
        resolve({"strategy": "gossip"})


def test_resolve_rejects_unknown_field():
    with pytest.raises(ConfigError, match="unknown"):
        resolve({"total_budget": 10})


def test_overrides_dotted_and_typed():
    data = apply_overrides({"lr": {"lambda": 1.0}},
                           ["lr.tau=25", "strategy=fedavg", "K=3"])
    assert data["lr"] == {"lambda": 1.0, "tau": 25}
    assert data["strategy"] == "fedavg"
    assert data["K"] == 3


def test_override_bad_shape():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no_equals_sign"])


def test_config_hash_ignores_output_dir():
    a = resolve({"output_dir": "runs/a"})
    b = resolve({"output_dir": "runs/b"})
    assert a.hash() == b.hash()
    assert a.hash() != resolve({"seed": 1}).hash()


# -------------------------------------------------------------------- run

def test_run_writes_outputs(config_file, tmp_path):
    out = tmp_path / "out"
    result = _run(["run", "--config", str(config_file), "--out", str(out)])
    assert result.exit_code == 0, result.output
    for name in ("rounds.jsonl", "summary.csv", "config_resolved.json"):
        assert (out / name).exists()
    lines = (out / "rounds.jsonl").read_text().splitlines()
    assert len(lines) == 1 + BASE["K"]  # bootstrap record plus K rounds
    summary = json.loads(result.output)
    assert summary["rounds_completed"] == BASE["K"]
    assert summary["strategy"] == "fedcg"


def test_run_config_resolved_roundtrip(config_file, tmp_path):
    out = tmp_path / "out"
    assert _run(["run", "--config", str(config_file), "--out", str(out)]).exit_code == 0
    resolved = json.loads((out / "config_resolved.json").read_text())
    again = resolve({k: v for k, v in resolved.items()})
    assert again.to_dict() == resolved


def test_run_invalid_config_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({**BASE, "strategy": "bogus"}))
    result = _run(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    assert result.exit_code == 2
    assert "strategy" in result.output


def test_run_malformed_json_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    result = _run(["run", "--config", str(path)])
    assert result.exit_code == 2


def test_run_budget_too_small_exits_3(config_file, tmp_path):
    # the bootstrap probe alone exceeds this budget, so no round can start
    result = _run(["run", "--config", str(config_file),
                   "--override", "total_budget_s=0.001",
                   "--out", str(tmp_path / "o")])
    assert result.exit_code == 3
    summary = json.loads(result.output)
    assert summary["rounds_completed"] == 0
    assert summary["stopped_reason"] == "budget_exhausted"


def test_run_byte_identical_repeats(config_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["run", "--config", str(config_file), "--out", str(a)]).exit_code == 0
    assert _run(["run", "--config", str(config_file), "--out", str(b)]).exit_code == 0
    assert (a / "rounds.jsonl").read_bytes() == (b / "rounds.jsonl").read_bytes()
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_run_paired_environment_across_strategies(config_file, tmp_path):
    traces = {}
    for strategy in ("fedcg", "fedavg"):
        out = tmp_path / strategy
        assert _run(["run", "--config", str(config_file),
                     "--override", f"strategy=\"{strategy}\"",
                     "--out", str(out)]).exit_code == 0
        first = json.loads((out / "rounds.jsonl").read_text().splitlines()[0])
        assert first["round"] == -1
        traces[strategy] = first["conditions"]
    assert traces["fedcg"] == traces["fedavg"]


def test_run_override_changes_behavior(config_file, tmp_path):
    out = tmp_path / "o"
    result = _run(["run", "--config", str(config_file),
                   "--override", "strategy=fedavg",
                   "--override", "K=2", "--out", str(out)])
    assert result.exit_code == 0
    rows = [json.loads(l) for l in (out / "rounds.jsonl").read_text().splitlines()]
    assert len(rows) == 3
    assert all(r["strategy"] == "fedavg" for r in rows)
    assert all(t == 1.0 for r in rows[1:] for t in r["theta"])


# ---------------------------------------------------- compare / preview

def _two_runs(config_file, tmp_path):
    dirs = []
    for strategy in ("fedcg", "fedavg"):
        out = tmp_path / f"run_{strategy}"
        assert _run(["run", "--config", str(config_file),
                     "--override", f"strategy={strategy}",
                     "--out", str(out)]).exit_code == 0
        dirs.append(out)
    return dirs


def test_compare_table(config_file, tmp_path):
    a, b = _two_runs(config_file, tmp_path)
    result = _run(["compare", str(a), str(b), "--target", "0.5"])
    assert result.exit_code == 0
    assert "fedcg" in result.output and "fedavg" in result.output
    assert "speedup" in result.output


def test_compare_unreached_target_dash(config_file, tmp_path):
    a, b = _two_runs(config_file, tmp_path)
    result = _run(["compare", str(a), str(b), "--target", "2.0"])
    assert result.exit_code == 0
    assert "—" in result.output


def test_partition_preview(config_file):
    result = _run(["partition-preview", "--config", str(config_file)])
    assert result.exit_code == 0
    lines = result.output.strip().splitlines()
    assert lines[0].startswith("scheme=dominant_class")
    assert len(lines) == 1 + BASE["N"]


def test_report_renders_figures(config_file, tmp_path):
    a, b = _two_runs(config_file, tmp_path)
    out = tmp_path / "figs"
    result = _run(["report", str(a), str(b), "--out", str(out)])
    assert result.exit_code == 0
    for name in ("accuracy_vs_time.png", "traffic_vs_time.png",
                 "mean_ratio_vs_round.png", "rounds_combined.csv"):
        path = out / name
        assert path.exists() and path.stat().st_size > 0
    header = (out / "rounds_combined.csv").read_text().splitlines()[0]
    assert header.startswith("run,strategy,round")
