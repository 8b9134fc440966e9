"""Command-line interface.

Exit codes for ``run``: 0 success, 2 validation error, 3 budget exhausted
before any round completed, 1 internal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import datagen, orchestrator, report
from .config import ConfigError, apply_overrides, parse_config, resolve
from .seeds import derive_seed


@click.group()
def main():
    """Deterministic federated-learning simulator with adaptive client
    selection and gradient compression."""


def _load_config(config_path, overrides, out):
    try:
        data = json.loads(Path(config_path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    data = apply_overrides(data, list(overrides))
    if out is not None:
        data["output_dir"] = str(out)
    return resolve(data)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config field (dotted keys reach into objects).")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides output_dir).")
def run(config_path, overrides, out):
    """Run one experiment and write rounds.jsonl / summary.csv /
    config_resolved.json into the output directory."""
    try:
        cfg = _load_config(config_path, overrides, out)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    try:
        records, summary = orchestrator.run_experiment(cfg)
        orchestrator.write_outputs(cfg.output_dir, cfg, records, summary)
    except Exception as exc:  # internal failure
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))
    if (cfg.K > 0 and summary["rounds_completed"] == 0
            and summary["stopped_reason"] == "budget_exhausted"):
        sys.exit(3)
    sys.exit(0)


def _first_reach(rounds, target):
    for r in rounds:
        if r["round"] >= 0 and r.get("test_acc") is not None and r["test_acc"] >= target:
            return r
    return None


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--target", "target_acc", type=float, required=True,
              help="Target test accuracy.")
def compare(run_dirs, target_acc):
    """Tabulate time- and traffic-to-target per run, with speedups relative
    to the first run."""
    rows = []
    for d in run_dirs:
        rounds = report.load_rounds(d)
        hit = _first_reach(rounds, target_acc)
        rows.append({
            "run": str(d),
            "strategy": rounds[0]["strategy"] if rounds else "?",
            "time_s": None if hit is None else hit["elapsed_s"],
            "traffic_mb": None if hit is None else hit["paper_bits_cum"] / 8e6,
        })
    base = rows[0]
    header = f"{'run':40s} {'strategy':12s} {'time(s)':>12s} {'traffic(MB)':>12s} {'speedup':>8s}"
    click.echo(header)
    for row in rows:
        time_cell = "—" if row["time_s"] is None else f"{row['time_s']:.1f}"
        traffic_cell = "—" if row["traffic_mb"] is None else f"{row['traffic_mb']:.2f}"
        if row["time_s"] is None or base["time_s"] in (None, 0):
            speedup = "—"
        else:
            speedup = f"{base['time_s'] / row['time_s']:.2f}x"
        click.echo(f"{row['run']:40s} {row['strategy']:12s} {time_cell:>12s} "
                   f"{traffic_cell:>12s} {speedup:>8s}")
    sys.exit(0)


@main.command("partition-preview")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE")
def partition_preview(config_path, overrides):
    """Print per-client class histograms for the configured partition."""
    try:
        cfg = _load_config(config_path, overrides, None)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    ds_cfg = cfg.dataset
    if ds_cfg["kind"] == "synthetic":
        full = datagen.generate_synthetic(
            ds_cfg["num_classes"], ds_cfg["dim"], ds_cfg["samples_per_class"],
            ds_cfg["class_separation"], derive_seed(cfg.seed, "dataset"))
        train, _ = datagen.train_test_split(full, ds_cfg["test_fraction"],
                                            derive_seed(cfg.seed, "testsplit"))
    else:
        train = datagen.load_idx(ds_cfg["train_images"], ds_cfg["train_labels"])
    part = datagen.partition(
        train, cfg.N,
        datagen.PartitionSpec(scheme=cfg.partition["scheme"], psi=cfg.partition["psi"],
                              seed=derive_seed(cfg.seed, "partition")))
    click.echo(f"scheme={cfg.partition['scheme']} psi={cfg.partition['psi']} "
               f"N={cfg.N} classes={train.num_classes}")
    for i, idx in enumerate(part.assignments):
        hist = datagen.class_histogram(train, idx)
        click.echo(f"client {i:4d} n={len(idx):6d} " + " ".join(f"{c:5d}" for c in hist))
    sys.exit(0)


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory for figures and the combined CSV.")
def report_cmd(run_dirs, out):
    """Render accuracy/traffic/ratio figures and a combined per-round CSV."""
    written = report.render_report(run_dirs, out)
    for path in written:
        click.echo(str(path))
    sys.exit(0)


if __name__ == "__main__":
    main()
