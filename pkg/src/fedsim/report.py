"""Post-hoc reporting: renders figures from one or more run directories and
emits a combined per-round CSV next to them.

The run path itself never plots; everything here re-reads rounds.jsonl.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def load_rounds(run_dir) -> list[dict]:
    path = Path(run_dir) / "rounds.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    return [json.loads(line) for line in path.read_text().splitlines() if line]


def _run_label(run_dir, rounds: list[dict]) -> str:
    strategy = rounds[0]["strategy"] if rounds else "?"
    return f"{Path(run_dir).name} ({strategy})"


def _eval_points(rounds: list[dict]):
    xs, ys = [], []
    for r in rounds:
        if r["round"] >= 0 and r.get("test_acc") is not None:
            xs.append(r["elapsed_s"])
            ys.append(r["test_acc"])
    return xs, ys


def write_combined_csv(run_dirs, out_path) -> None:
    fields = ["run", "strategy", "round", "elapsed_s", "round_time_s",
              "paper_bits_cum", "wire_bits_cum", "test_acc", "test_loss",
              "alpha_bound", "beta_mean"]
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for run_dir in run_dirs:
            for r in load_rounds(run_dir):
                writer.writerow({"run": Path(run_dir).name,
                                 **{k: r.get(k) for k in fields[1:]}})


def render_report(run_dirs, out_dir) -> list[Path]:
    """Render accuracy/traffic/ratio figures plus the combined CSV.

    Returns the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = [(d, load_rounds(d)) for d in run_dirs]
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for run_dir, rounds in data:
        xs, ys = _eval_points(rounds)
        ax.plot(xs, ys, marker="o", markersize=3, label=_run_label(run_dir, rounds))
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("test accuracy")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out / "accuracy_vs_time.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for run_dir, rounds in data:
        pts = [(r["elapsed_s"], r["paper_bits_cum"] / 8e6)
               for r in rounds if r["round"] >= 0]
        if pts:
            ax.plot(*zip(*pts), label=_run_label(run_dir, rounds))
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("cumulative uplink traffic (MB, 32-bit model)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out / "traffic_vs_time.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for run_dir, rounds in data:
        pts = [(r["round"], sum(r["theta"]) / len(r["theta"]))
               for r in rounds if r["round"] >= 0 and r["theta"]]
        if pts:
            ax.plot(*zip(*pts), label=_run_label(run_dir, rounds))
    ax.set_xlabel("round")
    ax.set_ylabel("mean compression ratio")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out / "mean_ratio_vs_round.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    csv_path = out / "rounds_combined.csv"
    write_combined_csv(run_dirs, csv_path)
    written.append(csv_path)
    return written
