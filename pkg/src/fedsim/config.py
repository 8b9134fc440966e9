"""Experiment configuration: one flat JSON file, validated, with defaults
resolved and echoed into every run's outputs."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import simenv

STRATEGIES = ("fedcg", "fedavg", "uniform_topk", "hetero_topk", "prob_sample")

_DEFAULTS = {
    "N": 100,
    "M": 10,
    "H": 50,
    "K": 100,
    "total_budget_s": 1000.0,
    "theta_min": 0.01,
    "theta_probe": 0.1,
    "batch_size": 16,
    "lr": {"lambda": 1.0, "tau": 50.0},
    "model": {"kind": "softmax_regression", "hidden_dim": 32, "l2": 1e-4},
    "partition": {"scheme": "iid", "psi": 0.0},
    "strategy": "fedcg",
    "seed": 0,
    "eval_every": 5,
    "accuracy_targets": [],
    "output_dir": "runs/default",
    "profiles_path": None,
    "compute_class_means_s": list(simenv.DEFAULT_CLASS_MEANS_S),
    "compute_std_frac": simenv.DEFAULT_STD_FRAC,
    "bw_low_bps": simenv.DEFAULT_BW_LOW_BPS,
    "bw_high_bps": simenv.DEFAULT_BW_HIGH_BPS,
    "oracle_timing": True,
}

_SYNTH_DEFAULTS = {
    "kind": "synthetic",
    "num_classes": 10,
    "dim": 32,
    "samples_per_class": 200,
    "class_separation": 4.0,
    "test_fraction": 0.2,
}


class ConfigError(ValueError):
    """A configuration field failed validation; the message names it."""


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.raw[name]
        except KeyError:
            raise AttributeError(name) from None

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def hash(self) -> str:
        """Stable hash of everything except the output location."""
        payload = {k: v for k, v in self.raw.items() if k != "output_dir"}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def resolve(data: dict) -> ExperimentConfig:
    """Fill defaults and validate; raises ConfigError naming the bad field."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_DEFAULTS) - {"dataset"}
    _require(not unknown, f"unknown config fields: {sorted(unknown)}")

    cfg = copy.deepcopy(_DEFAULTS)
    for key, value in data.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = copy.deepcopy(value)

    dataset = data.get("dataset", {})
    _require(isinstance(dataset, dict), "dataset: must be an object")
    kind = dataset.get("kind", "synthetic")
    if kind == "synthetic":
        cfg["dataset"] = {**_SYNTH_DEFAULTS, **dataset}
    elif kind == "idx":
        for key in ("train_images", "train_labels"):
            _require(key in dataset, f"dataset.{key}: required for idx datasets")
            _require(Path(dataset[key]).exists(), f"dataset.{key}: file not found")
        for key in ("test_images", "test_labels"):
            if key in dataset:
                _require(Path(dataset[key]).exists(), f"dataset.{key}: file not found")
        cfg["dataset"] = {"test_fraction": 0.2, **dataset}
    else:
        raise ConfigError(f"dataset.kind: unknown kind {kind!r}")

    _require(cfg["strategy"] in STRATEGIES,
             f"strategy: {cfg['strategy']!r} is not one of {list(STRATEGIES)}")
    _require(cfg["N"] >= 1, "N: must be >= 1")
    _require(1 <= cfg["M"] <= cfg["N"], "M: must satisfy 1 <= M <= N")
    _require(cfg["H"] >= 1, "H: must be >= 1")
    _require(cfg["K"] >= 0, "K: must be >= 0")
    _require(cfg["total_budget_s"] > 0, "total_budget_s: must be > 0")
    _require(0 < cfg["theta_min"] <= 1, "theta_min: must be in (0, 1]")
    _require(0 < cfg["theta_probe"] <= 1, "theta_probe: must be in (0, 1]")
    _require(cfg["batch_size"] >= 1, "batch_size: must be >= 1")
    _require(cfg["lr"]["lambda"] > 0 and cfg["lr"]["tau"] > 0,
             "lr: lambda and tau must be positive")
    _require(cfg["model"]["kind"] in ("softmax_regression", "two_layer_perceptron"),
             "model.kind: unknown model kind")
    _require(cfg["eval_every"] >= 1, "eval_every: must be >= 1")
    _require(cfg["partition"]["scheme"] in ("iid", "dominant_class", "skewed_label"),
             "partition.scheme: unknown scheme")
    if cfg["profiles_path"] is not None:
        _require(Path(cfg["profiles_path"]).exists(), "profiles_path: file not found")
    return ExperimentConfig(raw=cfg)


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return resolve(data)


def _parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply repeated ``key=value`` overrides; dotted keys reach into objects."""
    out = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _parse_override_value(value)
    return out
