"""Synthetic dataset generation, IDX-format loading, and non-IID partitioning.

Two skew schemes are supported besides the IID split:

* ``dominant_class``: a fraction ``psi`` of each client's samples come from
  one dominant class (client ``n`` gets class ``n mod C``), the rest from
  the other classes.  ``psi=0`` degenerates to the IID split.
* ``skewed_label``: each client is missing ``psi`` classes, chosen per
  client from a seeded stream.

Sampling draws without replacement from shared per-class pools while they
last, then falls back to drawing with replacement so small datasets never
fail.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeds import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised when an IDX file has a bad magic number or truncated payload."""


class DatasetMismatchError(ValueError):
    """Raised when image and label files disagree on the sample count."""


class ExhaustedClassError(RuntimeError):
    """Raised when a required class has no samples at all."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (num_samples, dim), float64
    labels: np.ndarray    # (num_samples,), int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] == 0:
            raise ValueError("features must be a nonempty 2-d matrix")
        if len(self.labels) != len(self.features):
            raise ValueError("label count must equal row count")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise ValueError("labels must be < num_classes")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str          # one of {"iid", "dominant_class", "skewed_label"}
    psi: float = 0.0     # fraction for dominant_class, class count for skewed_label
    seed: int = 0

    def validate(self, num_classes: int) -> None:
        if self.scheme not in ("iid", "dominant_class", "skewed_label"):
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.scheme == "dominant_class" and not 0.0 <= self.psi <= 1.0:
            raise ValueError("dominant_class requires 0 <= psi <= 1")
        if self.scheme == "skewed_label":
            if self.psi != int(self.psi) or not 0 <= self.psi < num_classes:
                raise ValueError("skewed_label requires integer 0 <= psi < num_classes")


@dataclass(frozen=True)
class Partition:
    assignments: list[np.ndarray]  # per-client sample indices
    weights: np.ndarray            # per-client p_n, sums to 1

    @property
    def num_clients(self) -> int:
        return len(self.assignments)


def _make_partition(assignments: list[np.ndarray]) -> Partition:
    sizes = np.array([len(a) for a in assignments], dtype=np.float64)
    return Partition(assignments=assignments, weights=sizes / sizes.sum())


def generate_synthetic(num_classes: int, dim: int, samples_per_class: int,
                       class_separation: float, seed: int) -> Dataset:
    """Generate isotropic unit-variance Gaussian clusters, one per class.

    Class means sit at distance ``class_separation`` from the origin along
    distinct random directions.  Deterministic under ``seed``.
    """
    if num_classes <= 0 or dim <= 0 or samples_per_class <= 0:
        raise ValueError("counts must be positive")
    if class_separation <= 0:
        raise ValueError("class_separation must be positive")
    rng = stream(seed, "synthetic")
    directions = rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = directions * class_separation

    features = np.empty((num_classes * samples_per_class, dim))
    labels = np.empty(num_classes * samples_per_class, dtype=np.int64)
    for c in range(num_classes):
        lo = c * samples_per_class
        hi = lo + samples_per_class
        features[lo:hi] = means[c] + rng.standard_normal((samples_per_class, dim))
        labels[lo:hi] = c
    return Dataset(features=features, labels=labels, num_classes=num_classes)


def _read_idx(path: Path, expect_magic: int):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise IdxFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    if payload.size != math.prod(dims):
        raise IdxFormatError(f"{path}: payload size {payload.size} does not match dims {dims}")
    return dims, payload


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair (big-endian headers, uint8 payload).

    Pixels are scaled to [0, 1] and flattened row-major.
    """
    img_dims, img_data = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    lab_dims, lab_data = _read_idx(Path(labels_path), IDX_LABELS_MAGIC)
    if img_dims[0] != lab_dims[0]:
        raise DatasetMismatchError(
            f"{img_dims[0]} images but {lab_dims[0]} labels")
    count = img_dims[0]
    feat_dim = math.prod(img_dims[1:])
    features = img_data.reshape(count, feat_dim).astype(np.float64) / 255.0
    labels = lab_data.astype(np.int64)
    return Dataset(features=features, labels=labels,
                   num_classes=int(labels.max()) + 1 if count else 1)


def _client_sizes(total: int, num_clients: int) -> list[int]:
    # Equal split, remainder to the first clients.
    base, rem = divmod(total, num_clients)
    return [base + (1 if i < rem else 0) for i in range(num_clients)]


class _ClassPools:
    """Shared shuffled per-class index pools with with-replacement fallback."""

    def __init__(self, labels: np.ndarray, num_classes: int, rng: np.random.Generator):
        self.all_by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]
        self.pools = []
        for idx in self.all_by_class:
            shuffled = idx.copy()
            rng.shuffle(shuffled)
            self.pools.append(list(shuffled))
        self.rng = rng

    def draw(self, classes: list[int], count: int) -> list[int]:
        """Draw `count` samples uniformly from the union of the given classes."""
        out: list[int] = []
        for _ in range(count):
            live = [c for c in classes if self.pools[c]]
            if live:
                sizes = np.array([len(self.pools[c]) for c in live], dtype=np.float64)
                c = live[self.rng.choice(len(live), p=sizes / sizes.sum())]
                out.append(self.pools[c].pop())
            else:
                pool = np.concatenate([self.all_by_class[c] for c in classes
                                       if len(self.all_by_class[c])])
                if pool.size == 0:
                    raise ExhaustedClassError(f"no samples in classes {classes}")
                out.append(int(self.rng.choice(pool)))
        return out


def partition(dataset: Dataset, num_clients: int, spec: PartitionSpec) -> Partition:
    """Split the dataset across clients under the given scheme; deterministic."""
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    spec.validate(dataset.num_classes)

    sizes = _client_sizes(len(dataset), num_clients)
    rng = stream(spec.seed, "partition", spec.scheme)

    if spec.scheme == "iid" or (spec.scheme == "dominant_class" and spec.psi == 0.0):
        perm = rng.permutation(len(dataset))
        assignments, start = [], 0
        for s in sizes:
            assignments.append(np.sort(perm[start:start + s]))
            start += s
        return _make_partition(assignments)

    pools = _ClassPools(dataset.labels, dataset.num_classes, rng)
    assignments = []
    if spec.scheme == "dominant_class":
        for n, s_n in enumerate(sizes):
            dom = n % dataset.num_classes
            others = [c for c in range(dataset.num_classes) if c != dom]
            n_dom = math.ceil(spec.psi * s_n)
            picked = pools.draw([dom], n_dom)
            if s_n - n_dom > 0:
                picked += pools.draw(others, s_n - n_dom)
            assignments.append(np.sort(np.array(picked, dtype=np.int64)))
    else:  # skewed_label
        k_excluded = int(spec.psi)
        for n, s_n in enumerate(sizes):
            excluded = stream(spec.seed, "excluded", n).choice(
                dataset.num_classes, size=k_excluded, replace=False)
            allowed = [c for c in range(dataset.num_classes) if c not in set(excluded.tolist())]
            picked = pools.draw(allowed, s_n)
            assignments.append(np.sort(np.array(picked, dtype=np.int64)))
    return _make_partition(assignments)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded holdout split; at least one sample stays on each side."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    n = len(dataset)
    n_test = min(max(1, round(test_fraction * n)), n - 1)
    perm = stream(seed, "testsplit").permutation(n)
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return (
        Dataset(dataset.features[train_idx], dataset.labels[train_idx], dataset.num_classes),
        Dataset(dataset.features[test_idx], dataset.labels[test_idx], dataset.num_classes),
    )


def export_partition(part: Partition, path) -> None:
    """Write the client -> sample-index mapping as JSON for audit/replay."""
    payload = {str(i): a.tolist() for i, a in enumerate(part.assignments)}
    Path(path).write_text(json.dumps(payload, indent=0, sort_keys=True))


def class_histogram(dataset: Dataset, indices: np.ndarray) -> np.ndarray:
    """Per-class sample counts for one client's assignment."""
    return np.bincount(dataset.labels[indices], minlength=dataset.num_classes)
