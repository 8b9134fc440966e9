"""Local models, losses, gradients, and the H-iteration local SGD loop.

Two model kinds share one flat parameter vector:

* ``softmax_regression``: convex multinomial logistic regression.
* ``two_layer_perceptron``: tanh hidden layer, the non-convex stand-in.

The local update is the summed minibatch gradient over H iterations; the
loop maintains ``params = global - eta * summed_gradient`` by construction
so that identity holds to the last bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"FSCKPT01"

MODEL_KINDS = ("softmax_regression", "two_layer_perceptron")


class DimensionMismatchError(ValueError):
    """Parameter vector length does not match the model spec."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "two_layer_perceptron" and self.hidden_dim <= 0:
            raise ValueError("two_layer_perceptron requires hidden_dim > 0")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")


@dataclass(frozen=True)
class LrSchedule:
    lam: float  # decay numerator
    tau: float  # decay offset

    def __post_init__(self):
        if self.lam <= 0 or self.tau <= 0:
            raise ValueError("schedule constants must be positive")


@dataclass(frozen=True)
class LocalUpdate:
    summed_gradient: np.ndarray  # sum of the H minibatch gradients
    iterations: int
    samples_used: int


def param_dim(spec: ModelSpec) -> int:
    if spec.kind == "softmax_regression":
        return spec.input_dim * spec.num_classes + spec.num_classes
    h, c = spec.hidden_dim, spec.num_classes
    return spec.input_dim * h + h + h * c + c


def init_params(spec: ModelSpec, seed_stream: np.random.Generator | None = None) -> np.ndarray:
    """Zero init for softmax; small random init to break perceptron symmetry."""
    d = param_dim(spec)
    if spec.kind == "softmax_regression" or seed_stream is None:
        return np.zeros(d)
    return 0.01 * seed_stream.standard_normal(d)


def _check_params(spec: ModelSpec, params: np.ndarray) -> None:
    if params.shape != (param_dim(spec),):
        raise DimensionMismatchError(
            f"params length {params.shape} != ({param_dim(spec)},) for {spec.kind}")


def _unpack_softmax(spec: ModelSpec, params: np.ndarray):
    c, di = spec.num_classes, spec.input_dim
    w = params[:c * di].reshape(c, di)
    b = params[c * di:]
    return w, b


def _unpack_mlp(spec: ModelSpec, params: np.ndarray):
    di, h, c = spec.input_dim, spec.hidden_dim, spec.num_classes
    o = 0
    w1 = params[o:o + di * h].reshape(h, di); o += di * h
    b1 = params[o:o + h]; o += h
    w2 = params[o:o + h * c].reshape(c, h); o += h * c
    b2 = params[o:]
    return w1, b1, w2, b2


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_gradient(spec: ModelSpec, params: np.ndarray, batch, dataset) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch plus l2/2 * ||params||^2, with its
    exact gradient (same flat layout as ``params``)."""
    _check_params(spec, params)
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("batch must be nonempty")
    x = dataset.features[batch]
    y = dataset.labels[batch]
    m = len(batch)

    if spec.kind == "softmax_regression":
        w, b = _unpack_softmax(spec, params)
        p = _softmax(x @ w.T + b)
        ce = -np.mean(np.log(np.maximum(p[np.arange(m), y], 1e-300)))
        delta = p.copy()
        delta[np.arange(m), y] -= 1.0
        gw = delta.T @ x / m
        gb = delta.mean(axis=0)
        grad = np.concatenate([gw.ravel(), gb])
    else:
        w1, b1, w2, b2 = _unpack_mlp(spec, params)
        a = np.tanh(x @ w1.T + b1)
        p = _softmax(a @ w2.T + b2)
        ce = -np.mean(np.log(np.maximum(p[np.arange(m), y], 1e-300)))
        delta2 = p.copy()
        delta2[np.arange(m), y] -= 1.0
        gw2 = delta2.T @ a / m
        gb2 = delta2.mean(axis=0)
        delta1 = (delta2 @ w2) * (1.0 - a * a)
        gw1 = delta1.T @ x / m
        gb1 = delta1.mean(axis=0)
        grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])

    loss = ce + 0.5 * spec.l2 * float(params @ params)
    grad = grad + spec.l2 * params
    return float(loss), grad


def lr_at(schedule: LrSchedule, k: int) -> float:
    if k < 0:
        raise ValueError("round index must be >= 0")
    return schedule.lam / (k + schedule.tau)


def local_train(spec: ModelSpec, global_params: np.ndarray, client_data, dataset,
                H: int, batch_size: int, eta_k: float,
                rng_stream: np.random.Generator) -> tuple[LocalUpdate, np.ndarray]:
    """Run H minibatch SGD steps from the global model.

    Minibatches are drawn uniformly with replacement from the client's
    sample indices.  Returns the summed gradient and the final local
    parameters; ``final == global - eta_k * summed`` exactly (the loop
    recomputes the local point from the running sum, so the telescoped
    identity is bitwise, not just analytic).
    """
    _check_params(spec, global_params)
    client_data = np.asarray(client_data, dtype=np.int64)
    if H < 1 or batch_size < 1 or client_data.size == 0:
        raise ValueError("H >= 1, batch_size >= 1, nonempty client data required")

    summed = np.zeros_like(global_params)
    params = global_params.copy()
    for _ in range(H):
        batch = client_data[rng_stream.integers(0, client_data.size, size=batch_size)]
        _, grad = loss_and_gradient(spec, params, batch, dataset)
        summed = summed + grad
        params = global_params - eta_k * summed
    update = LocalUpdate(summed_gradient=summed, iterations=H,
                         samples_used=H * batch_size)
    return update, params


def evaluate(spec: ModelSpec, params: np.ndarray, test) -> tuple[float, float]:
    """Accuracy (argmax, ties to the lowest class id) and mean loss on a dataset."""
    _check_params(spec, params)
    if len(test) == 0:
        raise ValueError("test set must be nonempty")
    loss, _ = loss_and_gradient(spec, params, np.arange(len(test)), test)
    x = test.features
    if spec.kind == "softmax_regression":
        w, b = _unpack_softmax(spec, params)
        scores = x @ w.T + b
    else:
        w1, b1, w2, b2 = _unpack_mlp(spec, params)
        scores = np.tanh(x @ w1.T + b1) @ w2.T + b2
    predictions = np.argmax(scores, axis=1)
    accuracy = float(np.mean(predictions == test.labels))
    return accuracy, float(loss)


def save_checkpoint(path, params: np.ndarray) -> None:
    """Flat little-endian float64 array, 16-byte header (magic + dimension)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", params.size))
        fh.write(np.ascontiguousarray(params, dtype="<f8").tobytes())


def load_checkpoint(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (d,) = struct.unpack("<Q", raw[8:16])
    values = np.frombuffer(raw, dtype="<f8", offset=16)
    if values.size != d:
        raise ValueError(f"{path}: header says {d} values, found {values.size}")
    return values.astype(np.float64)
