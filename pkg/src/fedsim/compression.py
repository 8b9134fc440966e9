"""Top-k sparsification with per-client error feedback.

The compressor keeps the ``k = max(1, ceil(theta * d))`` entries of largest
magnitude (ties broken toward the lower index).  Error feedback compresses
``gradient + residual`` and stores the un-sent mass back into the per-client
residual, so the densified transmissions plus the final residual always
telescope to the sum of raw gradients.

In-memory values are float64 so the simulation stays bit-exact; the wire
encoding stores values as 32-bit floats per the published format, which is
the one lossy step (byte round-trips of the encoded form are exact).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

WIRE_MAGIC = 0x53505531  # "SPU1"
WIRE_HEADER_BITS = 128
BITS_PER_VALUE = 32      # uncompressed-update size model: R = 32 * d


class DimensionMismatchError(ValueError):
    pass


@dataclass
class SparseUpdate:
    dim: int
    indices: np.ndarray  # strictly increasing, int64
    values: np.ndarray   # float64, same length
    theta: float
    client_id: int = -1
    round: int = -1


@dataclass
class ErrorState:
    """Per-client accumulated un-sent gradient mass."""
    dim: int
    residuals: dict[int, np.ndarray] = field(default_factory=dict)

    def residual(self, client: int) -> np.ndarray:
        if client not in self.residuals:
            self.residuals[client] = np.zeros(self.dim)
        return self.residuals[client]


def top_k_count(theta: float, dim: int) -> int:
    return max(1, math.ceil(theta * dim))


def top_k_compress(g: np.ndarray, theta: float) -> tuple[SparseUpdate, np.ndarray]:
    """Keep the k largest-|value| entries; return (update, residual)."""
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    d = g.size
    k = top_k_count(theta, d)
    # lexsort: primary key last -> sort by -|g|, ties by lower index
    order = np.lexsort((np.arange(d), -np.abs(g)))
    keep = np.sort(order[:k])
    residual = g.copy()
    residual[keep] = 0.0
    update = SparseUpdate(dim=d, indices=keep.astype(np.int64),
                          values=g[keep].copy(), theta=float(theta))
    return update, residual


def compress_with_feedback(g: np.ndarray, theta: float, state: ErrorState,
                           client: int) -> SparseUpdate:
    """Compress the error-compensated gradient and store the new residual."""
    compensated = g + state.residual(client)
    update, residual = top_k_compress(compensated, theta)
    state.residuals[client] = residual
    update.client_id = client
    return update


def densify(u: SparseUpdate) -> np.ndarray:
    out = np.zeros(u.dim)
    out[u.indices] = u.values
    return out


def compression_error(u: SparseUpdate, g_plus_residual: np.ndarray) -> float:
    """Euclidean distance between the sent update and its compression input."""
    if g_plus_residual.size != u.dim:
        raise DimensionMismatchError(
            f"vector length {g_plus_residual.size} != update dim {u.dim}")
    return float(np.linalg.norm(densify(u) - g_plus_residual))


def wire_bits(u: SparseUpdate) -> tuple[int, int]:
    """(paper-model bits theta*R with R = 32 d, actual wire bits)."""
    paper_model_bits = round(u.theta * BITS_PER_VALUE * u.dim)
    actual = len(u.indices) * (32 + 32) + WIRE_HEADER_BITS
    return paper_model_bits, actual


def serialize(u: SparseUpdate) -> bytes:
    """128-bit header (magic, dim, count, round), then big-endian 32-bit
    indices, then 32-bit floats."""
    head = struct.pack(">IIII", WIRE_MAGIC, u.dim, len(u.indices), u.round & 0xFFFFFFFF)
    return (head
            + u.indices.astype(">i4").tobytes()
            + u.values.astype(">f4").tobytes())


def deserialize(raw: bytes) -> SparseUpdate:
    if len(raw) < 16:
        raise ValueError("truncated update: missing header")
    magic, dim, count, rnd = struct.unpack(">IIII", raw[:16])
    if magic != WIRE_MAGIC:
        raise ValueError(f"bad update magic 0x{magic:08x}")
    need = 16 + count * 8
    if len(raw) != need:
        raise ValueError(f"update payload is {len(raw)} bytes, expected {need}")
    indices = np.frombuffer(raw, dtype=">i4", count=count, offset=16).astype(np.int64)
    values = np.frombuffer(raw, dtype=">f4", count=count, offset=16 + count * 4).astype(np.float64)
    theta = count / dim if dim else 1.0
    return SparseUpdate(dim=dim, indices=indices, values=values, theta=theta,
                        round=rnd if rnd != 0xFFFFFFFF else -1)
