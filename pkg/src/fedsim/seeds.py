"""Deterministic derivation of every stochastic stream from one master seed.

All randomness in the simulator flows through `stream`, keyed by a stable
label tuple (e.g. ``("net", round, client_id)``).  Streams are therefore
independent of strategy choice and call order, which is what makes paired
strategy comparisons under a shared seed meaningful.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """Hash (master seed, labels) into a 64-bit stream seed."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for label in labels:
        h.update(b"|")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


def stream(master: int, *labels) -> np.random.Generator:
    """Return an independent Generator for the given label tuple."""
    return np.random.default_rng(derive_seed(master, *labels))
