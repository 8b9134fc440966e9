"""The simulated world: per-client compute-time and bandwidth processes,
round-time evaluation, and traffic accounting.

Per-iteration compute time is Gaussian, truncated below at 10% of the mean
so no draw is nonpositive; upload bandwidth is uniform in the profile's
range and resampled every round.  Every draw is a pure function of
(master seed, round, client id).  Downlink time is ignored.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .compression import SparseUpdate, wire_bits
from .ratioplan import ClientTiming
from .seeds import stream

# Default device classes: three tiers of per-iteration means, std 10% of
# the mean.  Placeholder magnitudes, config-overridable and echoed in logs.
DEFAULT_CLASS_MEANS_S = (0.08, 0.12, 0.20)
DEFAULT_STD_FRAC = 0.1
DEFAULT_BW_LOW_BPS = 1e6
DEFAULT_BW_HIGH_BPS = 5e6


@dataclass(frozen=True)
class ClientProfile:
    id: int
    compute_mean_s: float
    compute_std_s: float
    bw_low_bps: float
    bw_high_bps: float
    partition_slot: int

    def __post_init__(self):
        if self.compute_mean_s <= 0 or self.compute_std_s < 0:
            raise ValueError("compute time parameters out of range")
        if not 0 < self.bw_low_bps <= self.bw_high_bps:
            raise ValueError("bandwidth range must satisfy 0 < low <= high")


def make_default_profiles(num_clients: int,
                          class_means_s=DEFAULT_CLASS_MEANS_S,
                          std_frac: float = DEFAULT_STD_FRAC,
                          bw_low_bps: float = DEFAULT_BW_LOW_BPS,
                          bw_high_bps: float = DEFAULT_BW_HIGH_BPS) -> list[ClientProfile]:
    """Round-robin assignment of clients to the device classes."""
    profiles = []
    for i in range(num_clients):
        mean = class_means_s[i % len(class_means_s)]
        profiles.append(ClientProfile(
            id=i, compute_mean_s=mean, compute_std_s=std_frac * mean,
            bw_low_bps=bw_low_bps, bw_high_bps=bw_high_bps, partition_slot=i))
    return profiles


def save_profiles(profiles: list[ClientProfile], path) -> None:
    Path(path).write_text(json.dumps([asdict(p) for p in profiles], indent=2))


def load_profiles(path) -> list[ClientProfile]:
    records = json.loads(Path(path).read_text())
    return [ClientProfile(**r) for r in records]


def sample_round_conditions(profiles: list[ClientProfile], round_index: int,
                            seed: int) -> dict[int, ClientTiming]:
    """Per-client (compute time, upload speed) for one round; deterministic."""
    timings = {}
    for p in profiles:
        rng = stream(seed, "net", round_index, p.id)
        compute = max(0.1 * p.compute_mean_s,
                      float(rng.normal(p.compute_mean_s, p.compute_std_s)))
        upload = float(rng.uniform(p.bw_low_bps, p.bw_high_bps))
        timings[p.id] = ClientTiming(compute_time_per_iter=compute, upload_bps=upload)
    return timings


def client_time(timing: ClientTiming, theta: float, H: int, R_bits: int) -> float:
    return H * timing.compute_time_per_iter + theta * R_bits / timing.upload_bps


def round_time(plan, timings: dict[int, ClientTiming], H: int, R_bits: int) -> float:
    """Synchronous round time: the slowest selected client."""
    if not plan.selected:
        raise ValueError("plan must select at least one client")
    return max(client_time(timings[c], theta, H, R_bits)
               for c, theta in zip(plan.selected, plan.theta))


def account(updates: list[SparseUpdate]) -> tuple[int, int]:
    """Cumulative (paper-model bits, wire bits) for a round's uploads."""
    paper_total = wire_total = 0
    for u in updates:
        paper, wire = wire_bits(u)
        paper_total += paper
        wire_total += wire
    return paper_total, wire_total
