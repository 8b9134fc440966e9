"""Per-round compression-ratio planning under the remaining time budget.

The per-round problem minimizes the total compression error subject to a
shared deadline (the remaining budget spread evenly over remaining rounds)
and the box constraint 0 < theta <= 1.  The objective is separable and the
deadline binds each client independently, so the optimum is closed-form:
each client takes the largest ratio its compute slack and link speed allow.
Clients that cannot finish even at the floor ratio are flagged infeasible;
the joint optimizer's removal step is what eventually drops them.
"""

from __future__ import annotations

from dataclasses import dataclass


class BudgetExhaustedError(RuntimeError):
    """No simulated time remains for the rounds still to run."""


@dataclass(frozen=True)
class ClientTiming:
    compute_time_per_iter: float  # seconds for one local iteration
    upload_bps: float             # current-round upload speed, bits/second

    def __post_init__(self):
        if not (self.compute_time_per_iter > 0 and self.upload_bps > 0):
            raise ValueError("timing values must be strictly positive")


@dataclass
class BudgetState:
    total_budget_s: float
    elapsed_s: float
    rounds_total: int
    round_index: int
    update_bits: int  # R = 32 * parameter dimension

    def __post_init__(self):
        if self.elapsed_s < 0 or not 0 <= self.round_index < max(self.rounds_total, 1):
            raise ValueError("invalid budget state")


def round_deadline(b: BudgetState) -> float:
    """Remaining budget spread evenly over the remaining rounds."""
    remaining = b.total_budget_s - b.elapsed_s
    if remaining <= 0:
        raise BudgetExhaustedError(
            f"elapsed {b.elapsed_s:.3f}s >= budget {b.total_budget_s:.3f}s")
    return remaining / (b.rounds_total - b.round_index)


def max_feasible_theta(t: ClientTiming, H: int, D: float, R_bits: int) -> float:
    """Largest ratio finishing within deadline D, clamped onto [0, 1].

    0 means the client cannot finish its compute phase at all.
    """
    if D <= 0:
        raise ValueError("deadline must be positive")
    slack = D - H * t.compute_time_per_iter
    theta = slack * t.upload_bps / R_bits
    return min(1.0, max(0.0, theta))


def solve_ratios(timings: list[ClientTiming], H: int, b: BudgetState,
                 theta_min: float) -> tuple[list[float], list[bool]]:
    """Optimal per-client ratios for the current round.

    Each theta is ``max(theta_min, max_feasible_theta)``; the feasible flag
    records whether the client can actually meet the deadline at that ratio.
    """
    if not timings:
        raise ValueError("timings must be nonempty")
    if not 0.0 < theta_min <= 1.0:
        raise ValueError("theta_min must be in (0, 1]")
    deadline = round_deadline(b)
    thetas, feasible = [], []
    for t in timings:
        mft = max_feasible_theta(t, H, deadline, b.update_bits)
        thetas.append(max(theta_min, mft))
        feasible.append(mft >= theta_min)
    return thetas, feasible
