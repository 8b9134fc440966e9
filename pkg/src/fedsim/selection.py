"""Diverse client selection via facility-location submodular maximization.

The server keeps one representative vector per client (its latest
per-iteration-averaged update).  Selecting a round's subset maximizes

    coverage(S) = sum_n (d_max - min_{i in S} dist(n, i))

over the candidate universe, greedily, with the classic (1 - 1/e)
guarantee.  The same distances yield an upper bound on how far the
selected subset's weighted aggregate gradient can sit from the full
aggregate (the ``alpha_bound`` diagnostic).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compression import SparseUpdate, densify


class MissingClientError(KeyError):
    """A candidate has no cached representative yet."""


class EmptySubsetError(ValueError):
    pass


@dataclass
class GradientCache:
    dim: int
    representatives: dict[int, np.ndarray] = field(default_factory=dict)
    last_updated_round: dict[int, int] = field(default_factory=dict)

    def put(self, client: int, rep: np.ndarray, round_index: int) -> None:
        if rep.size != self.dim:
            raise ValueError(f"representative length {rep.size} != {self.dim}")
        self.representatives[client] = rep
        self.last_updated_round[client] = round_index

    def clients(self) -> list[int]:
        return sorted(self.representatives)


@dataclass(frozen=True)
class DistanceMatrix:
    ids: tuple[int, ...]
    values: np.ndarray  # symmetric, zero diagonal

    def __post_init__(self):
        object.__setattr__(self, "_pos", {c: i for i, c in enumerate(self.ids)})

    def pos(self, client: int) -> int:
        return self._pos[client]


def pairwise_distances(cache: GradientCache, candidates) -> DistanceMatrix:
    """Euclidean distances between cached representatives."""
    candidates = list(candidates)
    missing = [c for c in candidates if c not in cache.representatives]
    if missing:
        raise MissingClientError(f"no cached representative for clients {missing}")
    reps = np.stack([cache.representatives[c] for c in candidates])
    sq = np.sum(reps * reps, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (reps @ reps.T)
    np.maximum(d2, 0.0, out=d2)
    values = np.sqrt(d2)
    np.fill_diagonal(values, 0.0)
    values = 0.5 * (values + values.T)
    return DistanceMatrix(ids=tuple(candidates), values=values)


def _universe_rows(D: DistanceMatrix, universe) -> np.ndarray:
    return np.array([D.pos(c) for c in universe], dtype=np.intp)


def facility_value(D: DistanceMatrix, universe, S) -> float:
    """Coverage score sum_n (d_max - min_{i in S} dist(n, i)); empty S scores 0."""
    S = list(S)
    if not S:
        raise EmptySubsetError("facility value of the empty set is undefined; "
                               "marginal-gain callers treat it as 0")
    rows = _universe_rows(D, universe)
    cols = _universe_rows(D, S)
    sub = D.values[np.ix_(rows, rows)]
    d_max = float(sub.max())
    mins = D.values[np.ix_(rows, cols)].min(axis=1)
    return float(np.sum(d_max - mins))


def greedy_select(D: DistanceMatrix, universe, M: int) -> list[int]:
    """Greedy argmax of coverage marginal gains; ties go to the lower id."""
    universe = sorted(universe)
    if not 1 <= M <= len(universe):
        raise ValueError(f"M must be in [1, {len(universe)}], got {M}")
    rows = _universe_rows(D, universe)
    sub = D.values[np.ix_(rows, rows)]
    d_max = float(sub.max())

    selected: list[int] = []
    chosen = np.zeros(len(universe), dtype=bool)
    # min distance from each universe member to the current selection
    best = np.full(len(universe), np.inf)
    for _ in range(M):
        # coverage(S + {c}) uses min(best, dist_to_c); the shared -coverage(S)
        # term is constant across candidates and can be dropped
        scores = np.sum(d_max - np.minimum(best[:, None], sub), axis=0)
        choice = None
        for j in range(len(universe)):
            if chosen[j]:
                continue
            if choice is None or scores[j] > scores[choice]:
                choice = j
        selected.append(universe[choice])
        chosen[choice] = True
        best = np.minimum(best, sub[:, choice])
    return selected


def update_cache(cache: GradientCache, updates: list[SparseUpdate], H: int,
                 round_index: int) -> None:
    """Store each uploading client's per-iteration-averaged update."""
    for u in updates:
        cache.put(u.client_id, densify(u) / H, round_index)


def estimate_alpha(cache: GradientCache, D: DistanceMatrix, S, universe):
    """Upper bound on the aggregate-approximation error, with the induced
    nearest-selected mapping and its multiplicities.

    Returns ``(alpha_bound, pi, gamma)`` where ``pi[n]`` is the selected
    client nearest to ``n`` and ``gamma[i]`` counts the clients mapped to
    ``i``; ``sum(gamma.values()) == len(universe)``.
    """
    S = sorted(S)
    if not S:
        raise EmptySubsetError("subset must be nonempty")
    universe = list(universe)
    rows = _universe_rows(D, universe)
    cols = _universe_rows(D, S)
    dist = D.values[np.ix_(rows, cols)]
    nearest = np.argmin(dist, axis=1)
    pi = {n: S[j] for n, j in zip(universe, nearest)}
    gamma = {i: 0 for i in S}
    for n in universe:
        gamma[pi[n]] += 1
    alpha = float(np.mean(dist[np.arange(len(universe)), nearest]))
    return alpha, pi, gamma
