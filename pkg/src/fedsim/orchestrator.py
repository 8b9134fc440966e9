"""The round driver: joint selection/ratio optimization, the per-round
protocol, baseline strategies, and global aggregation.

Strategies:

* ``fedcg``      — joint optimization: greedy facility-location selection
                   interleaved with the closed-form ratio plan, iteratively
                   dropping the most-compressed client from the candidates.
* ``fedavg``     — uniform random selection, full updates (theta = 1).
* ``uniform_topk`` — random selection, one shared deadline-feasible ratio.
* ``hetero_topk``  — random selection, per-client ratio plan.
* ``prob_sample``  — capability-weighted sampling, full updates.

All environment draws derive from (seed, round, client) labels, so two
strategies under the same seed see identical partitions, compute times,
and bandwidths.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import datagen, model, selection, simenv
from .compression import (ErrorState, compress_with_feedback, densify,
                          top_k_compress)
from .config import ExperimentConfig
from .ratioplan import (BudgetExhaustedError, BudgetState, ClientTiming,
                        max_feasible_theta, round_deadline, solve_ratios)
from .seeds import derive_seed, stream
from .selection import GradientCache, estimate_alpha, greedy_select, pairwise_distances

FEEDBACK_STRATEGIES = ("fedcg", "uniform_topk", "hetero_topk")


@dataclass
class RoundPlan:
    round: int
    selected: list[int]
    theta: list[float]
    feasible: list[bool]


@dataclass
class RoundRecord:
    round: int
    strategy: str
    selected: list[int]
    theta: list[float]
    feasible: list[bool]
    deadline_s: float | None
    round_time_s: float
    elapsed_s: float
    paper_bits_cum: int
    wire_bits_cum: int
    eta_k: float | None
    alpha_bound: float | None
    beta_mean: float | None
    test_acc: float | None
    test_loss: float | None
    params_hash: str
    conditions: dict | None = None  # probe record only: full environment trace

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def aggregate(global_params: np.ndarray, updates, eta_k: float, M: int) -> np.ndarray:
    """Global step: x - (eta_k / M) * sum of densified updates, summed in
    ascending client-id order so results are schedule-independent."""
    if M != len(updates):
        raise ValueError(f"M={M} but {len(updates)} updates")
    acc = np.zeros_like(global_params)
    for u in sorted(updates, key=lambda u: u.client_id):
        if u.dim != global_params.size:
            raise model.DimensionMismatchError(
                f"update dim {u.dim} != model dim {global_params.size}")
        acc = acc + densify(u)
    return global_params - (eta_k / M) * acc


def joint_optimize(cache: GradientCache, timings: dict[int, ClientTiming],
                   b: BudgetState, M: int, H: int, theta_min: float) -> RoundPlan:
    """Iterative joint selection/compression optimization for one round.

    Each iteration greedily selects a diverse M-subset from the remaining
    candidates, solves the ratio plan for it, adopts the plan if its total
    ratio strictly improves, then drops the candidate with the smallest
    ratio.  The first iteration always adopts, so the result is nonempty.
    """
    universe = cache.clients()
    if M > len(universe):
        raise ValueError(f"M={M} exceeds candidate count {len(universe)}")
    D = pairwise_distances(cache, universe)

    candidates = list(universe)
    best_plan: RoundPlan | None = None
    best_sum = 0.0
    for _ in range(M):
        if len(candidates) < M:
            break
        S = greedy_select(D, candidates, M)
        thetas, feasible = solve_ratios([timings[c] for c in S], H, b, theta_min)
        total = sum(thetas)
        if total > best_sum:
            order = np.argsort(S, kind="stable")
            best_plan = RoundPlan(
                round=b.round_index,
                selected=[S[j] for j in order],
                theta=[thetas[j] for j in order],
                feasible=[feasible[j] for j in order])
            best_sum = total
        j_min = min(range(len(S)), key=lambda j: (thetas[j], S[j]))
        candidates.remove(S[j_min])
    assert best_plan is not None
    return best_plan


def _params_hash(params: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()[:16]


class FederatedRun:
    """Owns the clock, budget, model, caches, and metrics for one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.seed = int(cfg.seed)

        dataset_cfg = cfg.dataset
        if dataset_cfg["kind"] == "synthetic":
            full = datagen.generate_synthetic(
                dataset_cfg["num_classes"], dataset_cfg["dim"],
                dataset_cfg["samples_per_class"], dataset_cfg["class_separation"],
                derive_seed(self.seed, "dataset"))
            self.train, self.test = datagen.train_test_split(
                full, dataset_cfg["test_fraction"], derive_seed(self.seed, "testsplit"))
        else:
            self.train = datagen.load_idx(dataset_cfg["train_images"],
                                          dataset_cfg["train_labels"])
            if "test_images" in dataset_cfg:
                self.test = datagen.load_idx(dataset_cfg["test_images"],
                                             dataset_cfg["test_labels"])
            else:
                self.train, self.test = datagen.train_test_split(
                    self.train, dataset_cfg["test_fraction"],
                    derive_seed(self.seed, "testsplit"))

        m = cfg.model
        self.spec = model.ModelSpec(
            kind=m["kind"], input_dim=self.train.features.shape[1],
            num_classes=self.train.num_classes,
            hidden_dim=m.get("hidden_dim", 0), l2=m.get("l2", 0.0))
        self.dim = model.param_dim(self.spec)
        self.update_bits = 32 * self.dim

        part_cfg = cfg.partition
        self.partition = datagen.partition(
            self.train, cfg.N,
            datagen.PartitionSpec(scheme=part_cfg["scheme"], psi=part_cfg["psi"],
                                  seed=derive_seed(self.seed, "partition")))

        if cfg.profiles_path:
            self.profiles = simenv.load_profiles(cfg.profiles_path)
            if len(self.profiles) != cfg.N:
                raise ValueError("profiles file does not match N")
        else:
            self.profiles = simenv.make_default_profiles(
                cfg.N, class_means_s=tuple(cfg.compute_class_means_s),
                std_frac=cfg.compute_std_frac,
                bw_low_bps=cfg.bw_low_bps, bw_high_bps=cfg.bw_high_bps)

        self.schedule = model.LrSchedule(lam=cfg.lr["lambda"], tau=cfg.lr["tau"])
        self.params = model.init_params(self.spec, stream(self.seed, "init"))
        self.error_state = ErrorState(dim=self.dim)
        self.cache = GradientCache(dim=self.dim)
        self.elapsed_s = 0.0
        self.paper_bits_cum = 0
        self.wire_bits_cum = 0
        self.records: list[RoundRecord] = []
        self.stopped_reason: str | None = None

        threads = int(os.environ.get("FEDSIM_THREADS", "0") or "0")
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    # -- phases ----------------------------------------------------------

    def _client_indices(self, client: int) -> np.ndarray:
        slot = self.profiles[client].partition_slot
        return self.partition.assignments[slot]

    def probe(self) -> RoundRecord:
        """Bootstrap round -1: every client uploads one compressed minibatch
        gradient to seed the selection cache.  Only the cache-using strategy
        pays its simulated cost; every strategy logs the environment trace."""
        cfg = self.cfg
        timings = simenv.sample_round_conditions(self.profiles, -1, self.seed)
        conditions = {str(c): {"compute_time_per_iter": t.compute_time_per_iter,
                               "upload_bps": t.upload_bps}
                      for c, t in sorted(timings.items())}

        round_time_s = 0.0
        paper = wire = 0
        if cfg.strategy == "fedcg":
            updates = []
            for p in self.profiles:
                rng = stream(self.seed, "probe", p.id)
                idx = self._client_indices(p.id)
                batch = idx[rng.integers(0, idx.size, size=cfg.batch_size)]
                _, grad = model.loss_and_gradient(self.spec, self.params, batch, self.train)
                u, _ = top_k_compress(grad, cfg.theta_probe)
                u.client_id, u.round = p.id, -1
                updates.append(u)
            selection.update_cache(self.cache, updates, 1, -1)
            round_time_s = max(simenv.client_time(timings[p.id], cfg.theta_probe,
                                                  1, self.update_bits)
                               for p in self.profiles)
            paper, wire = simenv.account(updates)
            self.elapsed_s += round_time_s
            self.paper_bits_cum += paper
            self.wire_bits_cum += wire

        acc, loss = model.evaluate(self.spec, self.params, self.test)
        record = RoundRecord(
            round=-1, strategy=cfg.strategy, selected=[], theta=[], feasible=[],
            deadline_s=None, round_time_s=round_time_s, elapsed_s=self.elapsed_s,
            paper_bits_cum=self.paper_bits_cum, wire_bits_cum=self.wire_bits_cum,
            eta_k=None, alpha_bound=None, beta_mean=None,
            test_acc=acc, test_loss=loss, params_hash=_params_hash(self.params),
            conditions=conditions)
        self.records.append(record)
        return record

    def _random_selection(self, k: int, weights=None) -> list[int]:
        rng = stream(self.seed, "select", k)
        picked = rng.choice(self.cfg.N, size=self.cfg.M, replace=False, p=weights)
        return sorted(int(c) for c in picked)

    def _build_plan(self, k: int, timings: dict[int, ClientTiming],
                    b: BudgetState, deadline: float) -> RoundPlan:
        cfg = self.cfg
        strategy = cfg.strategy
        if strategy == "fedcg":
            return joint_optimize(self.cache, timings, b, cfg.M, cfg.H, cfg.theta_min)

        if strategy == "prob_sample":
            scores = np.array([
                1.0 / (cfg.H * p.compute_mean_s
                       + self.update_bits / (2 * (p.bw_low_bps + p.bw_high_bps) / 2))
                for p in self.profiles])
            selected = self._random_selection(k, weights=scores / scores.sum())
            thetas = [1.0] * cfg.M
        elif strategy == "fedavg":
            selected = self._random_selection(k)
            thetas = [1.0] * cfg.M
        elif strategy == "uniform_topk":
            selected = self._random_selection(k)
            mfts = [max_feasible_theta(timings[c], cfg.H, deadline, self.update_bits)
                    for c in selected]
            shared = min(1.0, max(cfg.theta_min, min(mfts)))
            thetas = [shared] * cfg.M
        elif strategy == "hetero_topk":
            selected = self._random_selection(k)
            thetas, _ = solve_ratios([timings[c] for c in selected], cfg.H, b,
                                     cfg.theta_min)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")

        feasible = [simenv.client_time(timings[c], th, cfg.H, self.update_bits)
                    <= deadline + 1e-9
                    for c, th in zip(selected, thetas)]
        return RoundPlan(round=k, selected=selected, theta=thetas, feasible=feasible)

    def _local_updates(self, k: int, plan: RoundPlan, eta: float):
        cfg = self.cfg

        def train_one(client):
            return model.local_train(
                self.spec, self.params, self._client_indices(client), self.train,
                cfg.H, cfg.batch_size, eta, stream(self.seed, "sgd", k, client))

        if self._pool is not None:
            locals_ = list(self._pool.map(train_one, plan.selected))
        else:
            locals_ = [train_one(c) for c in plan.selected]

        use_feedback = cfg.strategy in FEEDBACK_STRATEGIES
        updates, betas = [], []
        for client, theta, (lu, _) in zip(plan.selected, plan.theta, locals_):
            if use_feedback:
                u = compress_with_feedback(lu.summed_gradient, theta,
                                           self.error_state, client)
                beta = float(np.linalg.norm(self.error_state.residuals[client]))
            else:
                u, residual = top_k_compress(lu.summed_gradient, theta)
                u.client_id = client
                beta = float(np.linalg.norm(residual))
            u.round = k
            updates.append(u)
            betas.append(beta)
        return updates, betas

    def run_round(self, k: int) -> RoundRecord | None:
        """One protocol round; returns None when the budget is exhausted."""
        cfg = self.cfg
        if self.elapsed_s >= cfg.total_budget_s:
            self.stopped_reason = "budget_exhausted"
            return None
        b = BudgetState(total_budget_s=cfg.total_budget_s, elapsed_s=self.elapsed_s,
                        rounds_total=cfg.K, round_index=k,
                        update_bits=self.update_bits)
        try:
            deadline = round_deadline(b)
        except BudgetExhaustedError:
            self.stopped_reason = "budget_exhausted"
            return None

        timings = simenv.sample_round_conditions(self.profiles, k, self.seed)
        if cfg.oracle_timing:
            plan_timings = timings
        else:
            plan_timings = simenv.sample_round_conditions(self.profiles, k - 1, self.seed)
        plan = self._build_plan(k, plan_timings, b, deadline)
        eta = model.lr_at(self.schedule, k)

        updates, betas = self._local_updates(k, plan, eta)
        round_time_s = simenv.round_time(plan, timings, cfg.H, self.update_bits)
        self.elapsed_s += round_time_s
        paper, wire = simenv.account(updates)
        self.paper_bits_cum += paper
        self.wire_bits_cum += wire

        self.params = aggregate(self.params, updates, eta, len(updates))
        selection.update_cache(self.cache, updates, cfg.H, k)

        universe = self.cache.clients()
        D = pairwise_distances(self.cache, universe)
        alpha_bound, _, _ = estimate_alpha(self.cache, D, plan.selected, universe)

        record = RoundRecord(
            round=k, strategy=cfg.strategy, selected=plan.selected,
            theta=[float(t) for t in plan.theta], feasible=plan.feasible,
            deadline_s=deadline, round_time_s=round_time_s, elapsed_s=self.elapsed_s,
            paper_bits_cum=self.paper_bits_cum, wire_bits_cum=self.wire_bits_cum,
            eta_k=eta, alpha_bound=alpha_bound,
            beta_mean=float(np.mean(betas)) if betas else 0.0,
            test_acc=None, test_loss=None, params_hash=_params_hash(self.params))
        if k % cfg.eval_every == 0:
            record.test_acc, record.test_loss = model.evaluate(
                self.spec, self.params, self.test)
        self.records.append(record)
        return record

    def run(self) -> tuple[list[RoundRecord], dict]:
        self.probe()
        for k in range(self.cfg.K):
            if self.run_round(k) is None:
                break
        else:
            self.stopped_reason = self.stopped_reason or "rounds_complete"
        if self.stopped_reason is None:
            self.stopped_reason = "rounds_complete"

        last = self.records[-1]
        if last.round >= 0 and last.test_acc is None:
            last.test_acc, last.test_loss = model.evaluate(
                self.spec, self.params, self.test)
        if self._pool is not None:
            self._pool.shutdown()
        return self.records, self.summary()

    # -- reporting -------------------------------------------------------

    def summary(self) -> dict:
        cfg = self.cfg
        rounds_completed = sum(1 for r in self.records if r.round >= 0)
        final_acc = final_loss = None
        for r in reversed(self.records):
            if r.test_acc is not None:
                final_acc, final_loss = r.test_acc, r.test_loss
                break
        targets = {}
        for target in cfg.accuracy_targets:
            hit = next((r for r in self.records
                        if r.round >= 0 and r.test_acc is not None
                        and r.test_acc >= target), None)
            targets[f"{target:g}"] = None if hit is None else {
                "time_to_target_s": hit.elapsed_s,
                "paper_bits_to_target": hit.paper_bits_cum,
                "wire_bits_to_target": hit.wire_bits_cum,
                "round": hit.round,
            }
        return {
            "config_hash": cfg.hash(),
            "seed": self.seed,
            "strategy": cfg.strategy,
            "rounds_completed": rounds_completed,
            "stopped_reason": self.stopped_reason,
            "total_time_s": self.elapsed_s,
            "final_test_acc": final_acc,
            "final_test_loss": final_loss,
            "paper_bits_total": self.paper_bits_cum,
            "wire_bits_total": self.wire_bits_cum,
            "targets": targets,
        }


def run_experiment(cfg: ExperimentConfig) -> tuple[list[RoundRecord], dict]:
    """Probe, then rounds until K or budget exhaustion; deterministic."""
    return FederatedRun(cfg).run()


def write_outputs(out_dir, cfg: ExperimentConfig, records: list[RoundRecord],
                  summary: dict) -> None:
    """Emit rounds.jsonl, summary.csv, and config_resolved.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "rounds.jsonl", "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    (out / "config_resolved.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    row = {k: v for k, v in summary.items() if k != "targets"}
    for name, hit in summary["targets"].items():
        row[f"time_to_target_{name}"] = "" if hit is None else hit["time_to_target_s"]
        row[f"paper_bits_to_target_{name}"] = "" if hit is None else hit["paper_bits_to_target"]
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)
