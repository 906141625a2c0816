"""Brute-force risk bounds on finite domains and the ideal-replay mixture.

Hypotheses are represented as label tables: ``h[i]`` is the class assigned to
point ``i``. Every quantity is computed by exhaustive enumeration, so the
bounds can be checked exactly rather than estimated.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

BOUND_SLACK = 1e-12


def zero_one_loss(a, b) -> np.ndarray:
    return (np.asarray(a) != np.asarray(b)).astype(np.float64)


def _check_dist(p, n: int | None = None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("a distribution must be a 1-D probability vector")
    if n is not None and len(p) != n:
        raise ValueError(f"distribution has {len(p)} entries, domain has {n}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("distribution must be nonnegative and sum to 1")
    return p


@dataclass
class FiniteDomain:
    points: list
    dists: np.ndarray  # (tasks, points)
    labels: np.ndarray  # the labeling function f as a table

    def __post_init__(self):
        if len(set(self.points)) != len(self.points):
            raise ValueError("domain points must be distinct")
        if len(self.points) > 16:
            raise ValueError("finite domains are limited to 16 points")
        self.dists = np.atleast_2d(np.asarray(self.dists, dtype=np.float64))
        for p in self.dists:
            _check_dist(p, len(self.points))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (len(self.points),):
            raise ValueError("the labeling function must assign one class to every point")


@dataclass
class HypothesisClass:
    tables: np.ndarray  # (|H|, points)

    def __post_init__(self):
        self.tables = np.atleast_2d(np.asarray(self.tables, dtype=np.int64))
        if len(self.tables) == 0:
            raise ValueError("hypothesis class is empty")
        if len(self.tables) > 64:
            raise ValueError("hypothesis classes are limited to 64 members")

    @classmethod
    def from_functions(cls, points: Sequence, funcs: Sequence[Callable]) -> "HypothesisClass":
        return cls([[fn(p) for p in points] for fn in funcs])

    def __len__(self) -> int:
        return len(self.tables)

    @property
    def n_points(self) -> int:
        return self.tables.shape[1]


@dataclass
class RiskReport:
    target_risk: float  # R_D(h, f)
    source_risk: float  # R_Dhat(h, f_Dhat)
    discrepancy: float
    combined_error: float  # lambda
    bound: float
    bound_holds: bool
    f_target_index: int
    f_source_index: int

    def to_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in asdict(self).items()}


def empirical_risk(h: Callable, dataset, loss: Callable = zero_one_loss) -> float:
    """Mean loss of ``h`` over ``(x, y)`` pairs."""
    pairs = list(dataset)
    if not pairs:
        raise ValueError("empirical risk of an empty dataset")
    return float(np.mean([float(loss(h(x), y)) for x, y in pairs]))


def expected_risk(dist, h, g, loss: Callable = zero_one_loss) -> float:
    """R_D(h, g) = sum_x D(x) loss(h(x), g(x)) for label tables ``h`` and ``g``."""
    return float(np.dot(np.asarray(dist, dtype=np.float64), loss(h, g)))


def _pair_losses(H: HypothesisClass, loss: Callable) -> np.ndarray:
    """L[a, b, x] = loss(H_b(x), H_a(x))."""
    t = H.tables
    return loss(t[None, :, :], t[:, None, :])


def discrepancy_distance(dist_a, dist_b, H: HypothesisClass, loss: Callable = zero_one_loss) -> float:
    """Max over (h, h') in H x H of |E_a loss(h', h) - E_b loss(h', h)|."""
    a = _check_dist(dist_a, H.n_points)
    b = _check_dist(dist_b, H.n_points)
    return float(np.max(np.abs(_pair_losses(H, loss) @ (a - b))))


def _best_fit(dist, f, H: HypothesisClass, loss: Callable) -> int:
    risks = loss(H.tables, np.asarray(f)[None, :]) @ dist
    return int(np.argmin(risks))  # ties resolve to the first member of H


def theorem1_report(dist_target, dist_source, h, f, H: HypothesisClass,
                    loss: Callable = zero_one_loss) -> RiskReport:
    """R_D(h, f) <= R_Dhat(h, f_Dhat) + discrepancy + lambda, evaluated exactly.

    ``lambda = R_D(h, f_D) + R_Dhat(f_D, f_Dhat)`` with ``f_D`` and ``f_Dhat``
    the best fits to ``f`` in H under each distribution.
    """
    d_t = _check_dist(dist_target, H.n_points)
    d_s = _check_dist(dist_source, H.n_points)
    h = np.asarray(h)
    f = np.asarray(f)
    i_t = _best_fit(d_t, f, H, loss)
    i_s = _best_fit(d_s, f, H, loss)
    f_t, f_s = H.tables[i_t], H.tables[i_s]
    lhs = expected_risk(d_t, h, f, loss)
    src = expected_risk(d_s, h, f_s, loss)
    disc = discrepancy_distance(d_t, d_s, H, loss)
    lam = expected_risk(d_t, h, f_t, loss) + expected_risk(d_s, f_t, f_s, loss)
    rhs = src + disc + lam
    return RiskReport(lhs, src, disc, lam, rhs, bool(lhs <= rhs + BOUND_SLACK), i_t, i_s)


def cumulative_mixture(task_dists, i: int) -> np.ndarray:
    """Uniform mixture of the first ``i`` task distributions."""
    task_dists = np.asarray(task_dists, dtype=np.float64)
    if not 1 <= i <= len(task_dists):
        raise ValueError("prefix length out of range")
    return task_dists[:i].mean(axis=0)


def theorem2_reports(task_dists, replay_dists, h, f, H: HypothesisClass,
                     loss: Callable = zero_one_loss) -> list[RiskReport]:
    """One Theorem-1 report per task i: cumulative target D^{1:i} against replay distribution i."""
    if len(task_dists) != len(replay_dists):
        raise ValueError("need one replay distribution per task")
    return [theorem1_report(cumulative_mixture(task_dists, i + 1), replay_dists[i], h, f, H, loss)
            for i in range(len(task_dists))]


def theorem2_accumulated(reports: list[RiskReport]) -> tuple[float, float, bool]:
    """Sum of per-task left/right sides and whether the accumulated bound holds."""
    if not reports:
        raise ValueError("no reports to accumulate")
    lhs = float(sum(r.target_risk for r in reports))
    rhs = float(sum(r.source_risk + r.discrepancy + r.combined_error for r in reports))
    return lhs, rhs, bool(lhs <= rhs + BOUND_SLACK)


def ideal_replay_recursion(task_dists, r: float) -> np.ndarray:
    """p_1, then p_k = (1 - r) p_{k-1} + r q_k: what a perfect generator would store."""
    if len(task_dists) == 0:
        raise ValueError("no task distributions")
    if not 0.0 < r <= 1.0:
        raise ValueError("r must lie in (0, 1]")
    out = np.asarray(task_dists[0], dtype=np.float64).copy()
    for q in task_dists[1:]:
        out = (1.0 - r) * out + r * np.asarray(q, dtype=np.float64)
    return out


def mixture_task_weights(K: int, r: float) -> np.ndarray:
    """Closed form of the recursion: weight of each task after learning K of them."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0.0 < r <= 1.0:
        raise ValueError("r must lie in (0, 1]")
    i = np.arange(1, K + 1)
    w = r * (1.0 - r) ** (K - i)
    w[0] = (1.0 - r) ** (K - 1)
    return w


# ------------------------------------------------------------------ random instances

def random_instance(rng: np.random.Generator, n_points: int = 6, n_classes: int = 3, n_hyp: int = 8,
                    n_tasks: int = 1):
    """Random distributions, a random class H containing the labeling function f, and h drawn from H."""
    tables = rng.integers(0, n_classes, size=(n_hyp, n_points))
    f = tables[rng.integers(n_hyp)].copy()
    H = HypothesisClass(tables)
    h = tables[rng.integers(n_hyp)].copy()
    targets = rng.dirichlet(np.ones(n_points), size=n_tasks)
    sources = rng.dirichlet(np.ones(n_points), size=n_tasks)
    return targets, sources, h, f, H


def run_bound_suite(n_theorem1: int = 200, n_theorem2: int = 100, n_tasks: int = 3, seed: int = 0) -> dict:
    """Evaluate both theorems on random finite instances and collect JSON-ready reports."""
    rng = np.random.default_rng(seed)
    t1 = []
    for _ in range(n_theorem1):
        n_points = int(rng.integers(2, 17))
        targets, sources, h, f, H = random_instance(rng, n_points, int(rng.integers(2, 5)),
                                                    int(rng.integers(1, 65)))
        t1.append(theorem1_report(targets[0], sources[0], h, f, H).to_dict())
    t2 = []
    for _ in range(n_theorem2):
        n_points = int(rng.integers(2, 17))
        targets, sources, h, f, H = random_instance(rng, n_points, int(rng.integers(2, 5)),
                                                    int(rng.integers(1, 65)), n_tasks)
        reports = theorem2_reports(targets, sources, h, f, H)
        lhs, rhs, holds = theorem2_accumulated(reports)
        t2.append({"lhs": lhs, "rhs": rhs, "holds": holds, "per_task": [r.to_dict() for r in reports]})
    return {
        "seed": seed,
        "theorem1": {"instances": t1, "violations": sum(not r["bound_holds"] for r in t1)},
        "theorem2": {"instances": t2, "violations": sum(not r["holds"] for r in t2)},
    }


def write_report(path, suite: dict) -> None:
    with open(path, "w") as fh:
        json.dump(suite, fh, indent=2, sort_keys=True)
        fh.write("\n")
