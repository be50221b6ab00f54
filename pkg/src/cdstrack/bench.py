"""Timing of the localized solver against replicator dynamics on the whole graph."""
from __future__ import annotations

import csv
import io
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .simplex_qp import ConstraintSpec, alpha_bound, fast_cdsc, local_maximizer

BENCH_SIZES = (100, 500, 1000, 2000)
BENCH_HEADER = ["n", "instance", "query", "alpha", "time_full", "time_fast", "ratio",
                "objective_full", "objective_fast", "objective_gap", "support_fast",
                "converged_full", "converged_fast"]


@dataclass
class BenchRow:
    n: int
    instance: int
    query: int
    alpha: float
    time_full: float
    time_fast: float
    objective_full: float
    objective_fast: float
    support_fast: int
    converged_full: bool
    converged_fast: bool

    @property
    def ratio(self) -> float:
        return self.time_full / self.time_fast

    @property
    def objective_gap(self) -> float:
        return abs(self.objective_full - self.objective_fast)

    def as_list(self):
        return [self.n, self.instance, self.query, repr(self.alpha), f"{self.time_full:.6f}",
                f"{self.time_fast:.6f}", f"{self.ratio:.3f}", repr(self.objective_full),
                repr(self.objective_fast), f"{self.objective_gap:.3e}", self.support_fast,
                int(self.converged_full), int(self.converged_fast)]


def random_sparse_affinity(rng, n: int, density: float = 0.01) -> np.ndarray:
    """Symmetric affinity with about ``density`` of the off-diagonal pairs
    carrying a weight drawn uniformly from (0, 1]."""
    if n < 2:
        raise ValueError("need at least two vertices")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < density
    w = 1.0 - rng.random(int(keep.sum()))
    A = np.zeros((n, n))
    A[iu[0][keep], iu[1][keep]] = w
    return A + A.T


def bench_instance(A, query: int, alpha_mode: str = "fast", n: int = 0, instance: int = 0) -> BenchRow:
    """Solve the single-vertex constrained problem both ways with one shared alpha."""
    alpha = alpha_bound(A, [query], alpha_mode)
    spec = ConstraintSpec(A.shape[0], (query,), alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        t0 = time.perf_counter()
        fast = fast_cdsc(A, [query], alpha=alpha)
        t_fast = time.perf_counter() - t0
        t0 = time.perf_counter()
        full = local_maximizer(A, spec)
        t_full = time.perf_counter() - t0
    return BenchRow(n or A.shape[0], instance, int(query), float(alpha), t_full, t_fast,
                    float(full.objective), float(fast.objective), int(len(fast.support)),
                    bool(full.converged), bool(fast.converged))


def run_speedup(sizes=BENCH_SIZES, instances: int = 3, density: float = 0.01,
                alpha_mode: str = "fast", seed: int = 0, progress=None) -> list:
    for n in sizes:
        if n < 100:
            raise ValueError(f"benchmark sizes must be at least 100, got {n}")
    if instances <= 0:
        raise ValueError("instances must be positive")
    rows = []
    for n in sizes:
        for k in range(instances):
            rng = np.random.default_rng([seed, n, k])
            A = random_sparse_affinity(rng, n, density)
            # a query with no neighbours is a trivial singleton problem
            deg = np.flatnonzero(A.sum(axis=1) > 0)
            q = int(rng.choice(deg)) if deg.size else 0
            row = bench_instance(A, q, alpha_mode, n, k)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(BENCH_HEADER)
    for r in rows:
        wr.writerow(r.as_list())
    return buf.getvalue()


def summarize(rows) -> dict:
    out = {}
    for n in sorted({r.n for r in rows}):
        rs = [r for r in rows if r.n == n]
        out[n] = {"median_ratio": float(np.median([r.ratio for r in rs])),
                  "max_objective_gap": float(max(r.objective_gap for r in rs)),
                  "instances": len(rs)}
    return out
