"""Scaling benchmark: random sparse economies solved with the linear planner."""

from __future__ import annotations

import itertools
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .economy import Economy, Good, GoodKind
from .solvers import SingularSystemError, SolverConfig, solve_linear

log = logging.getLogger(__name__)

INDUSTRIAL_GRID = (500, 1000, 5000, 10000, 50000)
FINAL_GRID = (50, 100, 500, 1000, 5000)
DEPS_GRID = (500, 1000, 2000)
COLUMN_SUM = 0.5


@dataclass(frozen=True)
class BenchSpec:
    industrial_counts: tuple[int, ...] = INDUSTRIAL_GRID
    final_counts: tuple[int, ...] = FINAL_GRID
    deps_per_good: tuple[int, ...] = DEPS_GRID
    profile_count: int = 200
    repetitions: int = 1
    rng_seed: int = 0
    parallel: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def cells(self) -> list[tuple[int, int, int]]:
        """Valid (industrial, final, deps) combinations, in grid order."""
        out = []
        for ni, nf, deps in itertools.product(self.industrial_counts, self.final_counts, self.deps_per_good):
            if deps > ni + nf:
                log.info("skipping cell (%d, %d, deps=%d): not enough producible goods", ni, nf, deps)
                continue
            out.append((ni, nf, deps))
        return out


@dataclass
class BenchRow:
    n_industrial: int
    n_final: int
    n_profiles: int
    deps: int
    n_total: int
    nnz: int
    time_s_median: float
    time_s_min: float
    residual: float
    converged: bool
    contended: bool = False
    error: str | None = None


def gen_random_economy(n_industrial: int, n_final: int, n_profiles: int, deps: int,
                       seed: int) -> tuple[Economy, np.ndarray]:
    """Random sparse economy plus profile demand.

    Every industrial or final column draws exactly ``deps`` distinct input
    rows among the producible goods, with positive weights rescaled to sum
    to 0.5. Each profile column consumes ``min(deps, n_final)`` distinct
    final goods, so ``deps=0`` yields the zero matrix. Demand is a citizen
    count in [100, 1000] at each profile row.
    """
    if min(n_industrial, n_final, n_profiles) < 0 or deps < 0:
        raise ValueError("counts must be non-negative")
    n_prod = n_industrial + n_final
    if deps > n_prod:
        raise ValueError(f"deps={deps} exceeds the {n_prod} producible goods")
    n = n_prod + n_profiles
    rng = np.random.default_rng(seed)

    rows = np.empty((n_prod, deps), dtype=np.int64)
    for j in range(n_prod):
        rows[j] = np.sort(rng.choice(n_prod, size=deps, replace=False))
    weights = rng.uniform(0.01, 1.0, size=(n_prod, deps))
    weights *= COLUMN_SUM / weights.sum(axis=1, keepdims=True) if deps else 0.0

    per_profile = min(deps, n_final)
    prof_rows = np.empty((n_profiles, per_profile), dtype=np.int64)
    for p in range(n_profiles):
        prof_rows[p] = n_industrial + np.sort(rng.choice(n_final, size=per_profile, replace=False))
    consumption = rng.uniform(0.01, 1.0, size=(n_profiles, per_profile))

    indices = np.concatenate([rows.ravel(), prof_rows.ravel()])
    data = np.concatenate([weights.ravel(), consumption.ravel()])
    indptr = np.concatenate([np.arange(n_prod + 1) * deps,
                             n_prod * deps + np.arange(1, n_profiles + 1) * per_profile])
    A = sp.csc_array((data, indices, indptr), shape=(n, n))

    goods = ([Good(f"I{k}", GoodKind.INDUSTRIAL) for k in range(n_industrial)]
             + [Good(f"F{k}", GoodKind.FINAL) for k in range(n_final)]
             + [Good(f"P{k}", GoodKind.PROFILE) for k in range(n_profiles)])
    pops = np.zeros(n)
    pops[n_prod:] = rng.integers(100, 1001, size=n_profiles)
    economy = Economy.from_matrix(goods, A, populations=pops)
    return economy, economy.demand()


def run_cell(ni: int, nf: int, n_profiles: int, deps: int, repetitions: int, seed: int,
             config: SolverConfig = SolverConfig(), contended: bool = False) -> BenchRow:
    economy, d = gen_random_economy(ni, nf, n_profiles, deps, seed)
    times, res, ok, err = [], float("nan"), False, None
    try:
        for _ in range(repetitions):
            t0 = time.perf_counter()
            sol = solve_linear(economy, d, config)
            times.append(time.perf_counter() - t0)
            res, ok = sol.residual_norm, sol.converged
    except (SingularSystemError, ValueError) as exc:
        err = str(exc)
        log.warning("cell (%d, %d, %d) failed: %s", ni, nf, deps, exc)
    return BenchRow(ni, nf, n_profiles, deps, economy.n, economy.constants.nnz,
                    statistics.median(times) if times else float("nan"),
                    min(times) if times else float("nan"), res, ok, contended, err)


def _cell_job(args):
    return run_cell(*args)


def run_grid(spec: BenchSpec, config: SolverConfig = SolverConfig()) -> list[BenchRow]:
    """Generate and solve every valid grid cell, one row per cell.

    Cells run one after another unless ``spec.parallel``; parallel rows are
    marked ``contended`` since their timings share the machine.
    """
    jobs = [(ni, nf, spec.profile_count, deps, spec.repetitions, spec.rng_seed + k, config, spec.parallel)
            for k, (ni, nf, deps) in enumerate(spec.cells())]
    if spec.parallel:
        with ProcessPoolExecutor() as pool:
            return list(pool.map(_cell_job, jobs))
    return [_cell_job(job) for job in jobs]


def timing_violations(rows: list[BenchRow]) -> list[tuple[BenchRow, BenchRow]]:
    """Pairs where a larger system (same deps) solved faster than a smaller one.

    Only a sanity report; wall-clock jitter makes these expected now and then.
    """
    out = []
    by_deps: dict[int, list[BenchRow]] = {}
    for r in rows:
        by_deps.setdefault(r.deps, []).append(r)
    for group in by_deps.values():
        group = sorted(group, key=lambda r: r.n_total)
        for a, b in zip(group, group[1:]):
            if b.n_total > a.n_total and b.time_s_median < a.time_s_median:
                out.append((a, b))
    return out


def bench_rows(rows: list[BenchRow]) -> tuple[list[str], list[list]]:
    header = ["n_industrial", "n_final", "n_profiles", "deps", "n_total", "nnz", "time_s_median",
              "residual", "time_s_min", "converged", "contended"]
    return header, [[r.n_industrial, r.n_final, r.n_profiles, r.deps, r.n_total, r.nnz,
                     r.time_s_median, r.residual, r.time_s_min, int(r.converged), int(r.contended)]
                    for r in rows]
