"""Command line entry point: ``naturaplan {solve,simulate,bench,fit,validate}``.

Exit codes: 0 success, 1 validation or usage error, 2 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys

import numpy as np

from . import bench
from .economy import EconomyError, GoodKind, fit_coeff_fn
from .scenario import ScenarioError, parse_scenario, trajectory_rows, write_csv, _fmt
from .sim import NoiseConfig, run_simulation
from .solvers import SingularSystemError, SolverConfig, solve

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2
METHOD_FLAGS = {"direct": "direct-sparse", "fixed-point": "fixed-point", "gradient": "gradient"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for non-convergence here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _noise_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected lo,hi") from None
    return lo, hi


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=sorted(METHOD_FLAGS))
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="naturaplan", description="In-kind economic planning: solve, simulate, benchmark.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="plan gross outputs for a scenario")
    p.add_argument("scenario")
    _solver_flags(p)
    p.add_argument("--out", help="write good,x CSV here instead of stdout")

    p = sub.add_parser("simulate", help="run the daily simulation, emit a trajectory CSV")
    p.add_argument("scenario")
    p.add_argument("--theta", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-p", type=float)
    p.add_argument("--noise-range", type=_noise_range)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-ext", type=float)
    _solver_flags(p)
    p.add_argument("--out")

    p = sub.add_parser("bench", help="time linear solves on random sparse economies")
    p.add_argument("--industrial", type=int, nargs="+", default=[500])
    p.add_argument("--final", type=int, nargs="+", default=[50])
    p.add_argument("--deps", type=int, nargs="+", default=[500])
    p.add_argument("--profiles", type=int, default=200)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", action="store_true")
    _solver_flags(p)
    p.add_argument("--out")

    p = sub.add_parser("fit", help="per-unit coefficient curve from (output,total) samples")
    p.add_argument("samples", help="CSV with columns x,total (header optional)")
    p.add_argument("--extrapolation", choices=["clamp-last", "error"], default="clamp-last")
    p.add_argument("--out")

    p = sub.add_parser("validate", help="check a scenario and report its invariants")
    p.add_argument("scenario")
    return parser


def _solver_config(args, base: SolverConfig) -> SolverConfig:
    changes = {}
    if args.method:
        changes["method"] = METHOD_FLAGS[args.method]
    if args.tol is not None:
        changes["tolerance"] = args.tol
    if args.max_iters is not None:
        changes["max_iterations"] = args.max_iters
    return dataclasses.replace(base, **changes)


def _emit(header, rows, out) -> None:
    if out:
        write_csv(header, rows, out)
    else:
        write_csv(header, rows, sys.stdout)


def cmd_solve(args) -> int:
    sc = parse_scenario(args.scenario)
    cfg = _solver_config(args, sc.sim.solver)
    if cfg.method == "direct-sparse" and not sc.economy.is_linear:
        raise ScenarioError("sim.solver.method", "direct solve needs constant coefficients; use --method fixed-point")
    sol = solve(sc.economy, None, cfg)
    _emit(["good", "x"], [[name, _fmt(v)] for name, v in zip(sc.economy.names, sol.x)], args.out)
    print(f"# method={sol.method} iterations={sol.iterations} residual={sol.residual_norm:.3e} "
          f"converged={sol.converged}", file=sys.stderr)
    for w in sol.warnings:
        print(f"# warning: {w}", file=sys.stderr)
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def cmd_simulate(args) -> int:
    sc = parse_scenario(args.scenario)
    cfg = sc.sim
    changes = {}
    for flag, field in [("theta", "theta"), ("horizon", "horizon"), ("seed", "rng_seed"),
                        ("gamma", "gamma"), ("lambda_ext", "lambda_ext")]:
        value = getattr(args, flag)
        if value is not None:
            changes[field] = value
    if args.noise_p is not None or args.noise_range is not None:
        lo, hi = args.noise_range if args.noise_range else (cfg.noise.phi_min, cfg.noise.phi_max)
        changes["noise"] = NoiseConfig(cfg.noise.p if args.noise_p is None else args.noise_p, lo, hi)
    changes["solver"] = _solver_config(args, cfg.solver)
    cfg = dataclasses.replace(cfg, **changes)
    traj = run_simulation(sc.economy, sc.state, cfg)
    header, rows = trajectory_rows(sc.economy, traj)
    _emit(header, rows, args.out)
    faults = sum(r.fault is not None for r in traj.reports)
    print(f"# ticks={len(traj)} discounted_return={traj.discounted_return!r} faults={faults}", file=sys.stderr)
    return EXIT_NONCONVERGED if faults else EXIT_OK


def cmd_bench(args) -> int:
    spec = bench.BenchSpec(tuple(args.industrial), tuple(args.final), tuple(args.deps),
                           profile_count=args.profiles, repetitions=args.reps,
                           rng_seed=args.seed, parallel=args.parallel)
    rows = bench.run_grid(spec, _solver_config(args, SolverConfig()))
    header, data = bench.bench_rows(rows)
    _emit(header, [[_fmt(v) for v in row] for row in data], args.out)
    for a, b in bench.timing_violations(rows):
        print(f"# timing note: n={b.n_total} solved faster than n={a.n_total} (deps={a.deps})", file=sys.stderr)
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NONCONVERGED


def cmd_fit(args) -> int:
    samples = []
    with open(args.samples, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            try:
                samples.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if k == 0:
                    continue  # header
                raise ScenarioError(f"{args.samples}:{k + 1}", f"expected x,total, got {row!r}") from None
    fn = fit_coeff_fn(samples, extrapolation=args.extrapolation)
    _emit(["x", "f"], [[_fmt(x), _fmt(f)] for x, f in fn.breakpoints], args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = parse_scenario(args.scenario)
    eco = sc.economy
    counts = {k.value: int(eco.indices_of(k).size) for k in GoodKind}
    print(f"ok: {args.scenario} parsed ({eco.n} goods: {counts})")
    print(f"ok: {len(eco.functional)} functional and {eco.constants.nnz} constant coefficients")
    print(f"ok: population {eco.populations.sum():g} across {counts['profile']} profiles")
    prod = eco.production_mask
    col_sums = np.asarray(eco.constants.toarray()[np.ix_(prod, prod)].sum(axis=0)).ravel()
    if col_sums.size and col_sums.max() >= 1:
        print(f"note: constant column sums reach {col_sums.max():g} (>= 1); plan may not converge")
    else:
        print(f"ok: constant column sums < 1 (max {col_sums.max(initial=0):g})")
    try:
        sol = solve(eco, None, sc.sim.solver)
        status = "ok" if sol.converged else "note"
        print(f"{status}: {sol.method} plan residual {sol.residual_norm:.3e} after {sol.iterations} iterations")
    except (SingularSystemError, ValueError) as exc:
        print(f"note: plan could not be solved: {exc}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "bench": cmd_bench, "fit": cmd_fit,
            "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"naturaplan: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, EconomyError, ValueError, OSError) as exc:
        print(f"naturaplan: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
