"""Gross-output solvers for ``(I - A) x = d`` and ``(I - F(x)) x = d``.

Three routes are provided:

* ``direct-sparse`` -- linear systems only; dense LU for dense economies,
  sparse LU or a residual-checked Krylov solve for sparse ones.
* ``fixed-point`` -- the power-series recursion ``x <- F(x) x + d`` from
  ``x = d``.
* ``gradient`` -- minimises the mean squared residual with Gauss-Newton
  steps and a halving line search.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .economy import Economy, eval_matrix, eval_matrix_derivative

log = logging.getLogger(__name__)

METHODS = ("direct-sparse", "fixed-point", "gradient")
LINEAR_BACKENDS = ("auto", "lu", "krylov")

# sparse LU fill-in explodes on random dependency graphs past a few thousand goods
SPLU_MAX_N = 2000
DIVERGENCE_FACTOR = 1e12


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    """``I - A`` is not invertible."""


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-9
    max_iterations: int = 10_000
    method: str = "direct-sparse"
    linear_backend: str = "auto"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.linear_backend not in LINEAR_BACKENDS:
            raise ValueError(f"unknown linear backend {self.linear_backend!r}")

    def absolute_tolerance(self, d: np.ndarray) -> float:
        """Residual bound in units of the demand: ``tol * max(1, max|d|)``."""
        scale = float(np.max(np.abs(d))) if d.size else 0.0
        return self.tolerance * max(1.0, scale)


@dataclass
class PlanSolution:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    wall_time: float
    method: str
    status: str = "converged"
    warnings: list[str] = field(default_factory=list)


def _check_inputs(n: int, d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape != (n,):
        raise ValueError(f"demand must have length {n}, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("demand must be finite")
    return d


def _flag_negative(sol: PlanSolution) -> PlanSolution:
    if np.any(sol.x < 0):
        msg = f"{int(np.sum(sol.x < 0))} negative output component(s); economy may be unproductive"
        sol.warnings.append(msg)
        log.warning(msg)
    return sol


def residual(economy: Economy, x, d) -> np.ndarray:
    """``(I - F(x)) x - d``."""
    x = np.asarray(x, dtype=float)
    d = _check_inputs(economy.n, d)
    F = eval_matrix(economy, x)
    return x - F @ x - d


def _jacobian(economy: Economy, x: np.ndarray):
    # J_ik = delta_ik - f_ik(x_k) - f'_ik(x_k) * x_k
    F = eval_matrix(economy, x)
    D = eval_matrix_derivative(economy, x)
    if sp.issparse(F):
        return sp.csc_array(sp.identity(economy.n, format="csc") - F - D @ sp.diags_array(x))
    return np.eye(economy.n) - F - D * x[None, :]


def mse_gradient(economy: Economy, x, d) -> np.ndarray:
    """Gradient of ``mean(r**2)`` with respect to ``x``: ``(2/n) J^T r``."""
    x = np.asarray(x, dtype=float)
    r = residual(economy, x, d)
    J = _jacobian(economy, x)
    return (2.0 / economy.n) * (J.T @ r)


def _linear_matrix(A) -> tuple[np.ndarray | sp.csc_array, int]:
    if isinstance(A, Economy):
        if not A.is_linear:
            raise ValueError("solve_linear needs an all-constant economy; use fixed-point or gradient")
        n = A.n
        M = eval_matrix(A, np.zeros(n))
    else:
        M = A
        if not sp.issparse(M):
            M = np.asarray(M, dtype=float)
        n = M.shape[0]
        if M.ndim != 2 or M.shape != (n, n):
            raise ValueError("coefficient matrix must be square")
        nnz = M.nnz if sp.issparse(M) else int(np.count_nonzero(M))
        if nnz < 0.1 * n * n:
            M = sp.csc_array(M, dtype=float)
        elif sp.issparse(M):
            M = M.toarray()
    data = M.data if sp.issparse(M) else M
    if not np.all(np.isfinite(data)):
        raise ValueError("coefficient matrix must be finite")
    return M, n


def _krylov(M: sp.csc_array, d: np.ndarray, atol: float, maxiter: int) -> tuple[np.ndarray, int]:
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    # aim well below the acceptance bound; the caller re-checks in max-norm
    x, info = spla.gmres(M, d, rtol=0.0, atol=1e-3 * atol, restart=50, maxiter=maxiter,
                         callback=count, callback_type="pr_norm")
    return x, iters


def solve_linear(A, d, config: SolverConfig = SolverConfig()) -> PlanSolution:
    """Solve ``(I - A) x = d`` for a constant coefficient matrix.

    ``A`` may be an all-constant :class:`Economy`, a dense array or a scipy
    sparse matrix. Matrices with density below 0.1 are kept in CSC form.
    Raises :class:`SingularSystemError` when ``I - A`` cannot be inverted.
    """
    t0 = time.perf_counter()
    A, n = _linear_matrix(A)
    d = _check_inputs(n, d)
    atol = config.absolute_tolerance(d)
    iterations = 1

    if sp.issparse(A):
        M = sp.csc_array(sp.identity(n, format="csc") - A)
        backend = config.linear_backend
        if backend == "auto":
            backend = "lu" if n <= SPLU_MAX_N else "krylov"
        x = None
        if backend == "krylov":
            x, iterations = _krylov(M, d, atol, min(config.max_iterations, 1000))
            if not np.all(np.isfinite(x)) or np.max(np.abs(M @ x - d), initial=0.0) > atol:
                log.info("Krylov solve missed tolerance; falling back to sparse LU")
                x = None
        if x is None:
            try:
                lu = spla.splu(M)
            except RuntimeError as exc:
                raise SingularSystemError(f"I - A is singular: {exc}") from exc
            x = lu.solve(d)
        Mx = M @ x
    else:
        M = np.eye(n) - A
        try:
            with warnings.catch_warnings():
                # zero pivots are reported below as SingularSystemError
                warnings.simplefilter("ignore", la.LinAlgWarning)
                lu, piv = la.lu_factor(M, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SingularSystemError(str(exc)) from exc
        if np.any(np.diag(lu) == 0):
            raise SingularSystemError("I - A is singular (zero pivot)")
        x = la.lu_solve((lu, piv), d, check_finite=False)
        Mx = M @ x
        # one step of iterative refinement when conditioning bites
        if np.max(np.abs(Mx - d), initial=0.0) > atol and np.all(np.isfinite(x)):
            x = x + la.lu_solve((lu, piv), d - Mx, check_finite=False)
            Mx = M @ x
            iterations += 1

    if not np.all(np.isfinite(x)):
        raise SingularSystemError("I - A is numerically singular (non-finite solution)")
    res = float(np.max(np.abs(Mx - d), initial=0.0))
    ok = res <= atol
    sol = PlanSolution(x=np.asarray(x, dtype=float), residual_norm=res, iterations=iterations,
                       converged=ok, wall_time=time.perf_counter() - t0, method="direct-sparse",
                       status="converged" if ok else "residual-above-tolerance")
    return _flag_negative(sol)


def solve_fixed_point(
    economy: Economy,
    d,
    config: SolverConfig = SolverConfig(method="fixed-point"),
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> PlanSolution:
    """Power-series recursion ``x_(k+1) = F(x_k) x_k + d`` starting at ``x_0 = d``.

    Stops once both the iterate change and the residual are within
    tolerance. Without convergence the lowest-residual iterate is returned
    with ``converged=False``; ``status`` says why (``max-iterations`` or
    ``diverged``). ``callback(k, x_k)`` sees every iterate including ``x_0``.
    """
    t0 = time.perf_counter()
    d = _check_inputs(economy.n, d)
    if np.any(d < 0):
        raise ValueError("fixed-point solve needs d >= 0")
    atol = config.absolute_tolerance(d)
    dmax = float(np.max(d, initial=0.0))
    blowup = DIVERGENCE_FACTOR * dmax

    x = d.copy()
    if callback:
        callback(0, x)
    y = eval_matrix(economy, x) @ x
    best_x, best_res = x, float(np.max(np.abs(x - y - d), initial=0.0))
    status = "max-iterations"
    monotone = True
    k = 0
    while k < config.max_iterations:
        k += 1
        x_new = y + d
        y = eval_matrix(economy, x_new) @ x_new
        res = float(np.max(np.abs(x_new - y - d), initial=0.0))
        step = float(np.max(np.abs(x_new - x), initial=0.0))
        if monotone and np.any(x_new < x - 1e-12 * np.maximum(1.0, np.abs(x))):
            monotone = False
        x = x_new
        if callback:
            callback(k, x)
        if not np.all(np.isfinite(x)) or float(np.max(np.abs(x), initial=0.0)) > blowup:
            status = "diverged"
            break
        if res < best_res:
            best_x, best_res = x, res
        if step <= atol and res <= atol:
            status = "converged"
            break

    sol = PlanSolution(
        x=x if status == "converged" else best_x,
        residual_norm=res if status == "converged" else best_res,
        iterations=k,
        converged=status == "converged",
        wall_time=time.perf_counter() - t0,
        method="fixed-point",
        status=status,
    )
    if not monotone:
        sol.warnings.append("iterates were not monotone non-decreasing")
    return _flag_negative(sol)


def _mse(economy: Economy, x: np.ndarray, d: np.ndarray) -> tuple[float, np.ndarray]:
    r = x - eval_matrix(economy, x) @ x - d
    return float(r @ r) / economy.n, r


def solve_gradient(economy: Economy, d, config: SolverConfig = SolverConfig(method="gradient")) -> PlanSolution:
    """Minimise the mean squared residual starting from ``x_0 = d``.

    Search directions are Gauss-Newton steps ``J p = -r`` (steepest descent
    when ``J`` is singular); each step starts at length 1 and is halved
    until the MSE drops. Stops when the residual max-norm is within
    tolerance, the gradient max-norm is below ``tolerance**2``, or no
    halving decreases the MSE.
    """
    t0 = time.perf_counter()
    d = _check_inputs(economy.n, d)
    if np.any(d < 0):
        raise ValueError("gradient solve needs d >= 0")
    n = economy.n
    atol = config.absolute_tolerance(d)
    gtol = config.tolerance ** 2

    x = d.copy()
    mse, r = _mse(economy, x, d)
    status = "max-iterations"
    k = 0
    while True:
        if float(np.max(np.abs(r), initial=0.0)) <= atol:
            status = "converged"
            break
        J = _jacobian(economy, x)
        g = (2.0 / n) * (J.T @ r)
        if float(np.max(np.abs(g), initial=0.0)) <= gtol:
            status = "stationary"
            break
        if k >= config.max_iterations:
            break
        k += 1
        try:
            p = spla.spsolve(sp.csc_array(J), -r) if sp.issparse(J) else np.linalg.solve(J, -r)
        except (np.linalg.LinAlgError, RuntimeError):
            p = None
        if p is None or not np.all(np.isfinite(p)) or g @ p >= 0:
            p = -g
        step = 1.0
        for _ in range(60):
            x_try = x + step * p
            try:
                mse_try, r_try = _mse(economy, x_try, d)
            except ValueError:
                mse_try = np.inf
            if mse_try < mse:
                break
            step *= 0.5
        else:
            status = "stalled"
            break
        x, mse, r = x_try, mse_try, r_try

    res = float(np.max(np.abs(r), initial=0.0))
    sol = PlanSolution(x=x, residual_norm=res, iterations=k, converged=res <= atol,
                       wall_time=time.perf_counter() - t0, method="gradient",
                       status="converged" if res <= atol else status)
    return _flag_negative(sol)


def solve(economy: Economy, d=None, config: SolverConfig = SolverConfig()) -> PlanSolution:
    """Dispatch on ``config.method``; ``d`` defaults to the profile demand."""
    d = economy.demand() if d is None else d
    if config.method == "direct-sparse":
        return solve_linear(economy, d, config)
    if config.method == "fixed-point":
        return solve_fixed_point(economy, d, config)
    return solve_gradient(economy, d, config)
