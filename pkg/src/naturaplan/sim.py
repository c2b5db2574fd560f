"""Daily plan execution over an inventory state.

Each tick the full profile demand is re-planned from scratch (open-loop
plan), then executed against the observed inventory (closed loop):

1. release goods whose lead time has elapsed
2. plan gross outputs for the full citizen demand
3. find the largest feasible fraction of that plan given current stock
4. split feasible capacity between delivery and durable investment
5. produce, consuming non-durable inputs
6. deliver to profiles and score humanity
7. score externalities and reward
8. apply random inventory losses

Durable goods act as capacity: they must be in stock to cover the
requirement but are not used up. Durable stock only grows through the
investment share ``theta``. Non-durable goods are produced at the full
feasible scale; the part of final output held back from delivery stays in
stock.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .economy import Economy, GoodKind, eval_matrix
from .solvers import PlanSolution, SolverConfig, SolverError, solve

log = logging.getLogger(__name__)


class PlanningFault(RuntimeError):
    """The planner could not produce a usable plan for this tick."""


class InfeasiblePlanError(AssertionError):
    """An executed plan consumed more than the inventory held (a caller defect)."""


@dataclass(frozen=True)
class NoiseConfig:
    p: float = 0.0
    phi_min: float = 0.0
    phi_max: float = 0.0

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("noise probability must lie in [0, 1]")
        if not 0 <= self.phi_min <= self.phi_max <= 1:
            raise ValueError("noise loss range must satisfy 0 <= lo <= hi <= 1")


@dataclass(frozen=True)
class SimConfig:
    horizon: int = 365
    theta: float = 0.3
    gamma: float = 0.99
    lead_time: Mapping[str, int] = field(default_factory=dict)
    noise: NoiseConfig = NoiseConfig()
    lambda_ext: float = 0.0
    rng_seed: int = 0
    solver: SolverConfig = SolverConfig(method="fixed-point")
    labour_cap: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.lambda_ext < 0:
            raise ValueError("lambda_ext must be >= 0")
        if any(int(v) != v or v < 0 for v in self.lead_time.values()):
            raise ValueError("lead times must be non-negative integers")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")


@dataclass
class SimState:
    tick: int
    inventory: np.ndarray
    cumulative_externality: float = 0.0
    pending: tuple[tuple[int, int, float], ...] = ()

    def copy(self) -> "SimState":
        return replace(self, inventory=self.inventory.copy())


@dataclass
class TickReport:
    tick: int
    planned_x: np.ndarray
    executed_x: np.ndarray
    lambda_max: float
    delivery_scale: float
    humanity: float
    externality_step: float
    cumulative_externality: float
    reward: float
    inventory_before: np.ndarray
    materialized: np.ndarray
    consumed: np.ndarray
    delivered: np.ndarray
    noise_loss: np.ndarray
    inventory_after: np.ndarray
    labour_used: np.ndarray
    fault: str | None = None


@dataclass
class Trajectory:
    reports: list[TickReport]
    gamma: float
    final_state: SimState

    @property
    def discounted_return(self) -> float:
        total = 0.0
        for t, rep in enumerate(self.reports):
            total += self.gamma ** t * rep.reward
        return total

    @property
    def humanity(self) -> np.ndarray:
        return np.array([r.humanity for r in self.reports])

    def __len__(self) -> int:
        return len(self.reports)


def initial_state(economy: Economy, inventory: Mapping[str, float] | np.ndarray | None = None) -> SimState:
    inv = np.zeros(economy.n)
    if isinstance(inventory, Mapping):
        for name, amount in inventory.items():
            inv[economy.index(name)] = float(amount)
    elif inventory is not None:
        inv = np.array(inventory, dtype=float)
        if inv.shape != (economy.n,):
            raise ValueError(f"inventory must have length {economy.n}")
    if np.any(inv < 0) or not np.all(np.isfinite(inv)):
        raise ValueError("inventory must be finite and >= 0")
    return SimState(0, inv)


def release_pending(state: SimState) -> tuple[SimState, np.ndarray]:
    """Move pending goods that are due at ``state.tick`` into inventory."""
    released = np.zeros_like(state.inventory)
    keep = []
    for item in state.pending:
        ready, good, amount = item
        if ready <= state.tick:
            released[good] += amount
        else:
            keep.append(item)
    if not released.any() and len(keep) == len(state.pending):
        return state, released
    return replace(state, inventory=state.inventory + released, pending=tuple(keep)), released


def plan_tick(economy: Economy, state: SimState, config: SimConfig) -> PlanSolution:
    """Solve for the gross outputs covering every citizen's profile.

    Planning ignores the inventory. Raises :class:`PlanningFault` when the
    solver fails or does not converge.
    """
    try:
        sol = solve(economy, economy.demand(), config.solver)
    except (SolverError, ValueError) as exc:
        raise PlanningFault(str(exc)) from exc
    if not sol.converged:
        raise PlanningFault(f"{sol.method} solver did not converge ({sol.status})")
    if np.any(sol.x < 0):
        raise PlanningFault("plan has negative outputs")
    return sol


def _requirements(economy: Economy, matrix, x: np.ndarray) -> np.ndarray:
    xp = np.where(economy.production_mask, x, 0.0)
    return np.asarray(matrix @ xp, dtype=float)


def feasible_scale(economy: Economy, state: SimState, x, matrix=None,
                   labour_cap: Mapping[str, float] | None = None) -> float:
    """Largest ``lam`` in [0, 1] such that ``lam * x`` can be produced from stock.

    Coefficients are frozen at ``F(x)``. Every industrial or final input
    must have stock covering ``sum_j F_ij x_j`` over the manufactured
    columns; durable stock counts as capacity. Labour is unconstrained
    unless ``labour_cap`` names a per-tick cap.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be >= 0")
    F = eval_matrix(economy, x) if matrix is None else matrix
    req = _requirements(economy, F, x)
    avail = state.inventory.copy()
    constrained = economy.production_mask.copy()
    if labour_cap:
        for name, cap in labour_cap.items():
            i = economy.index(name)
            constrained[i] = True
            avail[i] = float(cap)
    lam = 1.0
    for i in np.flatnonzero(constrained & (req > 0)):
        lam = min(lam, avail[i] / req[i])
    return max(0.0, float(lam))


def apply_investment(economy: Economy, x, lambda_max: float, theta: float) -> tuple[float, np.ndarray]:
    """Split feasible capacity between delivery and new durable goods.

    Returns ``(lambda_deliver, delta)`` with ``lambda_deliver = (1 - theta) *
    lambda_max`` and ``delta = theta * lambda_max * x`` on durable goods.
    """
    if not 0 <= lambda_max <= 1:
        raise ValueError("lambda_max must lie in [0, 1]")
    if not 0 <= theta <= 1:
        raise ValueError("theta must lie in [0, 1]")
    x = np.asarray(x, dtype=float)
    delta = np.where(economy.durable_mask, theta * lambda_max * x, 0.0)
    return (1.0 - theta) * lambda_max, delta


def executed_outputs(economy: Economy, x, lambda_max: float, delta) -> np.ndarray:
    """Outputs actually produced: non-durables at ``lambda_max``, durables only via ``delta``."""
    x = np.asarray(x, dtype=float)
    nondurable = economy.production_mask & ~economy.durable_mask
    return np.where(nondurable, lambda_max * x, np.where(economy.durable_mask, delta, 0.0))


@dataclass
class Flows:
    released: np.ndarray
    materialized: np.ndarray
    consumed: np.ndarray
    labour_used: np.ndarray


def transition(economy: Economy, state: SimState, executed_x, matrix=None,
               lead_time: Mapping[str, int] | None = None) -> tuple[SimState, Flows]:
    """Advance the inventory by one tick of production.

    Due pending goods are released first. Non-durable inputs are reduced by
    ``F_ij * x_j``; durable inputs are untouched. Outputs with a lead time
    go to ``pending``; the rest land in inventory immediately. Labour use
    is only reported.
    """
    xe = np.asarray(executed_x, dtype=float)
    if np.any(xe < 0):
        raise ValueError("executed outputs must be >= 0")
    state, released = release_pending(state)
    F = eval_matrix(economy, xe) if matrix is None else matrix
    req = _requirements(economy, F, xe)

    kinds = [g.kind for g in economy.goods]
    labour = np.array([k is GoodKind.LABOUR for k in kinds])
    consumable = economy.production_mask & ~economy.durable_mask
    consumed = np.where(consumable, req, 0.0)
    inv = state.inventory.copy()
    over = consumed - inv
    slack = 1e-9 * np.maximum(1.0, inv)
    if np.any(over > slack):
        i = int(np.argmax(over))
        raise InfeasiblePlanError(
            f"tick {state.tick}: consuming {consumed[i]} of {economy.goods[i].name!r} with only {inv[i]} in stock"
        )
    # absorb round-off from lambda = stock / requirement
    consumed = np.minimum(consumed, inv)
    inv -= consumed

    delay = np.zeros(economy.n, dtype=int)
    for name, lt in (lead_time or {}).items():
        delay[economy.index(name)] = int(lt)
    out = np.where(economy.production_mask, xe, 0.0)
    now = np.where(delay == 0, out, 0.0)
    inv += now
    pending = list(state.pending)
    for j in np.flatnonzero((delay > 0) & (out > 0)):
        pending.append((state.tick + int(delay[j]), int(j), float(out[j])))

    nxt = SimState(state.tick + 1, inv, state.cumulative_externality, tuple(pending))
    flows = Flows(released=released, materialized=released + now, consumed=consumed,
                  labour_used=np.where(labour, req, 0.0))
    return nxt, flows


def humanity(economy: Economy, stock, claims: np.ndarray | None = None) -> float:
    """Worst-case share of a profile's claim still coverable after everyone else.

    For each final good ``i`` and profile ``j`` with a positive claim
    ``c_ij = a_ij N_j``: ``max(0, S_i - sum_{j' != j} c_ij') / c_ij``. The
    minimum over all such pairs is returned; 1 when nothing is claimed.
    """
    stock = np.asarray(stock, dtype=float)
    C = economy.profile_claims() if claims is None else claims
    hu = math.inf
    for i in economy.indices_of(GoodKind.FINAL):
        row = C[i]
        cols = np.flatnonzero(row > 0)
        for j in cols:
            others = float(np.sum(row[cols[cols != j]]))
            hu = min(hu, max(0.0, stock[i] - others) / row[j])
    return 1.0 if hu == math.inf else float(hu)


def deliver_and_score(economy: Economy, state: SimState, lambda_deliver: float,
                      claims: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Score humanity on the current stock, then ration deliveries.

    Each profile requests ``lambda_deliver * c_ij`` of final good ``i``; when
    stock is short every request is cut in the same proportion. Returns the
    delivered amount per good (callers subtract it from inventory) and the
    humanity before delivery.
    """
    if not 0 <= lambda_deliver <= 1:
        raise ValueError("lambda_deliver must lie in [0, 1]")
    C = economy.profile_claims() if claims is None else claims
    hu = humanity(economy, state.inventory, C)
    final = np.zeros(economy.n, dtype=bool)
    final[economy.indices_of(GoodKind.FINAL)] = True
    requested = np.where(final, lambda_deliver * C.sum(axis=1), 0.0)
    delivered = np.minimum(requested, state.inventory)
    return delivered, hu


def externality_step(economy: Economy, x) -> float:
    """Weighted externality of one tick's production: ``sum_k rho_k sum_j e_kj x_j``."""
    if not economy.externality_kinds:
        return 0.0
    x = np.asarray(x, dtype=float)
    return float(economy.externality_weights @ (economy.externality_coeffs @ x))


def reward(hu: float, ext_step: float, lambda_ext: float) -> float:
    return hu - lambda_ext * ext_step


def apply_noise(state: SimState, noise: NoiseConfig, rng: np.random.Generator) -> tuple[SimState, np.ndarray]:
    """Randomly destroy part of the stock of each good.

    Goods are visited in index order; each draws one uniform to decide
    whether it is hit (probability ``p``) and, if hit, a second for the
    lost fraction in ``[phi_min, phi_max]``.
    """
    inv = state.inventory.copy()
    for i in range(inv.size):
        if rng.random() < noise.p:
            phi = noise.phi_min + (noise.phi_max - noise.phi_min) * rng.random()
            inv[i] = inv[i] * (1.0 - phi)
    loss = state.inventory - inv
    return replace(state, inventory=inv), loss


def run_simulation(economy: Economy, inventory, config: SimConfig) -> Trajectory:
    """Run ``config.horizon`` daily ticks from ``inventory``.

    Solver failures are recorded on the tick's report as ``fault`` and the
    tick proceeds with a zero plan.
    """
    state = inventory.copy() if isinstance(inventory, SimState) else initial_state(economy, inventory)
    rng = np.random.default_rng(config.rng_seed)
    claims = economy.profile_claims()
    reports: list[TickReport] = []

    for _ in range(config.horizon):
        before = state.inventory.copy()
        state, released = release_pending(state)

        fault = None
        try:
            planned = plan_tick(economy, state, config).x
        except PlanningFault as exc:
            fault = str(exc)
            log.warning("tick %d: %s", state.tick, fault)
            planned = np.zeros(economy.n)

        F = eval_matrix(economy, planned)
        lam_max = feasible_scale(economy, state, planned, F, config.labour_cap)
        lam_deliver, delta = apply_investment(economy, planned, lam_max, config.theta)
        xe = executed_outputs(economy, planned, lam_max, delta)

        tick = state.tick
        state, flows = transition(economy, state, xe, F, config.lead_time)
        delivered, hu = deliver_and_score(economy, state, lam_deliver, claims)
        state.inventory = state.inventory - delivered

        step = externality_step(economy, xe)
        state.cumulative_externality += step
        r = reward(hu, step, config.lambda_ext)

        state, loss = apply_noise(state, config.noise, rng)
        reports.append(TickReport(
            tick=tick, planned_x=planned, executed_x=xe, lambda_max=lam_max,
            delivery_scale=lam_deliver, humanity=hu, externality_step=step,
            cumulative_externality=state.cumulative_externality, reward=r,
            inventory_before=before, materialized=released + flows.materialized,
            consumed=flows.consumed, delivered=delivered, noise_loss=loss,
            inventory_after=state.inventory.copy(), labour_used=flows.labour_used, fault=fault,
        ))

    return Trajectory(reports, config.gamma, state)
