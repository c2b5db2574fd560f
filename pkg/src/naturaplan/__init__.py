"""In-kind economic planning: input-output solvers and a daily plan-execution simulator."""

from .economy import (
    AnalyticCoeff,
    CoeffFn,
    Economy,
    EconomyError,
    Good,
    GoodKind,
    ProductionUnitSpec,
    aggregate_units,
    build_economy,
    eval_matrix,
    eval_matrix_derivative,
    fit_coeff_fn,
)
from .solvers import (
    PlanSolution,
    SingularSystemError,
    SolverConfig,
    mse_gradient,
    residual,
    solve,
    solve_fixed_point,
    solve_gradient,
    solve_linear,
)
from .sim import NoiseConfig, SimConfig, SimState, TickReport, Trajectory, run_simulation
from .scenario import Scenario, ScenarioError, parse_scenario

__version__ = "0.1.0"
