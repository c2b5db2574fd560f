import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from naturaplan.economy import build_economy
from naturaplan.scenario import parse_scenario
from naturaplan.sim import (
    InfeasiblePlanError,
    NoiseConfig,
    SimConfig,
    SimState,
    apply_investment,
    apply_noise,
    deliver_and_score,
    externality_step,
    feasible_scale,
    humanity,
    initial_state,
    plan_tick,
    release_pending,
    reward,
    run_simulation,
    transition,
)
from naturaplan.solvers import SolverConfig, solve_linear

from conftest import L, T, V, VILLAGE_GOODS, VILLAGE_CONSTANTS, village_economy

LINEAR = SimConfig(solver=SolverConfig(method="direct-sparse"))


@pytest.fixture(scope="module")
def village():
    return parse_scenario("village.olin")


def state_with(economy, **stock):
    return initial_state(economy, {name: v for name, v in stock.items()})


def test_plan_tick_matches_linear_solve(base_village):
    sol = plan_tick(base_village, initial_state(base_village), LINEAR)
    np.testing.assert_allclose(sol.x, solve_linear(base_village, base_village.demand()).x, rtol=1e-12)


def test_zero_population_plans_nothing():
    eco = build_economy(VILLAGE_GOODS, VILLAGE_CONSTANTS, {"Profile 0": 0, "Profile 1": 0})
    assert not plan_tick(eco, initial_state(eco), LINEAR).x.any()


def test_feasible_scale_unlimited(base_village):
    x = plan_tick(base_village, initial_state(base_village), LINEAR).x
    rich = initial_state(base_village, np.full(8, 1e12))
    assert feasible_scale(base_village, rich, x) == 1.0


def test_feasible_scale_vorpal_bottleneck(base_village):
    x = plan_tick(base_village, initial_state(base_village), LINEAR).x
    st_ = initial_state(base_village, {L: 1e9, V: 100, T: 1e9})
    assert feasible_scale(base_village, st_, x) == pytest.approx(100 / 1791.792, rel=1e-6)
    assert feasible_scale(base_village, st_, x) == pytest.approx(0.05581, abs=5e-6)


def test_feasible_scale_zero_stock(base_village):
    x = plan_tick(base_village, initial_state(base_village), LINEAR).x
    assert feasible_scale(base_village, initial_state(base_village, {V: 1e9, T: 1e9}), x) == 0.0


def test_labour_cap_binds(base_village):
    x = plan_tick(base_village, initial_state(base_village), LINEAR).x
    rich = initial_state(base_village, np.full(8, 1e12))
    lam = feasible_scale(base_village, rich, x, labour_cap={"Lb(Vorpal Pick +1)": x[4] / 4})
    assert lam == pytest.approx(0.25)


def test_investment_examples(base_village):
    x = np.zeros(8)
    x[1] = 1791.792
    lam, delta = apply_investment(base_village, x, 0.7, 0.0)
    assert lam == 0.7 and not delta.any()
    lam, delta = apply_investment(base_village, x, 0.7, 1.0)
    assert lam == 0.0 and delta[1] == pytest.approx(0.7 * 1791.792)
    lam, delta = apply_investment(base_village, x, 0.5, 0.4)
    assert lam == pytest.approx(0.3)
    assert delta[1] == pytest.approx(358.358, abs=1e-3)
    assert np.count_nonzero(delta) == 1


def test_transition_zero_plan(base_village):
    s = initial_state(base_village, {L: 5, T: 1})
    nxt, flows = transition(base_village, s, np.zeros(8))
    assert nxt.tick == 1
    np.testing.assert_array_equal(nxt.inventory, s.inventory)
    assert not flows.consumed.any()


def test_lead_time_by_hand():
    eco = build_economy([("g", "industrial")], [])
    s = initial_state(eco, [0.0])
    s, _ = transition(eco, s, [5.0], lead_time={"g": 2})
    assert s.tick == 1 and s.inventory[0] == 0
    s, _ = transition(eco, s, [0.0], lead_time={"g": 2})
    assert s.tick == 2 and s.inventory[0] == 0
    s, released = release_pending(s)
    assert s.inventory[0] == 5 and released[0] == 5 and s.pending == ()


def test_overconsumption_is_a_defect(base_village):
    x = np.zeros(8)
    x[2] = 10.0  # T-rings need 10 L
    with pytest.raises(InfeasiblePlanError):
        transition(base_village, initial_state(base_village, {L: 1.0}), x)


def test_humanity_village_example(base_village):
    s = initial_state(base_village, {L: 3000, T: 180})
    delivered, hu = deliver_and_score(base_village, s, 0.5)
    assert hu == pytest.approx(0.6)
    assert delivered[0] == pytest.approx(0.5 * 3400)
    assert delivered[2] == pytest.approx(0.5 * 180)


def test_humanity_boundaries(base_village):
    C = base_village.profile_claims()
    exact = C.sum(axis=1)
    assert humanity(base_village, exact) == pytest.approx(1.0)
    assert humanity(base_village, np.zeros(8)) == 0.0
    no_claims = build_economy(VILLAGE_GOODS, VILLAGE_CONSTANTS, {"Profile 0": 0, "Profile 1": 0})
    assert humanity(no_claims, np.zeros(8)) == 1.0


def test_delivery_rationed_by_stock(base_village):
    delivered, _ = deliver_and_score(base_village, initial_state(base_village, {L: 100}), 1.0)
    assert delivered[0] == 100 and delivered[2] == 0


def test_externality_and_reward_examples():
    eco = build_economy([("g", "final"), ("p", "profile")], [("g", "p", 1.0)], {"p": 10},
                        {"kinds": ["smoke"], "coefficients": {"smoke": {"g": 2.0}}, "weights": {"smoke": 1.0}})
    assert externality_step(eco, [10.0, 0.0]) == 20.0
    traj = run_simulation(eco, {"g": 0.0}, SimConfig(horizon=3, theta=0.0, solver=SolverConfig()))
    assert [r.externality_step for r in traj.reports] == [20.0, 20.0, 20.0]
    assert traj.final_state.cumulative_externality == 60.0
    assert reward(0.6, 20, 0.01) == pytest.approx(0.4)
    assert reward(0.7, 20, 0.0) == 0.7
    assert reward(0.0, 0.0, 0.5) == 0.0
    muted = dataclasses.replace(eco, externality_weights=np.zeros(1))
    assert externality_step(muted, [10.0, 0.0]) == 0.0
    assert externality_step(village_economy(), np.ones(8)) == 0.0


def test_noise_examples():
    s = SimState(0, np.array([10.0, 4.0]))
    rng = np.random.default_rng(0)
    out, loss = apply_noise(s, NoiseConfig(1.0, 0.5, 0.5), rng)
    np.testing.assert_array_equal(out.inventory, [5.0, 2.0])
    np.testing.assert_array_equal(loss, [5.0, 2.0])
    out, loss = apply_noise(s, NoiseConfig(0.0, 0.2, 0.5), rng)
    np.testing.assert_array_equal(out.inventory, s.inventory)


def test_horizon_zero(village):
    traj = run_simulation(village.economy, village.state, dataclasses.replace(village.sim, horizon=0))
    assert len(traj) == 0 and traj.discounted_return == 0.0


def test_fault_recorded_and_simulation_continues(village):
    bad = dataclasses.replace(village.sim, horizon=3, solver=SolverConfig(method="fixed-point", max_iterations=1))
    traj = run_simulation(village.economy, village.state, bad)
    assert len(traj) == 3
    for r in traj.reports:
        assert r.fault is not None
        assert not r.executed_x.any()


def test_invalid_configs():
    with pytest.raises(ValueError):
        SimConfig(theta=1.5)
    with pytest.raises(ValueError):
        SimConfig(gamma=1.0)
    with pytest.raises(ValueError):
        NoiseConfig(0.5, 0.6, 0.2)


def run(village, **changes):
    return run_simulation(village.economy, village.state, dataclasses.replace(village.sim, **changes))


def check_invariants(economy, traj):
    durable = economy.durable_mask
    cum = 0.0
    for r in traj.reports:
        expected = r.inventory_before + r.materialized - r.consumed - r.delivered - r.noise_loss
        np.testing.assert_allclose(r.inventory_after, expected, rtol=0, atol=1e-9)
        assert np.all(r.inventory_after >= 0)
        assert 0 <= r.delivery_scale <= r.lambda_max <= 1
        assert np.all(r.executed_x <= r.planned_x * r.lambda_max + 1e-12)
        cum += r.externality_step
        assert r.cumulative_externality == cum
        if not r.noise_loss.any():
            assert np.all(r.inventory_after[durable] >= r.inventory_before[durable])


def test_village_noiseless_invariants(village):
    traj = run(village, horizon=60, theta=0.3)
    check_invariants(village.economy, traj)
    hu = traj.humanity
    assert np.all(np.diff(hu) >= 0)
    assert hu.max() >= 1


@settings(max_examples=8, deadline=None)
@given(st.floats(0, 1), st.floats(0, 0.3), st.integers(0, 2**32))
def test_village_invariants_under_noise(theta, p, seed):
    from naturaplan.scenario import parse_scenario as ps
    sc = ps("village.olin")
    traj = run_simulation(sc.economy, sc.state, dataclasses.replace(
        sc.sim, horizon=25, theta=theta, noise=NoiseConfig(p, 0.2, 0.5), rng_seed=seed))
    check_invariants(sc.economy, traj)


def test_seeded_determinism(village):
    cfg = dict(horizon=40, theta=0.1, noise=NoiseConfig(0.05, 0.2, 0.5), rng_seed=99)
    a, b = run(village, **cfg), run(village, **cfg)
    for ra, rb in zip(a.reports, b.reports):
        for f in dataclasses.fields(ra):
            va, vb = getattr(ra, f.name), getattr(rb, f.name)
            if isinstance(va, np.ndarray):
                assert np.array_equal(va, vb)
            else:
                assert va == vb
    assert a.discounted_return == b.discounted_return


def test_gamma_zero_return_is_first_reward(village):
    traj = run(village, horizon=5, gamma=0.0)
    assert traj.discounted_return == traj.reports[0].reward


def test_discounted_return_recomputable(village):
    traj = run(village, horizon=10, gamma=0.9, lambda_ext=0.01)
    assert traj.discounted_return == sum(0.9 ** t * r.reward for t, r in enumerate(traj.reports))


@settings(max_examples=50)
@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1e3), st.floats(0, 1e3))
def test_humanity_monotone_in_stock(sl, st_, bump_l, bump_t):
    eco = village_economy()
    base = np.zeros(8)
    base[0], base[2] = sl, st_
    more = base.copy()
    more[0] += bump_l
    more[2] += bump_t
    assert humanity(eco, more) >= humanity(eco, base)
