import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from naturaplan.economy import (
    CoeffFn,
    Economy,
    EconomyError,
    ExtrapolationError,
    Good,
    GoodKind,
    ProductionUnitSpec,
    aggregate_units,
    build_economy,
    eval_matrix,
    eval_matrix_derivative,
    fit_coeff_fn,
)

from conftest import LB, L, V, village_economy


def test_village_builds(base_village):
    assert base_village.n == 8
    assert base_village.populations[-2:].tolist() == [800, 500]
    assert base_village.demand().tolist() == [0, 0, 0, 0, 0, 0, 800, 500]
    assert base_village.is_linear


def test_single_good_zero_matrix():
    eco = build_economy([("g", "industrial")], [])
    assert eco.n == 1
    F = eval_matrix(eco, [3.0])
    assert F.nnz == 0 and F.shape == (1, 1)


def test_labour_column_entry_rejected():
    with pytest.raises(EconomyError, match="[Ll]abour"):
        build_economy(
            [Good(L, GoodKind.FINAL), Good(V, GoodKind.INDUSTRIAL), Good(LB[L], GoodKind.LABOUR)],
            [(V, LB[L], 0.1)],
        )


@pytest.mark.parametrize("entries, msg", [
    ([("a", "a", -0.1)], "negative"),
    ([("a", "zz", 0.1)], "unknown"),
    ([("a", "a", 0.1), ("a", "a", 0.2)], "twice"),
])
def test_entry_validation(entries, msg):
    with pytest.raises(EconomyError, match=msg):
        build_economy([("a", "industrial"), ("b", "final")], entries)


def test_duplicate_names():
    with pytest.raises(EconomyError, match="duplicate"):
        build_economy([("a", "industrial"), ("a", "final")], [])


def test_profile_column_must_hit_final_or_labour():
    goods = [("i", "industrial"), ("f", "final"), ("p", "profile")]
    build_economy(goods, [("f", "p", 1.0)], {"p": 10})
    with pytest.raises(EconomyError):
        build_economy(goods, [("i", "p", 1.0)], {"p": 10})


def test_fit_constant_requirement():
    fn = fit_coeff_fn([(1, 0.5), (2, 1.0), (3, 1.5)])
    for x in np.linspace(1, 3, 11):
        assert fn(x) == pytest.approx(0.5, abs=1e-15)


def test_fit_interpolates_per_unit_values():
    fn = fit_coeff_fn([(10, 4.0), (20, 9.0)])
    assert fn(10) == pytest.approx(0.4)
    assert fn(20) == pytest.approx(0.45)
    assert fn(15) == pytest.approx(0.425)
    assert fn.derivative(15) == pytest.approx(0.005)


def test_clamp_below_first_and_at_zero():
    fn = fit_coeff_fn([(1, 0.5), (2, 1.2)])
    assert fn(0.5) == 0.5
    assert fn(0.0) == 0.5
    assert fn.derivative(0.5) == 0.0


def test_extrapolation_modes():
    pts = ((1.0, 0.5), (2.0, 0.6))
    assert CoeffFn(pts)(10) == 0.6
    assert CoeffFn(pts).derivative(2.0) == 0.0
    strict = CoeffFn(pts, extrapolation="error")
    assert strict.derivative(2.0) == pytest.approx(0.1)
    with pytest.raises(ExtrapolationError):
        strict(2.5)


def test_breakpoint_derivative_is_right_slope():
    fn = CoeffFn(((0, 1.0), (1, 2.0), (2, 2.5)))
    assert fn.derivative(1.0) == pytest.approx(0.5)
    assert fn.derivative(0.0) == pytest.approx(1.0)


@pytest.mark.parametrize("samples", [[], [(1, 1), (1, 2)], [(0, 1)], [(1, -1)]])
def test_fit_rejects_bad_samples(samples):
    with pytest.raises(EconomyError):
        fit_coeff_fn(samples)


def test_aggregate_merit_order():
    units = [ProductionUnitSpec(10, 0.6, 2), ProductionUnitSpec(10, 0.4, 0), ProductionUnitSpec(10, 0.5, 1)]
    fn = aggregate_units(units, [5, 10, 20, 25, 30])
    assert fn.total(25) == pytest.approx(12.0)
    assert fn(25) == pytest.approx(0.48)


def test_aggregate_single_unit_constant():
    fn = aggregate_units([ProductionUnitSpec(100, 0.5, 0)], [10, 50])
    assert fn(10) == fn(30) == fn(50) == 0.5


def test_aggregate_beyond_capacity():
    units = [ProductionUnitSpec(10, 0.4, k) for k in range(3)]
    with pytest.raises(ExtrapolationError):
        aggregate_units(units, [10, 35], extrapolation="error")


def test_aggregate_duplicate_rank():
    with pytest.raises(EconomyError, match="merit"):
        aggregate_units([ProductionUnitSpec(1, 0.1, 0), ProductionUnitSpec(1, 0.2, 0)], [1])


def test_eval_matrix_functional_entries_use_column_output():
    f01 = fit_coeff_fn([(50, 1.0), (150, 6.0)])
    f11 = CoeffFn(((0, 0.01), (200, 0.03)))
    eco = village_economy(f01, f11)
    x = np.zeros(8)
    x[1] = 100.0
    x[0] = 1e6  # row output must not matter
    F = eval_matrix(eco, x)
    assert F[0, 1] == f01(100.0)
    assert F[1, 1] == f11(100.0)
    D = eval_matrix_derivative(eco, x)
    assert D[0, 1] == f01.derivative(100.0)
    assert np.count_nonzero(D) == 2


def test_constant_economy_matrix_is_x_independent(base_village):
    a = eval_matrix(base_village, np.zeros(8))
    b = eval_matrix(base_village, np.arange(8.0) * 1e3)
    assert np.array_equal(a, b)
    assert not np.any(eval_matrix_derivative(base_village, np.ones(8)))


def test_sparse_economy_returns_csc():
    n = 50
    goods = [Good(f"g{k}", GoodKind.INDUSTRIAL) for k in range(n)]
    A = np.zeros((n, n))
    A[0, 1] = 0.2
    fn = CoeffFn(((1.0, 0.1), (2.0, 0.3)))
    eco = Economy.from_matrix(goods, A, {(2, 3): fn})
    assert eco.is_sparse
    F = eval_matrix(eco, np.full(n, 1.5))
    assert F.format == "csc"
    assert F[2, 3] == pytest.approx(0.2)
    assert eval_matrix_derivative(eco, np.full(n, 1.5))[2, 3] == pytest.approx(0.2)


positive_samples = st.lists(
    st.tuples(st.floats(0.01, 1e4), st.floats(0, 1e4)), min_size=1, max_size=12,
    unique_by=lambda s: s[0],
)


@given(positive_samples)
def test_fit_exact_at_samples(samples):
    fn = fit_coeff_fn(samples)
    for x, total in samples:
        assert fn(x) == pytest.approx(total / x, rel=1e-12, abs=1e-300)


@given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0, 5)), min_size=1, max_size=6),
       st.lists(st.floats(0.1, 500), min_size=2, max_size=20, unique=True))
def test_aggregate_totals_non_decreasing(specs, probes):
    units = [ProductionUnitSpec(c, r, k) for k, (c, r) in enumerate(specs)]
    probes = sorted(probes)
    fn = aggregate_units(units, probes, extrapolation="clamp-last")
    totals = [fn.total(p) for p in probes]
    assert all(b >= a - 1e-9 * max(1, a) for a, b in zip(totals, totals[1:]))


@given(st.lists(st.floats(0.1, 100), min_size=1, max_size=5), st.floats(0, 3))
def test_aggregate_shared_requirement_is_constant(caps, req):
    units = [ProductionUnitSpec(c, req, k) for k, c in enumerate(caps)]
    fn = aggregate_units(units, sorted({1.0, 2.0, 5.0, sum(caps)}), extrapolation="clamp-last")
    for x in (1, 3, sum(caps)):
        assert fn(x) == pytest.approx(req, rel=1e-12, abs=1e-15)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 2), min_size=2, max_size=8), st.floats(0.01, 0.99), st.integers(0, 6))
def test_derivative_matches_central_difference(fs, frac, seg):
    xs = [10.0 * (k + 1) for k in range(len(fs))]
    fn = CoeffFn(tuple(zip(xs, fs)))
    k = seg % (len(xs) - 1)
    x = xs[k] + frac * (xs[k + 1] - xs[k])
    h = 1e-6 * max(1.0, x)
    h = min(h, 0.5 * min(x - xs[k], xs[k + 1] - x))
    fd = (fn(x + h) - fn(x - h)) / (2 * h)
    assert fn.derivative(x) == pytest.approx(fd, rel=1e-6, abs=1e-9)
