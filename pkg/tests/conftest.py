import numpy as np
import pytest

from naturaplan.economy import Good, GoodKind, build_economy

L, V, T = "Lucloelium", "Vorpal Pick +1", "T-ring"
LB = {g: f"Lb({g})" for g in (L, V, T)}

VILLAGE_GOODS = [
    Good(L, GoodKind.FINAL),
    Good(V, GoodKind.INDUSTRIAL, durable=True),
    Good(T, GoodKind.FINAL),
    Good(LB[L], GoodKind.LABOUR),
    Good(LB[V], GoodKind.LABOUR),
    Good(LB[T], GoodKind.LABOUR),
    Good("Profile 0", GoodKind.PROFILE),
    Good("Profile 1", GoodKind.PROFILE),
]

VILLAGE_CONSTANTS = [
    (L, L, 0.001), (V, L, 0.5), (LB[L], L, 0.001),
    (LB[V], V, 0.012),
    (L, T, 1.0), (LB[T], T, 0.001),
    (L, "Profile 0", 3.0), (T, "Profile 0", 0.1),
    (L, "Profile 1", 2.0), (T, "Profile 1", 0.2),
]

VILLAGE_POPULATIONS = {"Profile 0": 800, "Profile 1": 500}


def village_economy(f01=None, f11=None, externalities=None):
    """Village economy; the two functional entries default to zero."""
    entries = list(VILLAGE_CONSTANTS)
    if f01 is not None:
        entries.append((L, V, f01))
    if f11 is not None:
        entries.append((V, V, f11))
    return build_economy(VILLAGE_GOODS, entries, VILLAGE_POPULATIONS, externalities)


def gauss_solve(M, b):
    """Plain Gaussian elimination with partial pivoting, written without numpy.linalg."""
    n = len(b)
    a = [[float(M[i][j]) for j in range(n)] + [float(b[i])] for i in range(n)]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(a[r][c]))
        if a[p][c] == 0:
            raise ZeroDivisionError("singular")
        a[c], a[p] = a[p], a[c]
        for r in range(c + 1, n):
            m = a[r][c] / a[c][c]
            for k in range(c, n + 1):
                a[r][k] -= m * a[c][k]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (a[r][n] - sum(a[r][k] * x[k] for k in range(r + 1, n))) / a[r][r]
    return np.array(x)


def oracle_leontief(A, d):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    M = [[(1.0 if i == j else 0.0) - A[i, j] for j in range(n)] for i in range(n)]
    return gauss_solve(M, list(d))


def random_constant_economy(rng, n=None, max_colsum=0.9, density=0.6):
    """Dense-ish random economy of producible goods, column sums <= max_colsum."""
    n = int(rng.integers(1, 21)) if n is None else n
    A = rng.uniform(0, 1, (n, n)) * (rng.uniform(0, 1, (n, n)) < density)
    sums = A.sum(axis=0)
    target = rng.uniform(0, max_colsum, n)
    A = A * np.divide(target, sums, out=np.zeros(n), where=sums > 0)
    d = rng.uniform(0, 100, n)
    return A, d


@pytest.fixture
def base_village():
    return village_economy()


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) != "call":
                continue
            lines += [v for k, v in rep.user_properties if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
