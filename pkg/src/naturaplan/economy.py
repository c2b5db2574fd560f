"""Economy model: goods, technical coefficients and coefficient curves.

Entry ``(i, j)`` of the coefficient matrix is the quantity of good ``i``
consumed to produce one unit of good ``j``. Entries are either constants or
coefficient functions of the producing column's own output level ``x_j``.
"""

from __future__ import annotations

import bisect
import enum
import functools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

SPARSE_DENSITY = 0.1


class EconomyError(ValueError):
    """Raised when an economy or coefficient curve violates its invariants."""


class ExtrapolationError(ValueError):
    pass


class GoodKind(enum.Enum):
    INDUSTRIAL = "industrial"
    FINAL = "final"
    LABOUR = "labour"
    PROFILE = "profile"


@dataclass(frozen=True)
class Good:
    name: str
    kind: GoodKind
    durable: bool = False

    def __post_init__(self):
        if self.durable and self.kind is not GoodKind.INDUSTRIAL:
            raise EconomyError(f"good {self.name!r}: only industrial goods can be durable")


class CoefficientFunction(Protocol):
    """Anything usable as a functional matrix entry."""

    def __call__(self, x: float) -> float: ...

    def derivative(self, x: float) -> float: ...


@dataclass(frozen=True)
class CoeffFn:
    """Piecewise-linear per-unit requirement curve.

    Between breakpoints the per-unit value is interpolated linearly. Below
    the first breakpoint (including ``x = 0``) the first value is returned.
    Above the last one the last value is returned, or
    :class:`ExtrapolationError` is raised when ``extrapolation="error"``.

    The derivative is the slope of the segment to the right of ``x``.
    """

    breakpoints: tuple[tuple[float, float], ...]
    extrapolation: str = "clamp-last"
    _xs: np.ndarray = field(init=False, repr=False, compare=False)
    _fs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(x), float(f)) for x, f in self.breakpoints)
        if not pts:
            raise EconomyError("coefficient curve needs at least one breakpoint")
        if self.extrapolation not in ("clamp-last", "error"):
            raise EconomyError(f"unknown extrapolation mode {self.extrapolation!r}")
        xs = np.array([p[0] for p in pts])
        fs = np.array([p[1] for p in pts])
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(fs))):
            raise EconomyError("breakpoints must be finite")
        if xs[0] < 0 or np.any(np.diff(xs) <= 0):
            raise EconomyError("breakpoint x values must be >= 0 and strictly increasing")
        if np.any(fs < 0):
            raise EconomyError("per-unit requirements must be >= 0")
        object.__setattr__(self, "breakpoints", pts)
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_fs", fs)

    def _check_domain(self, x: float) -> None:
        if self.extrapolation == "error" and x > self._xs[-1]:
            raise ExtrapolationError(
                f"x={x} beyond last breakpoint {self._xs[-1]} (extrapolation=error)"
            )

    def __call__(self, x: float) -> float:
        x = float(x)
        self._check_domain(x)
        return float(np.interp(x, self._xs, self._fs))

    def derivative(self, x: float) -> float:
        x = float(x)
        self._check_domain(x)
        xs, fs = self._xs, self._fs
        if len(xs) == 1 or x < xs[0]:
            return 0.0
        k = bisect.bisect_right(self.breakpoints, (x, float("inf"))) - 1
        if k >= len(xs) - 1:
            if self.extrapolation == "error":
                # one-sided: only the left segment exists at the last breakpoint
                return float((fs[-1] - fs[-2]) / (xs[-1] - xs[-2]))
            return 0.0
        return float((fs[k + 1] - fs[k]) / (xs[k + 1] - xs[k]))

    def total(self, x: float) -> float:
        """Total input needed for output ``x``, i.e. ``f(x) * x``."""
        return self(x) * float(x)


@dataclass(frozen=True)
class AnalyticCoeff:
    """Closed-form coefficient function with a user supplied derivative."""

    fn: Callable[[float], float]
    dfn: Callable[[float], float]
    label: str = ""

    def __call__(self, x: float) -> float:
        return float(self.fn(float(x)))

    def derivative(self, x: float) -> float:
        return float(self.dfn(float(x)))


def fit_coeff_fn(samples: Iterable[tuple[float, float]], extrapolation: str = "clamp-last") -> CoeffFn:
    """Turn ``(output, total input)`` samples into a per-unit curve.

    Each total is divided by its output level, so the returned curve
    reproduces ``total_k / x_k`` exactly at every sample.
    """
    pts = [(float(x), float(t)) for x, t in samples]
    if not pts:
        raise EconomyError("need at least one sample")
    xs = [p[0] for p in pts]
    if len(set(xs)) != len(xs):
        raise EconomyError("duplicate output levels in samples")
    for x, t in pts:
        if not x > 0:
            raise EconomyError(f"output level must be positive, got {x}")
        if t < 0:
            raise EconomyError(f"total input must be >= 0, got {t}")
    pts.sort()
    return CoeffFn(tuple((x, t / x) for x, t in pts), extrapolation=extrapolation)


@dataclass(frozen=True)
class ProductionUnitSpec:
    capacity: float
    requirement_per_unit: float
    merit_rank: int

    def __post_init__(self):
        if not self.capacity > 0:
            raise EconomyError("unit capacity must be positive")
        if self.requirement_per_unit < 0:
            raise EconomyError("unit requirement must be >= 0")


def stacked_total(units: Sequence[ProductionUnitSpec], x: float, extrapolation: str = "error") -> float:
    """Input needed when ``x`` units are produced by filling units in merit order."""
    ordered = sorted(units, key=lambda u: u.merit_rank)
    capacity = sum(u.capacity for u in ordered)
    if x > capacity and extrapolation == "error":
        raise ExtrapolationError(f"output {x} exceeds total capacity {capacity}")
    remaining = float(x)
    total = 0.0
    for u in ordered:
        take = min(remaining, u.capacity)
        total += take * u.requirement_per_unit
        remaining -= take
        if remaining <= 0:
            break
    if remaining > 0:
        # clamp-last: the marginal unit keeps running past its nominal capacity
        total += remaining * ordered[-1].requirement_per_unit
    return total


def aggregate_units(
    units: Sequence[ProductionUnitSpec],
    probe_points: Sequence[float],
    extrapolation: str = "error",
) -> CoeffFn:
    """Stack production units by merit rank and fit a per-unit curve.

    Units are activated in ``merit_rank`` order, each filled to capacity
    before the next starts. The summed input at every probe point is handed
    to :func:`fit_coeff_fn`.
    """
    if not units:
        raise EconomyError("need at least one production unit")
    ranks = [u.merit_rank for u in units]
    if len(set(ranks)) != len(ranks):
        raise EconomyError("merit ranks must be unique")
    probes = [float(p) for p in probe_points]
    if not probes:
        raise EconomyError("need at least one probe point")
    if any(p <= 0 for p in probes) or any(b <= a for a, b in zip(probes, probes[1:])):
        raise EconomyError("probe points must be positive and increasing")
    samples = [(p, stacked_total(units, p, extrapolation)) for p in probes]
    return fit_coeff_fn(samples, extrapolation=extrapolation)


@dataclass(frozen=True, eq=False)
class Economy:
    """Validated economy. Build with :func:`build_economy` or :meth:`from_matrix`.

    ``constants`` holds every constant entry as an ``n x n`` CSC array;
    ``functional`` maps ``(input, output)`` index pairs to coefficient
    functions. A pair never appears in both.
    """

    goods: tuple[Good, ...]
    constants: sp.csc_array
    functional: Mapping[tuple[int, int], CoefficientFunction]
    populations: np.ndarray
    externality_kinds: tuple[str, ...] = ()
    externality_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    externality_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self) -> int:
        return len(self.goods)

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.goods]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown good {name!r}") from None

    @functools.cached_property
    def _index(self) -> dict[str, int]:
        return {g.name: i for i, g in enumerate(self.goods)}

    def indices_of(self, *kinds: GoodKind) -> np.ndarray:
        return np.array([i for i, g in enumerate(self.goods) if g.kind in kinds], dtype=int)

    @property
    def durable_mask(self) -> np.ndarray:
        return np.array([g.durable for g in self.goods], dtype=bool)

    @property
    def production_mask(self) -> np.ndarray:
        """Goods that are actually manufactured (industrial and final)."""
        return np.array([g.kind in (GoodKind.INDUSTRIAL, GoodKind.FINAL) for g in self.goods])

    @property
    def is_linear(self) -> bool:
        return not self.functional

    @property
    def nnz(self) -> int:
        return int(self.constants.nnz) + len(self.functional)

    @property
    def is_sparse(self) -> bool:
        return self.nnz < SPARSE_DENSITY * self.n * self.n

    def demand(self) -> np.ndarray:
        """Profile-based demand: citizen counts at profile rows, zero elsewhere."""
        return self.populations.astype(float).copy()

    def profile_claims(self) -> np.ndarray:
        """Per-tick claims ``a_ij * N_j``, shape ``(n, n)``; nonzero only in profile columns."""
        claims = np.zeros((self.n, self.n))
        prof = self.indices_of(GoodKind.PROFILE)
        if prof.size:
            block = self.constants[:, prof].toarray()
            claims[:, prof] = block * self.populations[prof][None, :]
        return claims

    def with_coefficients(self, functional: Mapping[tuple[int, int], CoefficientFunction] | None = None,
                          constants: sp.csc_array | None = None) -> "Economy":
        """Copy with a replaced set of coefficients, re-validated."""
        return Economy.from_matrix(
            self.goods,
            self.constants if constants is None else constants,
            functional=self.functional if functional is None else functional,
            populations=self.populations,
            externality_kinds=self.externality_kinds,
            externality_coeffs=self.externality_coeffs,
            externality_weights=self.externality_weights,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Economy):
            return NotImplemented
        if self.goods != other.goods or self.externality_kinds != other.externality_kinds:
            return False
        if self.constants.shape != other.constants.shape:
            return False
        if (self.constants != other.constants).nnz:
            return False
        if set(self.functional) != set(other.functional):
            return False
        if any(self.functional[k] != other.functional[k] for k in self.functional):
            return False
        return (
            np.array_equal(self.populations, other.populations)
            and np.array_equal(self.externality_coeffs, other.externality_coeffs)
            and np.array_equal(self.externality_weights, other.externality_weights)
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_matrix(
        cls,
        goods: Sequence[Good],
        constants,
        functional: Mapping[tuple[int, int], CoefficientFunction] | None = None,
        populations=None,
        externality_kinds: Sequence[str] = (),
        externality_coeffs=None,
        externality_weights=None,
    ) -> "Economy":
        goods = tuple(goods)
        n = len(goods)
        if n == 0:
            raise EconomyError("economy needs at least one good")
        names = [g.name for g in goods]
        if len(set(names)) != n:
            dup = sorted({x for x in names if names.count(x) > 1})
            raise EconomyError(f"duplicate good names: {dup}")

        A = sp.csc_array(constants, dtype=float)
        if A.shape != (n, n):
            raise EconomyError(f"coefficient matrix must be {n}x{n}, got {A.shape}")
        A.eliminate_zeros()
        A.sort_indices()
        if not np.all(np.isfinite(A.data)):
            raise EconomyError("coefficients must be finite")
        if np.any(A.data < 0):
            raise EconomyError("negative coefficient")

        functional = dict(functional or {})
        coo = A.tocoo()
        rows, cols = coo.row, coo.col
        for (i, j) in functional:
            if not (0 <= i < n and 0 <= j < n):
                raise EconomyError(f"functional entry ({i}, {j}) out of range")
            if A[i, j] != 0:
                raise EconomyError(f"entry ({names[i]}, {names[j]}) is both constant and functional")

        kinds = np.array([g.kind.value for g in goods])
        labour_cols = kinds == GoodKind.LABOUR.value
        profile_cols = kinds == GoodKind.PROFILE.value
        allowed_in_profile = (kinds == GoodKind.FINAL.value) | labour_cols

        bad = labour_cols[cols]
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise EconomyError(f"nonzero entry in labour column {names[cols[k]]!r}")
        bad = profile_cols[cols] & ~allowed_in_profile[rows]
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise EconomyError(
                f"profile column {names[cols[k]]!r} has entry in non-final row {names[rows[k]]!r}"
            )
        for (i, j) in functional:
            if labour_cols[j]:
                raise EconomyError(f"nonzero entry in labour column {names[j]!r}")
            if profile_cols[j]:
                raise EconomyError(f"profile column {names[j]!r} cannot hold functional entries")

        pops = np.zeros(n) if populations is None else np.asarray(populations, dtype=float).copy()
        if pops.shape != (n,):
            raise EconomyError("populations must have one entry per good")
        if np.any(pops < 0) or not np.all(np.isfinite(pops)):
            raise EconomyError("populations must be finite and >= 0")
        if np.any(pops[~profile_cols] != 0):
            raise EconomyError("populations are only allowed on profile goods")

        kinds_ext = tuple(externality_kinds)
        m = len(kinds_ext)
        E = np.zeros((m, n)) if externality_coeffs is None else np.asarray(externality_coeffs, dtype=float).copy()
        W = np.ones(m) if externality_weights is None else np.asarray(externality_weights, dtype=float).copy()
        if len(set(kinds_ext)) != m:
            raise EconomyError("duplicate externality kinds")
        if E.shape != (m, n) or W.shape != (m,):
            raise EconomyError("externality coefficients must be (kinds x goods) with one weight per kind")
        if np.any(E < 0) or np.any(W < 0):
            raise EconomyError("externality coefficients and weights must be >= 0")

        pops.setflags(write=False)
        E.setflags(write=False)
        W.setflags(write=False)
        return cls(goods, A, functional, pops, kinds_ext, E, W)


def _as_good(spec) -> Good:
    if isinstance(spec, Good):
        return spec
    if isinstance(spec, str):
        raise EconomyError(f"good {spec!r} needs a kind")
    name, kind, *rest = spec
    return Good(name, GoodKind(kind) if not isinstance(kind, GoodKind) else kind, bool(rest[0]) if rest else False)


def build_economy(
    goods: Sequence,
    entries: Iterable[tuple],
    populations: Mapping[str, float] | None = None,
    externalities: Mapping | None = None,
) -> Economy:
    """Assemble and validate an economy from named parts.

    Parameters
    ----------
    goods
        ``Good`` objects or ``(name, kind[, durable])`` tuples, in index order.
    entries
        ``(input, output, value)`` triples. Goods may be named or indexed;
        ``value`` is a number or a coefficient function. Unlisted entries
        are zero.
    populations
        Citizen count per profile good.
    externalities
        Optional ``{"kinds": [...], "coefficients": {kind: {good: e}},
        "weights": {kind: rho}}``.
    """
    goods = tuple(_as_good(g) for g in goods)
    n = len(goods)
    index = {g.name: i for i, g in enumerate(goods)}

    def resolve(ref) -> int:
        if isinstance(ref, (int, np.integer)):
            if not 0 <= ref < n:
                raise EconomyError(f"good index {ref} out of range")
            return int(ref)
        if ref not in index:
            raise EconomyError(f"unknown good {ref!r}")
        return index[ref]

    rows, cols, vals = [], [], []
    functional: dict[tuple[int, int], CoefficientFunction] = {}
    seen: set[tuple[int, int]] = set()
    for inp, out, value in entries:
        i, j = resolve(inp), resolve(out)
        if (i, j) in seen:
            raise EconomyError(f"entry ({goods[i].name}, {goods[j].name}) given twice")
        seen.add((i, j))
        if callable(value):
            functional[(i, j)] = value
        else:
            value = float(value)
            if value < 0:
                raise EconomyError(f"negative coefficient at ({goods[i].name}, {goods[j].name})")
            if value != 0:
                rows.append(i)
                cols.append(j)
                vals.append(value)
    A = sp.csc_array((vals, (rows, cols)), shape=(n, n))

    pops = np.zeros(n)
    for name, count in (populations or {}).items():
        pops[resolve(name)] = float(count)

    kinds: tuple[str, ...] = ()
    E = W = None
    if externalities:
        kinds = tuple(externalities.get("kinds", ()))
        E = np.zeros((len(kinds), n))
        W = np.ones(len(kinds))
        for k, kind in enumerate(kinds):
            for good, e in (externalities.get("coefficients", {}).get(kind, {}) or {}).items():
                E[k, resolve(good)] = float(e)
            if kind in externalities.get("weights", {}):
                W[k] = float(externalities["weights"][kind])
        unknown = set(externalities.get("coefficients", {})) | set(externalities.get("weights", {}))
        unknown -= set(kinds)
        if unknown:
            raise EconomyError(f"unknown externality kinds: {sorted(unknown)}")

    return Economy.from_matrix(goods, A, functional, pops, kinds, E, W)


def eval_matrix(economy: Economy, x) -> np.ndarray | sp.csc_array:
    """Coefficient matrix evaluated at output vector ``x``.

    Functional entry ``(i, j)`` is evaluated at ``x[j]``, the output of the
    producing column. Returns a CSC array for sparse economies and a dense
    array otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (economy.n,):
        raise ValueError(f"x must have length {economy.n}")
    if economy.is_sparse:
        if not economy.functional:
            return economy.constants.copy()
        M = economy.constants.tolil()
        for (i, j), fn in economy.functional.items():
            M[i, j] = fn(x[j])
        return sp.csc_array(M)
    M = economy.constants.toarray()
    for (i, j), fn in economy.functional.items():
        M[i, j] = fn(x[j])
    return M


def eval_matrix_derivative(economy: Economy, x) -> np.ndarray | sp.csc_array:
    """Matrix of ``f'_ij(x_j)``; zero wherever the entry is constant."""
    x = np.asarray(x, dtype=float)
    if x.shape != (economy.n,):
        raise ValueError(f"x must have length {economy.n}")
    if economy.is_sparse:
        keys = list(economy.functional)
        vals = [economy.functional[k].derivative(x[k[1]]) for k in keys]
        return sp.csc_array(
            (vals, ([k[0] for k in keys], [k[1] for k in keys])), shape=(economy.n, economy.n)
        )
    D = np.zeros((economy.n, economy.n))
    for (i, j), fn in economy.functional.items():
        D[i, j] = fn.derivative(x[j])
    return D
