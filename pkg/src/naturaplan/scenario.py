"""Scenario files (``.olin``): YAML documents describing an economy and a run.

Layout::

    schema_version: 1
    goods:            [{name, kind, durable?, lead_time?}, ...]
    coefficients:     [{input, output, value} | {input, output, breakpoints, extrapolation?}, ...]
    profiles:         [{name, population, consumption: {good: amount}}, ...]
    externalities:    {kinds: [...], coefficients: {kind: {good: e}}, weights: {kind: rho}}
    initial_inventory: {good: amount}
    sim:              {horizon, theta, gamma, lambda_ext, seed, noise: {p, range}, solver: {...}}

Profiles become goods of kind ``profile`` appended after ``goods``; their
consumption fills the profile's matrix column.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .economy import CoeffFn, Economy, EconomyError, Good, GoodKind, build_economy
from .sim import NoiseConfig, SimConfig, SimState, Trajectory, initial_state
from .solvers import SolverConfig

SCHEMA_VERSION = 1
FIXTURES = ("village.olin", "village_linear.olin")

# Investment fractions for the noisy village run: with the documented seed
# the low one collapses and the high one becomes self-sustaining.
VILLAGE_THETA_LOW = 0.01
VILLAGE_THETA_HIGH = 0.3
VILLAGE_NOISE = NoiseConfig(p=0.05, phi_min=0.2, phi_max=0.5)
VILLAGE_NOISE_SEED = 7


class ScenarioError(ValueError):
    """Schema or content error, prefixed with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class Scenario:
    economy: Economy
    sim: SimConfig
    state: SimState


def _expect(value, types, path: str, what: str):
    if not isinstance(value, types):
        raise ScenarioError(path, f"expected {what}, got {type(value).__name__}")
    return value


def _number(value, path: str, minimum: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ScenarioError(path, "must be finite")
    if minimum is not None and value < minimum:
        raise ScenarioError(path, f"must be >= {minimum}, got {value}")
    return value


def _keys(d: dict, path: str, required: set[str], optional: set[str] = frozenset()) -> None:
    missing = required - d.keys()
    if missing:
        raise ScenarioError(path, f"missing field(s) {sorted(missing)}")
    extra = d.keys() - required - optional
    if extra:
        raise ScenarioError(path, f"unknown field(s) {sorted(extra)}")


def _good_ref(name, known: dict[str, int], path: str) -> str:
    if not isinstance(name, str):
        raise ScenarioError(path, f"expected a good name, got {name!r}")
    if name not in known:
        raise ScenarioError(path, f"unknown good {name!r}")
    return name


def _parse_sim(raw: dict, lead_time: dict[str, int], path: str = "sim") -> SimConfig:
    _expect(raw, dict, path, "a mapping")
    _keys(raw, path, set(), {"horizon", "theta", "gamma", "lambda_ext", "seed", "noise", "solver", "labour_cap"})
    kw: dict[str, Any] = {"lead_time": lead_time}
    if "horizon" in raw:
        h = raw["horizon"]
        if isinstance(h, bool) or not isinstance(h, int) or h < 0:
            raise ScenarioError(f"{path}.horizon", "expected a non-negative integer")
        kw["horizon"] = h
    for key in ("theta", "gamma", "lambda_ext"):
        if key in raw:
            kw[key] = _number(raw[key], f"{path}.{key}", 0.0)
    if "seed" in raw:
        s = raw["seed"]
        if isinstance(s, bool) or not isinstance(s, int):
            raise ScenarioError(f"{path}.seed", "expected an integer")
        kw["rng_seed"] = s
    if "noise" in raw:
        n = _expect(raw["noise"], dict, f"{path}.noise", "a mapping")
        _keys(n, f"{path}.noise", set(), {"p", "range"})
        rng = n.get("range", [0.0, 0.0])
        if not isinstance(rng, list) or len(rng) != 2:
            raise ScenarioError(f"{path}.noise.range", "expected [lo, hi]")
        try:
            kw["noise"] = NoiseConfig(
                _number(n.get("p", 0.0), f"{path}.noise.p"),
                _number(rng[0], f"{path}.noise.range[0]"),
                _number(rng[1], f"{path}.noise.range[1]"),
            )
        except ValueError as exc:
            raise ScenarioError(f"{path}.noise", str(exc)) from None
    if "solver" in raw:
        s = _expect(raw["solver"], dict, f"{path}.solver", "a mapping")
        _keys(s, f"{path}.solver", set(), {"method", "tolerance", "max_iterations", "linear_backend"})
        try:
            kw["solver"] = SolverConfig(**s)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}.solver", str(exc)) from None
    if "labour_cap" in raw:
        caps = _expect(raw["labour_cap"], dict, f"{path}.labour_cap", "a mapping")
        kw["labour_cap"] = {k: _number(v, f"{path}.labour_cap.{k}", 0.0) for k, v in caps.items()}
    try:
        return SimConfig(**kw)
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from None


def scenario_from_dict(doc: Any) -> Scenario:
    """Validate a decoded scenario document."""
    _expect(doc, dict, "", "a mapping at top level")
    _keys(doc, "", {"schema_version", "goods"},
          {"coefficients", "profiles", "externalities", "initial_inventory", "sim"})
    version = doc["schema_version"]
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r}; expected {SCHEMA_VERSION}")

    raw_goods = _expect(doc["goods"], list, "goods", "a list")
    if not raw_goods:
        raise ScenarioError("goods", "goods must be non-empty")
    goods: list[Good] = []
    lead_time: dict[str, int] = {}
    for k, g in enumerate(raw_goods):
        path = f"goods[{k}]"
        _expect(g, dict, path, "a mapping")
        _keys(g, path, {"name", "kind"}, {"durable", "lead_time"})
        name = _expect(g["name"], str, f"{path}.name", "a string")
        try:
            kind = GoodKind(g["kind"])
        except ValueError:
            raise ScenarioError(f"{path}.kind", f"expected industrial, final or labour, got {g['kind']!r}") from None
        if kind is GoodKind.PROFILE:
            raise ScenarioError(f"{path}.kind", "declare profiles under 'profiles'")
        durable = g.get("durable", False)
        if not isinstance(durable, bool):
            raise ScenarioError(f"{path}.durable", "expected true or false")
        try:
            goods.append(Good(name, kind, durable))
        except EconomyError as exc:
            raise ScenarioError(path, str(exc)) from None
        if "lead_time" in g:
            lt = g["lead_time"]
            if isinstance(lt, bool) or not isinstance(lt, int) or lt < 0:
                raise ScenarioError(f"{path}.lead_time", "expected a non-negative integer")
            if lt:
                lead_time[name] = lt

    raw_profiles = _expect(doc.get("profiles", []) or [], list, "profiles", "a list")
    populations: dict[str, float] = {}
    for k, p in enumerate(raw_profiles):
        path = f"profiles[{k}]"
        _expect(p, dict, path, "a mapping")
        _keys(p, path, {"name", "population"}, {"consumption"})
        name = _expect(p["name"], str, f"{path}.name", "a string")
        goods.append(Good(name, GoodKind.PROFILE))
        populations[name] = _number(p["population"], f"{path}.population", 0.0)

    known = {g.name: i for i, g in enumerate(goods)}
    if len(known) != len(goods):
        names = [g.name for g in goods]
        raise ScenarioError("goods", f"duplicate good names: {sorted({n for n in names if names.count(n) > 1})}")

    entries = []
    for k, c in enumerate(_expect(doc.get("coefficients", []) or [], list, "coefficients", "a list")):
        path = f"coefficients[{k}]"
        _expect(c, dict, path, "a mapping")
        if "breakpoints" in c:
            _keys(c, path, {"input", "output", "breakpoints"}, {"extrapolation"})
            bps = _expect(c["breakpoints"], list, f"{path}.breakpoints", "a list of [x, f] pairs")
            pts = []
            for m, bp in enumerate(bps):
                if not isinstance(bp, list) or len(bp) != 2:
                    raise ScenarioError(f"{path}.breakpoints[{m}]", "expected [x, f]")
                pts.append((_number(bp[0], f"{path}.breakpoints[{m}][0]"),
                            _number(bp[1], f"{path}.breakpoints[{m}][1]")))
            try:
                value = CoeffFn(tuple(pts), c.get("extrapolation", "clamp-last"))
            except EconomyError as exc:
                raise ScenarioError(f"{path}.breakpoints", str(exc)) from None
        else:
            _keys(c, path, {"input", "output", "value"})
            value = _number(c["value"], f"{path}.value")
        entries.append((_good_ref(c["input"], known, f"{path}.input"),
                        _good_ref(c["output"], known, f"{path}.output"), value, path))
    for k, p in enumerate(raw_profiles):
        cons = _expect(p.get("consumption", {}) or {}, dict, f"profiles[{k}].consumption", "a mapping")
        for good, amount in cons.items():
            path = f"profiles[{k}].consumption.{good}"
            entries.append((_good_ref(good, known, path), p["name"], _number(amount, path), path))

    ext = None
    if doc.get("externalities"):
        raw = _expect(doc["externalities"], dict, "externalities", "a mapping")
        _keys(raw, "externalities", {"kinds"}, {"coefficients", "weights"})
        kinds = _expect(raw["kinds"], list, "externalities.kinds", "a list")
        coeffs = _expect(raw.get("coefficients", {}) or {}, dict, "externalities.coefficients", "a mapping")
        weights = _expect(raw.get("weights", {}) or {}, dict, "externalities.weights", "a mapping")
        for kind, per_good in coeffs.items():
            _expect(per_good, dict, f"externalities.coefficients.{kind}", "a mapping")
            for good, e in per_good.items():
                _good_ref(good, known, f"externalities.coefficients.{kind}.{good}")
                _number(e, f"externalities.coefficients.{kind}.{good}", 0.0)
        for kind, w in weights.items():
            _number(w, f"externalities.weights.{kind}", 0.0)
        ext = {"kinds": kinds, "coefficients": coeffs, "weights": weights}

    # per-entry validation first, so errors carry the entry's path
    for inp, out, value, path in entries:
        if not callable(value) and value < 0:
            raise ScenarioError(path, "negative coefficient")
        j = known[out]
        if goods[j].kind is GoodKind.LABOUR and (callable(value) or value != 0):
            raise ScenarioError(path, f"nonzero entry in labour column {out!r}")
    try:
        economy = build_economy(goods, [e[:3] for e in entries], populations, ext)
    except EconomyError as exc:
        raise ScenarioError("coefficients", str(exc)) from None

    inv = _expect(doc.get("initial_inventory", {}) or {}, dict, "initial_inventory", "a mapping")
    for good, amount in inv.items():
        _good_ref(good, known, f"initial_inventory.{good}")
        _number(amount, f"initial_inventory.{good}", 0.0)
    sim = _parse_sim(doc.get("sim", {}) or {}, lead_time)
    for name in (sim.labour_cap or {}):
        _good_ref(name, known, f"sim.labour_cap.{name}")
    return Scenario(economy, sim, initial_state(economy, inv))


def loads(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark else ""
        raise ScenarioError(where, f"invalid YAML: {exc}") from None
    return scenario_from_dict(doc)


def resolve_path(path: str | Path) -> Path:
    """Filesystem path, or a bundled fixture when only its name is given."""
    p = Path(path)
    if not p.exists() and p.name in FIXTURES and len(p.parts) == 1:
        return Path(str(resources.files("naturaplan") / "fixtures" / p.name))
    return p


def parse_scenario(path: str | Path) -> Scenario:
    p = resolve_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError("", f"cannot read {p}: {exc.strerror}") from None
    return loads(text)


def scenario_to_dict(sc: Scenario) -> dict:
    eco = sc.economy
    names = eco.names
    goods = []
    for g in eco.goods:
        if g.kind is GoodKind.PROFILE:
            continue
        d: dict[str, Any] = {"name": g.name, "kind": g.kind.value}
        if g.durable:
            d["durable"] = True
        if sc.sim.lead_time.get(g.name):
            d["lead_time"] = int(sc.sim.lead_time[g.name])
        goods.append(d)

    profile_cols = set(eco.indices_of(GoodKind.PROFILE).tolist())
    A = eco.constants.tocoo()
    cells = {(int(i), int(j)): float(v) for i, j, v in zip(A.row, A.col, A.data)}
    cells.update(eco.functional)
    coefficients = []
    for (i, j) in sorted(cells):
        if j in profile_cols:
            continue
        value = cells[(i, j)]
        entry: dict[str, Any] = {"input": names[i], "output": names[j]}
        if isinstance(value, CoeffFn):
            entry["breakpoints"] = [[x, f] for x, f in value.breakpoints]
            entry["extrapolation"] = value.extrapolation
        elif callable(value):
            raise ScenarioError(f"coefficients[{names[i]},{names[j]}]",
                                "only breakpoint curves can be serialized")
        else:
            entry["value"] = value
        coefficients.append(entry)

    profiles = []
    for j in sorted(profile_cols):
        cons = {names[i]: cells[(i, j)] for i in range(eco.n) if (i, j) in cells}
        profiles.append({"name": names[j], "population": float(eco.populations[j]), "consumption": cons})

    doc: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "goods": goods,
                           "coefficients": coefficients, "profiles": profiles}
    if eco.externality_kinds:
        doc["externalities"] = {
            "kinds": list(eco.externality_kinds),
            "coefficients": {k: {names[j]: float(eco.externality_coeffs[m, j])
                                 for j in range(eco.n) if eco.externality_coeffs[m, j] != 0}
                             for m, k in enumerate(eco.externality_kinds)},
            "weights": {k: float(eco.externality_weights[m]) for m, k in enumerate(eco.externality_kinds)},
        }
    doc["initial_inventory"] = {names[i]: float(v) for i, v in enumerate(sc.state.inventory) if v != 0}
    s = sc.sim
    sim: dict[str, Any] = {
        "horizon": s.horizon, "theta": s.theta, "gamma": s.gamma, "lambda_ext": s.lambda_ext,
        "seed": s.rng_seed,
        "noise": {"p": s.noise.p, "range": [s.noise.phi_min, s.noise.phi_max]},
        "solver": {"method": s.solver.method, "tolerance": s.solver.tolerance,
                   "max_iterations": s.solver.max_iterations, "linear_backend": s.solver.linear_backend},
    }
    if s.labour_cap:
        sim["labour_cap"] = dict(s.labour_cap)
    doc["sim"] = sim
    return doc


class _Dumper(yaml.SafeDumper):
    pass


def _flow_pairs(dumper, data):
    flow = all(not isinstance(v, (list, dict)) for v in data)
    return dumper.represent_sequence("tag:yaml.org,2002:seq", data, flow_style=flow)


_Dumper.add_representer(list, _flow_pairs)


def dumps(sc: Scenario) -> str:
    return yaml.dump(scenario_to_dict(sc), Dumper=_Dumper, sort_keys=False, allow_unicode=True, width=100)


# -- CSV output ---------------------------------------------------------------

def _fmt(v) -> str:
    # repr of a Python float round-trips exactly
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


TRAJECTORY_COLUMNS = ("tick", "humanity", "externality_step", "externality_cum", "reward", "delivery_scale")
BENCH_COLUMNS = ("n_industrial", "n_final", "n_profiles", "deps", "n_total", "nnz", "time_s_median", "residual")


def trajectory_rows(economy: Economy, traj: Trajectory) -> tuple[list[str], list[list[str]]]:
    header = list(TRAJECTORY_COLUMNS) + [f"inventory_{name}" for name in economy.names]
    rows = []
    for r in traj.reports:
        rows.append([_fmt(r.tick), _fmt(r.humanity), _fmt(r.externality_step),
                     _fmt(r.cumulative_externality), _fmt(r.reward), _fmt(r.delivery_scale)]
                    + [_fmt(v) for v in r.inventory_after])
    return header, rows


def write_csv(header, rows, out) -> str | None:
    """Write to a path or file object; ``out=None`` returns the text."""
    if out is None:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([header, *rows])
        return buf.getvalue()
    if hasattr(out, "write"):
        csv.writer(out, lineterminator="\n").writerows([header, *rows])
        return None
    with open(out, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([header, *rows])
    return None
