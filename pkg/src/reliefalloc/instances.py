"""Instance construction, built-in datasets, demand processes, and file I/O.

Built-in instances cover the theoretical 1-6 district layouts, the five
3-district scenario variants, and the 13-district Nepal earthquake case.
Demand tables for the S-curved scenarios are embedded verbatim; the
parametric generator reproduces them to within one unit.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .domain import TRUCK, UAV, ExogenousEvent, InstanceSpec

HORIZON = 30
PERIOD_HOURS = 6.0
DEFAULT_COV = 0.2
UAV_CAPACITY = 200
TRUCK_CAPACITY = 5000

# (demand per period, uav cost, truck cost) for the 1-6 district layouts.
_THEORY_DISTRICTS = {
    1: [(200, 150, 900)],
    2: [(300, 100, 600), (100, 200, 1200)],
    3: [(200, 50, 300), (300, 150, 900), (100, 250, 1500)],
    4: [(200, 50, 300), (300, 150, 900), (100, 200, 1200), (150, 300, 1800)],
    5: [(200, 50, 300), (300, 100, 600), (100, 150, 900), (150, 200, 1200),
        (250, 250, 1500)],
    6: [(200, 50, 300), (300, 100, 600), (100, 150, 900), (150, 200, 1200),
        (250, 250, 1500), (200, 300, 1800)],
}

# (name, demand per period, uav cost, truck cost), Nepal 2015 earthquake case.
_NEPAL_DISTRICTS = [
    ("Dolakha", 217, 202, 1256),
    ("Gorkha", 305, 178, 1266),
    ("Okhaldhunga", 55, 266, 1223),
    ("Sindhupalchok", 278, 108, 667),
    ("Bhaktapur", 117, 26, 169),
    ("Rasuwa", 49, 108, 1928),
    ("Ramechhap", 167, 214, 871),
    ("Makwanpur", 156, 197, 1085),
    ("Dhading", 352, 113, 731),
    ("Sindhuli", 156, 82, 683),
    ("Nuwakot", 333, 67, 437),
    ("Kavrepalanchok", 308, 62, 365),
    ("Lalitpur", 107, 12, 251),
]

# Per-period demand for the decreasing-demand scenario on the 3-district
# layout (150% of the base rate down to 50%). The increasing scenario is the
# same table reversed. Embedded verbatim from the published dataset.
SCURVE_DECREASING = np.array([
    [300, 450, 150], [298, 447, 149], [296, 444, 148], [293, 440, 147],
    [290, 435, 145], [285, 428, 143], [280, 420, 140], [273, 410, 137],
    [266, 399, 133], [258, 387, 129], [249, 374, 125], [239, 359, 120],
    [228, 342, 114], [217, 326, 109], [206, 309, 103], [194, 291, 97],
    [183, 275, 92], [172, 258, 86], [161, 242, 81], [151, 227, 76],
    [142, 213, 71], [134, 201, 67], [127, 191, 64], [120, 180, 60],
    [115, 173, 58], [110, 165, 55], [107, 161, 54], [104, 156, 52],
    [102, 153, 51], [100, 150, 50],
], dtype=np.int64)

STATIONARY = "stationary"
LOGISTIC_DECREASING = "logistic_decreasing"
LOGISTIC_INCREASING = "logistic_increasing"
EXPLICIT_TABLE = "explicit_table"

_PATTERNS = (STATIONARY, LOGISTIC_DECREASING, LOGISTIC_INCREASING, EXPLICIT_TABLE)

# Shape constant of the S-curve generator, calibrated so the generated
# 30-period tables agree with the embedded ones to within one unit.
_SCURVE_SHAPE = 7.2


class SchemaError(ValueError):
    """Instance-file schema violation; the message names the offending field."""


class UnknownInstanceError(KeyError):
    pass


@dataclass
class ScenarioConfig:
    """Recipe for the stochastic process an instance was built with."""

    pattern: str = STATIONARY
    cov: float = DEFAULT_COV
    modes_enabled: tuple[str, ...] = (UAV, TRUCK)
    seed: int = 0
    demand_table: np.ndarray | None = None  # required for explicit_table

    def __post_init__(self):
        if self.pattern not in _PATTERNS:
            raise SchemaError(f"scenario.pattern: unknown pattern {self.pattern!r}")
        if self.pattern == EXPLICIT_TABLE and self.demand_table is None:
            raise SchemaError("scenario.demand_table: required for explicit_table")


@dataclass(frozen=True)
class SamplePath:
    """One realization of all exogenous information over a horizon."""

    events: tuple[ExogenousEvent, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.events)

    def realized_demand_matrix(self) -> np.ndarray:
        """(T, N) demands realized at epochs 1..T."""
        return np.stack([ev.realized_demand for ev in self.events[1:]])

    def supply_vector(self) -> np.ndarray:
        """(T + 1,) supply arrivals at epochs 0..T."""
        return np.array([ev.supply_arrival for ev in self.events], dtype=np.int64)

    def digest(self) -> str:
        h = hashlib.sha256()
        for ev in self.events:
            h.update(np.int64(ev.supply_arrival).tobytes())
            h.update(ev.realized_demand.tobytes())
            h.update(ev.next_forecast.tobytes())
            h.update(ev.next_forecast_std.tobytes())
        return h.hexdigest()


def logistic_demand_table(base, start_frac: float, end_frac: float, periods: int) -> np.ndarray:
    """S-curve demand table: base rates scaled from start_frac to end_frac.

    Normalized probit-shaped interpolation; rounded to whole units.
    """
    base = np.asarray(base, dtype=np.float64)
    if start_frac <= 0 or end_frac <= 0:
        raise ValueError("fractions must be positive")
    if periods < 1:
        raise ValueError("periods must be >= 1")
    if periods == 1 or start_frac == end_frac:
        frac = np.full(periods, (start_frac + end_frac) / 2.0)
    else:
        t = np.arange(1, periods + 1, dtype=np.float64)
        mid = (1 + periods) / 2.0
        scale = _SCURVE_SHAPE * (periods - 1) / 29.0
        curve = norm.cdf((mid - t) / scale)
        lo, hi = norm.cdf((mid - periods) / scale), norm.cdf((mid - 1) / scale)
        frac = end_frac + (start_frac - end_frac) * (curve - lo) / (hi - lo)
    return np.rint(np.outer(frac, base)).astype(np.int64)


def _balanced_supply(demand_mean: np.ndarray, horizon: int) -> np.ndarray:
    per_period = float(demand_mean.sum(axis=1).mean())
    return np.full(horizon + 1, per_period)


def _make_instance(name, rows, scenario: ScenarioConfig, demand_table=None,
                   horizon=HORIZON, supply=None, district_names=None) -> InstanceSpec:
    modes = scenario.modes_enabled
    capacity = [UAV_CAPACITY if m == UAV else TRUCK_CAPACITY for m in modes]
    cost_col = {UAV: 1, TRUCK: 2}
    costs = [[row[cost_col[m]] for m in modes] for row in rows]
    if demand_table is None:
        demand = np.tile(np.array([r[0] for r in rows], dtype=np.float64), (horizon, 1))
    else:
        demand = np.asarray(demand_table, dtype=np.float64)
    supply_mean = _balanced_supply(demand, horizon) if supply is None \
        else np.full(horizon + 1, float(supply))
    return InstanceSpec(
        name=name,
        mode_names=tuple(modes),
        capacity=np.array(capacity),
        transport_cost=np.array(costs, dtype=np.float64),
        horizon=horizon,
        period_hours=PERIOD_HOURS,
        demand_mean=demand,
        demand_cov=scenario.cov,
        supply_mean=supply_mean,
        supply_cov=scenario.cov,
        district_names=tuple(district_names) if district_names else (),
    )


def _builtin_entries():
    entries = {}
    for n, rows in _THEORY_DISTRICTS.items():
        entries[f"districts-{n}"] = (rows, ScenarioConfig(), None, None)
    rows3 = _THEORY_DISTRICTS[3]
    entries["districts-3-trucks-only"] = (
        rows3, ScenarioConfig(modes_enabled=(TRUCK,)), None, None)
    entries["districts-3-low-cov"] = (rows3, ScenarioConfig(cov=0.1), None, None)
    entries["districts-3-high-cov"] = (rows3, ScenarioConfig(cov=0.3), None, None)
    entries["districts-3-demand-decreasing"] = (
        rows3, ScenarioConfig(pattern=LOGISTIC_DECREASING), SCURVE_DECREASING, None)
    entries["districts-3-demand-increasing"] = (
        rows3, ScenarioConfig(pattern=LOGISTIC_INCREASING), SCURVE_DECREASING[::-1], None)
    entries["nepal"] = (
        [(d, u, t) for _, d, u, t in _NEPAL_DISTRICTS], ScenarioConfig(), None,
        [name for name, *_ in _NEPAL_DISTRICTS])
    return entries


_BUILTINS = _builtin_entries()


def list_builtins() -> list[str]:
    return sorted(_BUILTINS)


def builtin_instance(name: str) -> InstanceSpec:
    """Return the tabulated built-in instance with the given name."""
    try:
        rows, scenario, table, names = _BUILTINS[name]
    except KeyError:
        raise UnknownInstanceError(
            f"unknown instance {name!r}; available: {', '.join(list_builtins())}") from None
    return _make_instance(name, rows, scenario, demand_table=table, district_names=names)


def builtin_scenario(name: str) -> ScenarioConfig:
    try:
        _, scenario, table, _ = _BUILTINS[name]
    except KeyError:
        raise UnknownInstanceError(f"unknown instance {name!r}") from None
    if table is not None:
        return ScenarioConfig(pattern=scenario.pattern, cov=scenario.cov,
                              modes_enabled=scenario.modes_enabled, demand_table=table)
    return scenario


_SUPPLY_STREAM = 0
_DEMAND_STREAM = 1


def derive_seed(*parts) -> int:
    """Stable substream seed from a master seed and string/int labels."""
    entropy = []
    for p in parts:
        if isinstance(p, str):
            entropy.append(int.from_bytes(hashlib.sha256(p.encode()).digest()[:4], "little"))
        else:
            entropy.append(abs(int(p)))
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0] >> 1)


def _draw(seed: int, stream: int, t: int, n: int, mean: float, cov: float) -> int:
    if mean <= 0:
        return 0
    rng = np.random.default_rng((seed, stream, t, n))
    value = rng.normal(mean, cov * mean) if cov > 0 else mean
    return max(0, int(np.rint(value)))


def generate_path(spec: InstanceSpec, scenario: ScenarioConfig | None = None,
                  seed: int | None = None) -> SamplePath:
    """Sample a full path of supply arrivals, demands, and forecasts.

    Deterministic given the seed; each (epoch, district) quantity comes from
    its own substream so the path does not depend on sampling order.
    """
    if seed is None:
        seed = scenario.seed if scenario is not None else 0
    T, N = spec.horizon, spec.num_districts
    zeros = np.zeros(N)

    def forecast_for(t):
        # expected demand for period [t, t+1), communicated at epoch t
        if t >= T:
            return zeros, zeros
        mean = spec.demand_mean[t]
        return np.rint(mean), spec.demand_cov * mean

    events = []
    f0, s0 = forecast_for(0)
    events.append(ExogenousEvent(
        supply_arrival=_draw(seed, _SUPPLY_STREAM, 0, 0, float(spec.supply_mean[0]), spec.supply_cov),
        realized_demand=np.zeros(N, dtype=np.int64),
        next_forecast=f0, next_forecast_std=s0))
    for t in range(1, T + 1):
        demand = np.array([
            _draw(seed, _DEMAND_STREAM, t, n, float(spec.demand_mean[t - 1, n]), spec.demand_cov)
            for n in range(N)], dtype=np.int64)
        ft, st = forecast_for(t)
        events.append(ExogenousEvent(
            supply_arrival=_draw(seed, _SUPPLY_STREAM, t, 0, float(spec.supply_mean[t]), spec.supply_cov),
            realized_demand=demand, next_forecast=ft, next_forecast_std=st))
    return SamplePath(events=tuple(events), seed=seed)


def _require(mapping, key, kind, where):
    if not isinstance(mapping, dict) or key not in mapping:
        raise SchemaError(f"{where}: missing required field {key!r}")
    value = mapping[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        expected = kind.__name__ if hasattr(kind, "__name__") else \
            " or ".join(k.__name__ for k in kind)
        raise SchemaError(f"{where}.{key}: expected {expected}, got {type(value).__name__}")
    return value


def save_instance(spec: InstanceSpec, scenario: ScenarioConfig, path: str):
    """Write an instance and its scenario to the documented JSON format."""
    stationary = np.all(spec.demand_mean == spec.demand_mean[0])
    districts = []
    for i in range(spec.num_districts):
        entry = {"name": spec.district_names[i]}
        if stationary:
            entry["demand_mean"] = float(spec.demand_mean[0, i])
        else:
            entry["demand_table"] = [float(v) for v in spec.demand_mean[:, i]]
        for k, mode in enumerate(spec.mode_names):
            entry[f"{mode}_cost"] = float(spec.transport_cost[i, k])
        districts.append(entry)
    balanced = np.allclose(spec.supply_mean,
                           _balanced_supply(spec.demand_mean, spec.horizon))
    doc = {
        "name": spec.name,
        "horizon": spec.horizon,
        "period_hours": spec.period_hours,
        "cov": spec.demand_cov,
        "modes": [{"name": m, "capacity": int(c)}
                  for m, c in zip(spec.mode_names, spec.capacity)],
        "districts": districts,
        "supply": "balanced" if balanced else {"mean": float(spec.supply_mean[0])},
        "scenario": {"pattern": scenario.pattern, "seed": scenario.seed},
        "deprivation_rate": spec.deprivation_rate,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def load_instance(path: str) -> tuple[InstanceSpec, ScenarioConfig]:
    """Load an instance file, validating the schema field by field."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top level: expected a JSON object")

    horizon = _require(doc, "horizon", int, "top level")
    period_hours = _require(doc, "period_hours", float, "top level")
    cov = _require(doc, "cov", float, "top level")
    if cov < 0:
        raise SchemaError("cov: must be nonnegative")
    modes_doc = _require(doc, "modes", list, "top level")
    if not 1 <= len(modes_doc) <= 2:
        raise SchemaError("modes: need one or two transport modes")
    mode_names, capacity = [], []
    for j, m in enumerate(modes_doc):
        where = f"modes[{j}]"
        name = _require(m, "name", str, where)
        cap = _require(m, "capacity", int, where)
        if cap <= 0:
            raise SchemaError(f"{where}.capacity: must be positive")
        mode_names.append(name)
        capacity.append(cap)

    districts_doc = _require(doc, "districts", list, "top level")
    if not districts_doc:
        raise SchemaError("districts: need at least one district")
    names, costs, demand_cols = [], [], []
    for i, d in enumerate(districts_doc):
        where = f"districts[{i}]"
        names.append(_require(d, "name", str, where))
        if "demand_table" in d:
            table = d["demand_table"]
            if not isinstance(table, list) or len(table) != horizon:
                raise SchemaError(f"{where}.demand_table: expected {horizon} values")
            col = np.asarray(table, dtype=np.float64)
        elif "demand_mean" in d:
            col = np.full(horizon, _require(d, "demand_mean", float, where))
        else:
            raise SchemaError(f"{where}: missing demand_mean or demand_table")
        if np.any(col < 0):
            raise SchemaError(f"{where}: demand must be nonnegative")
        demand_cols.append(col)
        row = []
        for mode in mode_names:
            cost = _require(d, f"{mode}_cost", float, where)
            if cost < 0:
                raise SchemaError(f"{where}.{mode}_cost: must be nonnegative")
            row.append(cost)
        costs.append(row)

    demand_mean = np.column_stack(demand_cols)
    supply_doc = _require(doc, "supply", (str, dict), "top level")
    if supply_doc == "balanced":
        supply_mean = _balanced_supply(demand_mean, horizon)
    elif isinstance(supply_doc, dict):
        mean = _require(supply_doc, "mean", float, "supply")
        if mean < 0:
            raise SchemaError("supply.mean: must be nonnegative")
        supply_mean = np.full(horizon + 1, mean)
    else:
        raise SchemaError('supply: expected "balanced" or {"mean": ...}')

    scenario_doc = doc.get("scenario", {})
    if not isinstance(scenario_doc, dict):
        raise SchemaError("scenario: expected an object")
    pattern = scenario_doc.get("pattern", STATIONARY)
    if pattern not in _PATTERNS:
        raise SchemaError(f"scenario.pattern: unknown pattern {pattern!r}")
    stationary = np.all(demand_mean == demand_mean[0])
    scenario = ScenarioConfig(
        pattern=pattern, cov=cov, modes_enabled=tuple(mode_names),
        seed=int(scenario_doc.get("seed", 0)),
        demand_table=None if stationary else demand_mean.copy())

    spec = InstanceSpec(
        name=doc.get("name", "unnamed"),
        mode_names=tuple(mode_names),
        capacity=np.array(capacity),
        transport_cost=np.array(costs, dtype=np.float64),
        horizon=horizon,
        period_hours=period_hours,
        demand_mean=demand_mean,
        demand_cov=cov,
        supply_mean=supply_mean,
        supply_cov=cov,
        deprivation_rate=float(doc.get("deprivation_rate", 0.065)),
        district_names=tuple(names),
    )
    return spec, scenario


def spec_equal(a: InstanceSpec, b: InstanceSpec) -> bool:
    return (a.name == b.name and a.mode_names == b.mode_names
            and np.array_equal(a.capacity, b.capacity)
            and np.array_equal(a.transport_cost, b.transport_cost)
            and a.horizon == b.horizon and a.period_hours == b.period_hours
            and np.array_equal(a.demand_mean, b.demand_mean)
            and a.demand_cov == b.demand_cov
            and np.array_equal(a.supply_mean, b.supply_mean)
            and a.supply_cov == b.supply_cov
            and a.deprivation_rate == b.deprivation_rate
            and a.district_names == b.district_names)
