"""Core MDP mathematics for dynamic relief-supply allocation.

States, decisions, deprivation/transport costs, the deterministic
post-decision transition, the stochastic advance step, and feature
extraction for value-function approximation. Everything in this module is
a pure function over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Deprivation cost growth rate per period (exponent coefficient).
DEPRIVATION_RATE = 0.065

UAV = "uav"
TRUCK = "truck"


class FeasibilityError(ValueError):
    """Raised when a decision violates the feasible-action set of a state."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InstanceSpec:
    """Static problem data: districts, transport modes, horizon, processes.

    demand_mean has one row per period (period p covers [p-1, p), p=1..T);
    supply_mean has one entry per arrival epoch 0..T, where entry 0 is the
    stock available at the first decision epoch.
    """

    name: str
    mode_names: tuple[str, ...]
    capacity: np.ndarray          # (K,) units per vehicle
    transport_cost: np.ndarray    # (N, K) cost per vehicle dispatch
    horizon: int                  # number of decision epochs T
    period_hours: float
    demand_mean: np.ndarray       # (T, N)
    demand_cov: float
    supply_mean: np.ndarray       # (T+1,)
    supply_cov: float
    deprivation_rate: float = DEPRIVATION_RATE
    district_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "capacity", _frozen_array(self.capacity, np.int64))
        object.__setattr__(self, "transport_cost", _frozen_array(self.transport_cost, np.float64))
        object.__setattr__(self, "demand_mean", _frozen_array(self.demand_mean, np.float64))
        object.__setattr__(self, "supply_mean", _frozen_array(self.supply_mean, np.float64))
        if not self.district_names:
            object.__setattr__(
                self, "district_names",
                tuple(f"district-{i + 1}" for i in range(self.num_districts)))
        self.validate()

    @property
    def num_districts(self) -> int:
        return self.transport_cost.shape[0]

    @property
    def num_modes(self) -> int:
        return len(self.mode_names)

    @property
    def uav_index(self) -> int | None:
        return self.mode_names.index(UAV) if UAV in self.mode_names else None

    @property
    def truck_index(self) -> int | None:
        return self.mode_names.index(TRUCK) if TRUCK in self.mode_names else None

    def validate(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.num_districts < 1:
            raise ValueError("need at least one district")
        if self.num_modes not in (1, 2):
            raise ValueError("num_modes must be 1 or 2")
        if self.capacity.shape != (self.num_modes,) or np.any(self.capacity <= 0):
            raise ValueError("capacity must be positive per mode")
        if self.transport_cost.shape != (self.num_districts, self.num_modes):
            raise ValueError("transport_cost must be (districts, modes)")
        if np.any(self.transport_cost < 0):
            raise ValueError("transport_cost must be nonnegative")
        if self.demand_mean.shape != (self.horizon, self.num_districts):
            raise ValueError("demand_mean must be (horizon, districts)")
        if np.any(self.demand_mean < 0):
            raise ValueError("demand_mean must be nonnegative")
        if self.supply_mean.shape != (self.horizon + 1,):
            raise ValueError("supply_mean must have horizon + 1 entries")
        if np.any(self.supply_mean < 0):
            raise ValueError("supply_mean must be nonnegative")
        if self.demand_cov < 0 or self.supply_cov < 0:
            raise ValueError("coefficients of variation must be nonnegative")


@dataclass(frozen=True)
class State:
    """Pre-decision state at a decision epoch."""

    epoch: int
    cw_inventory: int             # units at the central warehouse
    inventory: np.ndarray         # (N,) district inventory positions
    shortage: np.ndarray          # (N,) individuals with unmet period demand
    deprivation_time: np.ndarray  # (N,) consecutive periods of shortage
    demand_forecast: np.ndarray   # (N,) expected demand for the next period
    forecast_std: np.ndarray      # (N,) standard deviation of that forecast

    def __post_init__(self):
        object.__setattr__(self, "inventory", _frozen_array(self.inventory, np.int64))
        object.__setattr__(self, "shortage", _frozen_array(self.shortage, np.int64))
        object.__setattr__(self, "deprivation_time", _frozen_array(self.deprivation_time, np.int64))
        object.__setattr__(self, "demand_forecast", _frozen_array(self.demand_forecast, np.float64))
        object.__setattr__(self, "forecast_std", _frozen_array(self.forecast_std, np.float64))

    @property
    def num_districts(self) -> int:
        return self.inventory.shape[0]


@dataclass(frozen=True)
class Decision:
    """Allocation matrix (units per district per mode) and vehicle counts."""

    alloc: np.ndarray     # (N, K) nonnegative integers
    vehicles: np.ndarray  # (N, K) = ceil(alloc / capacity)

    def __post_init__(self):
        object.__setattr__(self, "alloc", _frozen_array(self.alloc, np.int64))
        object.__setattr__(self, "vehicles", _frozen_array(self.vehicles, np.int64))

    @classmethod
    def from_alloc(cls, alloc, capacity) -> "Decision":
        alloc = np.asarray(alloc, dtype=np.int64)
        return cls(alloc=alloc, vehicles=vehicle_counts(alloc, capacity))

    @classmethod
    def empty(cls, num_districts: int, num_modes: int) -> "Decision":
        zeros = np.zeros((num_districts, num_modes), dtype=np.int64)
        return cls(alloc=zeros, vehicles=zeros.copy())

    @property
    def total_allocated(self) -> int:
        return int(self.alloc.sum())

    def is_empty(self) -> bool:
        return self.total_allocated == 0


@dataclass(frozen=True)
class ExogenousEvent:
    """One realization of the exogenous information between epochs."""

    supply_arrival: int           # units arriving at the central warehouse
    realized_demand: np.ndarray   # (N,) demand realized over the last period
    next_forecast: np.ndarray     # (N,) expected demand for the next period
    next_forecast_std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "realized_demand", _frozen_array(self.realized_demand, np.int64))
        object.__setattr__(self, "next_forecast", _frozen_array(self.next_forecast, np.float64))
        object.__setattr__(self, "next_forecast_std", _frozen_array(self.next_forecast_std, np.float64))


@dataclass(frozen=True)
class PostDecisionState:
    """State immediately after a decision, before new information arrives."""

    epoch: int
    cw_inventory_post: int
    inventory_post: np.ndarray
    shortage: np.ndarray
    deprivation_time: np.ndarray
    demand_forecast: np.ndarray
    forecast_std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inventory_post", _frozen_array(self.inventory_post, np.int64))
        object.__setattr__(self, "shortage", _frozen_array(self.shortage, np.int64))
        object.__setattr__(self, "deprivation_time", _frozen_array(self.deprivation_time, np.int64))
        object.__setattr__(self, "demand_forecast", _frozen_array(self.demand_forecast, np.float64))
        object.__setattr__(self, "forecast_std", _frozen_array(self.forecast_std, np.float64))

    @property
    def num_districts(self) -> int:
        return self.inventory_post.shape[0]


@dataclass(frozen=True)
class FeatureVector:
    """Per-district linear features and the flat network feature vector.

    linear[n] = (post-decision inventory, deprivation time, expected
    deprivation cost); neural = (epoch, post-decision CW inventory) followed
    by the district triples. forecast_margin is the two-sigma demand margin
    used in the expected-shortage calculation.
    """

    linear: np.ndarray           # (N, 3)
    neural: np.ndarray           # (2 + 3N,)
    forecast_margin: np.ndarray  # (N,)

    def __post_init__(self):
        object.__setattr__(self, "linear", _frozen_array(self.linear, np.float64))
        object.__setattr__(self, "neural", _frozen_array(self.neural, np.float64))
        object.__setattr__(self, "forecast_margin", _frozen_array(self.forecast_margin, np.float64))


def deprivation_cost(delta, rate: float = DEPRIVATION_RATE):
    """Deprivation cost per individual after ``delta`` periods without supply.

    Clamped to 0 for negative arguments so the marginal cost is well defined
    at delta = 0.
    """
    delta = np.asarray(delta, dtype=np.float64)
    value = np.where(delta >= 0, np.exp(rate * delta) - 1.0, 0.0)
    return value if value.ndim else float(value)


def marginal_deprivation_cost(delta, rate: float = DEPRIVATION_RATE):
    """Increase in deprivation cost between consecutive periods."""
    delta = np.asarray(delta, dtype=np.float64)
    value = np.maximum(0.0, deprivation_cost(delta, rate) - deprivation_cost(delta - 1, rate))
    return value if value.ndim else float(value)


def vehicle_counts(alloc, capacity) -> np.ndarray:
    """Vehicles required per district and mode: ceil(alloc / capacity)."""
    alloc = np.asarray(alloc, dtype=np.int64)
    capacity = np.asarray(capacity, dtype=np.int64)
    return -(-alloc // capacity[np.newaxis, :])


def validate_decision(state: State, decision: Decision, spec: InstanceSpec | None = None):
    """Check the feasible-action set: integral, nonnegative, within CW stock."""
    alloc = decision.alloc
    if np.any(alloc < 0):
        raise FeasibilityError("allocations must be nonnegative")
    if spec is not None and alloc.shape != (spec.num_districts, spec.num_modes):
        raise FeasibilityError(
            f"allocation shape {alloc.shape} does not match instance "
            f"({spec.num_districts}, {spec.num_modes})")
    total = int(alloc.sum())
    if total > state.cw_inventory:
        raise FeasibilityError(
            f"allocated {total} units but only {state.cw_inventory} available at the CW")
    if spec is not None and state.epoch >= spec.horizon and total > 0:
        raise FeasibilityError("no decisions allowed at the terminal epoch")


def district_costs(state: State, decision: Decision, spec: InstanceSpec) -> np.ndarray:
    """Per-district direct costs: deprivation plus transport at this epoch."""
    validate_decision(state, decision, spec)
    g = marginal_deprivation_cost(state.deprivation_time, spec.deprivation_rate)
    deprivation = g * state.shortage
    transport = (decision.vehicles * spec.transport_cost).sum(axis=1)
    return deprivation + transport


def direct_cost(state: State, decision: Decision, spec: InstanceSpec) -> float:
    """Total direct costs at a decision epoch (deprivation + transport)."""
    return float(district_costs(state, decision, spec).sum())


def terminal_cost(state: State, spec: InstanceSpec) -> float:
    """Deprivation cost charged in the final state (no decision allowed)."""
    g = marginal_deprivation_cost(state.deprivation_time, spec.deprivation_rate)
    return float((g * state.shortage).sum())


def apply_decision(state: State, decision: Decision) -> PostDecisionState:
    """Deterministic transition to the post-decision state."""
    validate_decision(state, decision)
    shipped = decision.alloc.sum(axis=1)
    return PostDecisionState(
        epoch=state.epoch,
        cw_inventory_post=state.cw_inventory - int(shipped.sum()),
        inventory_post=state.inventory + shipped,
        shortage=state.shortage,
        deprivation_time=state.deprivation_time,
        demand_forecast=state.demand_forecast,
        forecast_std=state.forecast_std,
    )


def advance(post: PostDecisionState, event: ExogenousEvent) -> State:
    """Stochastic transition: consume demand, receive supply, update forecasts.

    Deprivation time increments when post-decision inventory does not
    strictly exceed the realized demand (exact coverage still increments),
    and resets to zero otherwise.
    """
    inv = post.inventory_post
    demand = event.realized_demand
    covered = inv > demand
    return State(
        epoch=post.epoch + 1,
        cw_inventory=post.cw_inventory_post + int(event.supply_arrival),
        inventory=np.maximum(0, inv - demand),
        shortage=np.maximum(0, demand - inv),
        deprivation_time=np.where(covered, 0, post.deprivation_time + 1),
        demand_forecast=event.next_forecast,
        forecast_std=event.next_forecast_std,
    )


def initial_state(spec: InstanceSpec, event0: ExogenousEvent) -> State:
    """Initial state: empty districts, CW stocked by the first supply event."""
    n = spec.num_districts
    zeros = np.zeros(n, dtype=np.int64)
    return State(
        epoch=0,
        cw_inventory=int(event0.supply_arrival),
        inventory=zeros,
        shortage=zeros.copy(),
        deprivation_time=zeros.copy(),
        demand_forecast=event0.next_forecast,
        forecast_std=event0.next_forecast_std,
    )


def expected_shortage(post: PostDecisionState, district: int) -> float:
    """Cautious expected shortage: demand plus two sigma minus inventory."""
    return float(expected_shortage_all(post)[district])


def expected_shortage_all(post: PostDecisionState) -> np.ndarray:
    margin = 2.0 * post.forecast_std
    return np.maximum(0.0, post.demand_forecast + margin - post.inventory_post)


def extract_features(post: PostDecisionState, rate: float = DEPRIVATION_RATE) -> FeatureVector:
    """Features of a post-decision state for the value-function approximations."""
    h_bar = expected_shortage_all(post)
    g_next = marginal_deprivation_cost(post.deprivation_time + 1, rate)
    expected_depr = g_next * h_bar
    linear = np.column_stack([
        post.inventory_post.astype(np.float64),
        post.deprivation_time.astype(np.float64),
        expected_depr,
    ])
    neural = np.concatenate(([float(post.epoch), float(post.cw_inventory_post)], linear.ravel()))
    return FeatureVector(
        linear=linear,
        neural=neural,
        forecast_margin=2.0 * post.forecast_std,
    )
