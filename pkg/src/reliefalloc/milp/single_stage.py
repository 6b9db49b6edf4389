"""Single-stage decision MILPs with the value functions embedded.

Both model builders share the allocation/vehicle/expected-shortage block;
they differ in how the approximate future costs enter the objective
(linear district weights versus an encoded ReLU network). The realized
deprivation cost of the current state does not depend on the decision, so
it is reported via model metadata instead of being optimized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..domain import Decision, InstanceSpec, State, marginal_deprivation_cost
from ..learning import LinearVFA, MlpVFA
from .backend import SolutionReport
from .model import INF, LinearModel


@dataclass
class MilpEncodingConfig:
    """Big-M values for the shortage and ReLU encodings."""

    shortage_bigm: np.ndarray            # (N,)
    vehicle_count_upper: np.ndarray      # (N, K)
    relu_lower: list[np.ndarray] | None = None  # per hidden layer, pre-activation
    relu_upper: list[np.ndarray] | None = None

    def __post_init__(self):
        if self.relu_lower is not None:
            for lo, hi in zip(self.relu_lower, self.relu_upper):
                if np.any(lo > hi):
                    raise ValueError("relu_lower must not exceed relu_upper")
                if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                    raise ValueError("ReLU bounds must be finite")


def encoding_config(state: State, spec: InstanceSpec,
                    network: MlpVFA | None = None) -> MilpEncodingConfig:
    """State-local big-M values (tight and always valid for this state)."""
    margin = 2.0 * state.forecast_std
    residual_hi = state.demand_forecast + margin
    ix_hi = state.inventory + state.cw_inventory
    shortage_bigm = np.maximum(residual_hi, ix_hi - residual_hi) + 1.0
    v_upper = -(-state.cw_inventory // spec.capacity)
    vehicle_count_upper = np.tile(v_upper, (spec.num_districts, 1))
    relu_lower = relu_upper = None
    if network is not None:
        bounds = state_feature_bounds(state, spec)
        relu_lower, relu_upper = derive_relu_bounds(network, bounds)
    return MilpEncodingConfig(shortage_bigm, vehicle_count_upper, relu_lower, relu_upper)


def state_feature_bounds(state: State, spec: InstanceSpec) -> np.ndarray:
    """(input_dim, 2) box containing every feature vector reachable from state."""
    n = spec.num_districts
    g_next = marginal_deprivation_cost(state.deprivation_time + 1, spec.deprivation_rate)
    residual = state.demand_forecast + 2.0 * state.forecast_std
    bounds = np.zeros((2 + 3 * n, 2))
    bounds[0] = [state.epoch, state.epoch]
    bounds[1] = [0.0, state.cw_inventory]
    for i in range(n):
        h_hi = max(0.0, residual[i] - state.inventory[i])
        h_lo = max(0.0, residual[i] - state.inventory[i] - state.cw_inventory)
        bounds[2 + 3 * i] = [state.inventory[i], state.inventory[i] + state.cw_inventory]
        bounds[3 + 3 * i] = [state.deprivation_time[i], state.deprivation_time[i]]
        bounds[4 + 3 * i] = [g_next[i] * h_lo, g_next[i] * h_hi]
    return bounds


def instance_feature_bounds(spec: InstanceSpec, sigma_factor: float = 6.0) -> np.ndarray:
    """Instance-level feature box covering every state reachable at high probability."""
    n, T = spec.num_districts, spec.horizon
    max_supply = float(np.ceil(spec.supply_mean.sum() * (1 + sigma_factor * spec.supply_cov)))
    max_demand = float(spec.demand_mean.max() * (1 + 2 * spec.demand_cov)) if spec.demand_mean.size else 0.0
    g_max = marginal_deprivation_cost(T, spec.deprivation_rate)
    bounds = np.zeros((2 + 3 * n, 2))
    bounds[0] = [0, T]
    bounds[1] = [0, max_supply]
    for i in range(n):
        bounds[2 + 3 * i] = [0, max_supply]
        bounds[3 + 3 * i] = [0, T]
        bounds[4 + 3 * i] = [0, g_max * max_demand]
    return bounds


def derive_relu_bounds(network: MlpVFA | list, feature_bounds) -> tuple[list, list]:
    """Sound pre-activation intervals per hidden layer via interval arithmetic."""
    if isinstance(network, MlpVFA):
        layers = network.folded_layers()[:-1]
    else:
        layers = list(network)
    bounds = np.asarray(feature_bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(lo > hi) or not np.all(np.isfinite(bounds)):
        raise ValueError("feature bounds must be finite intervals")
    lowers, uppers = [], []
    for w, b in layers:
        pre_lo = b + np.minimum(w * lo, w * hi).sum(axis=1)
        pre_hi = b + np.maximum(w * lo, w * hi).sum(axis=1)
        lowers.append(pre_lo)
        uppers.append(pre_hi)
        lo = np.maximum(0.0, pre_lo)
        hi = np.maximum(0.0, pre_hi)
    return lowers, uppers


def _flow_block(model: LinearModel, state: State, spec: InstanceSpec,
                config: MilpEncodingConfig):
    """Shared allocation, vehicle, and expected-shortage constraints.

    Returns the variable index grids needed by the objective builders.
    """
    n, k = spec.num_districts, spec.num_modes
    cw = state.cw_inventory
    g_next = marginal_deprivation_cost(state.deprivation_time + 1, spec.deprivation_rate)
    residual = state.demand_forecast + 2.0 * state.forecast_std

    x = np.array([[model.add_var(f"x_{i}_{j}", 0, cw, integer=True)
                   for j in range(k)] for i in range(n)])
    v = np.array([[model.add_var(f"v_{i}_{j}", 0, float(config.vehicle_count_upper[i, j]),
                                 integer=True, obj=float(spec.transport_cost[i, j]))
                   for j in range(k)] for i in range(n)])
    icw_post = model.add_var("icw_post", 0, cw)
    ix = np.array([model.add_var(f"ix_{i}", 0, INF) for i in range(n)])
    hbar = np.array([model.add_var(f"hbar_{i}", 0, INF) for i in range(n)])
    gbar = np.array([model.add_var(f"gbar_{i}", 0, INF) for i in range(n)])
    zh = np.array([model.add_binary(f"zh_{i}") for i in range(n)])

    # post-decision warehouse and district inventories
    coeffs = {int(icw_post): 1.0}
    coeffs.update({int(idx): 1.0 for idx in x.ravel()})
    model.add_constraint(coeffs, cw, cw, "cw_balance")
    for i in range(n):
        c = {int(ix[i]): 1.0}
        c.update({int(x[i, j]): -1.0 for j in range(k)})
        model.add_constraint(c, float(state.inventory[i]), float(state.inventory[i]),
                             f"ix_def_{i}")
        for j in range(k):
            model.add_constraint({int(x[i, j]): 1.0, int(v[i, j]): -float(spec.capacity[j])},
                                 -INF, 0.0, f"load_{i}_{j}")
        # expected shortage: hbar = max(0, residual - ix), exact via binary zh
        m_big = float(config.shortage_bigm[i])
        r = float(residual[i])
        model.add_constraint({int(hbar[i]): 1.0, int(ix[i]): 1.0}, r, INF, f"short_lb_{i}")
        model.add_constraint({int(hbar[i]): 1.0, int(ix[i]): 1.0, int(zh[i]): m_big},
                             -INF, r + m_big, f"short_ub_{i}")
        model.add_constraint({int(hbar[i]): 1.0, int(zh[i]): -m_big}, -INF, 0.0,
                             f"short_onoff_{i}")
        # expected deprivation cost uses next-period marginal cost, a constant
        model.add_constraint({int(gbar[i]): 1.0, int(hbar[i]): -float(g_next[i])},
                             0.0, 0.0, f"gbar_def_{i}")

    model.meta.update({
        "x": x, "v": v, "icw_post": icw_post, "ix": ix, "hbar": hbar,
        "gbar": gbar, "zh": zh, "num_districts": n, "num_modes": k,
        "direct_deprivation": float(
            (marginal_deprivation_cost(state.deprivation_time, spec.deprivation_rate)
             * state.shortage).sum()),
    })
    return x, v, ix, gbar, icw_post


def _check_decision_epoch(state: State, spec: InstanceSpec):
    if state.epoch >= spec.horizon:
        raise ValueError("no decisions are made at the terminal epoch")


def build_single_stage_dl(state: State, vfa_weights, spec: InstanceSpec,
                          config: MilpEncodingConfig | None = None) -> LinearModel:
    """Decision MILP with per-district linear value functions in the objective.

    vfa_weights is either a LinearVFA (indexed by the state's epoch) or an
    (N, 4) array of [intercept, inventory, deprivation-time, expected-cost]
    weights for this epoch.
    """
    _check_decision_epoch(state, spec)
    if isinstance(vfa_weights, LinearVFA):
        if state.epoch >= vfa_weights.horizon or vfa_weights.num_districts != spec.num_districts:
            raise ValueError(f"no weights for epoch {state.epoch}")
        weights = vfa_weights.weights[state.epoch]
    else:
        weights = np.asarray(vfa_weights, dtype=np.float64)
    if weights.shape != (spec.num_districts, 4):
        raise ValueError(f"expected ({spec.num_districts}, 4) weights, got {weights.shape}")

    config = config or encoding_config(state, spec)
    model = LinearModel(f"single_stage_dl_t{state.epoch}")
    _, _, ix, gbar, _ = _flow_block(model, state, spec, config)
    for i in range(spec.num_districts):
        intercept, w_inv, w_delta, w_g = weights[i]
        model.add_objective(int(ix[i]), float(w_inv))
        model.add_objective(int(gbar[i]), float(w_g))
        model.objective_constant += float(intercept + w_delta * state.deprivation_time[i])
    model.meta["kind"] = "dl"
    return model


def build_single_stage_nn(state: State, network: MlpVFA, spec: InstanceSpec,
                          config: MilpEncodingConfig | None = None) -> LinearModel:
    """Decision MILP with the ReLU network encoded through big-M constraints."""
    _check_decision_epoch(state, spec)
    n = spec.num_districts
    if network.input_dim != 2 + 3 * n:
        raise ValueError(
            f"network expects {network.input_dim} features, instance has {2 + 3 * n}")
    layers = network.folded_layers()
    if len(layers) != 3:
        raise ValueError("network must have exactly two hidden layers")

    config = config or encoding_config(state, spec, network=network)
    if config.relu_lower is None:
        bounds = state_feature_bounds(state, spec)
        relu_lower, relu_upper = derive_relu_bounds(network, bounds)
    else:
        relu_lower, relu_upper = config.relu_lower, config.relu_upper

    model = LinearModel(f"single_stage_nn_t{state.epoch}")
    _, _, ix, gbar, icw_post = _flow_block(model, state, spec, config)

    # feature i -> (constant term, {var index: coefficient})
    feature_expr: list[tuple[float, dict[int, float]]] = [
        (float(state.epoch), {}),
        (0.0, {int(icw_post): 1.0}),
    ]
    for i in range(n):
        feature_expr.append((0.0, {int(ix[i]): 1.0}))
        feature_expr.append((float(state.deprivation_time[i]), {}))
        feature_expr.append((0.0, {int(gbar[i]): 1.0}))

    prev: list[tuple[float, dict[int, float]]] = feature_expr
    neuron_exprs_layers = []
    for layer_idx, (w, b) in enumerate(layers[:-1], start=1):
        lo, hi = relu_lower[layer_idx - 1], relu_upper[layer_idx - 1]
        exprs: list[tuple[float, dict[int, float]]] = []
        for j in range(w.shape[0]):
            const = float(b[j]) + sum(float(w[j, i]) * prev[i][0] for i in range(len(prev)))
            lin: dict[int, float] = {}
            for i in range(len(prev)):
                for var, coef in prev[i][1].items():
                    lin[var] = lin.get(var, 0.0) + float(w[j, i]) * coef
            if hi[j] <= 0.0:
                # provably inactive on the whole box: output is zero
                exprs.append((0.0, {}))
                continue
            if lo[j] >= 0.0:
                # provably active: output equals the affine pre-activation
                exprs.append((const, lin))
                continue
            m_j = model.add_var(f"m{layer_idx}_{j}", 0.0, max(0.0, float(hi[j])))
            z_j = model.add_binary(f"z{layer_idx}_{j}")
            # m >= pre-activation
            c1 = {m_j: 1.0}
            for var, coef in lin.items():
                c1[var] = c1.get(var, 0.0) - coef
            model.add_constraint(c1, const, INF, f"relu_lb_{layer_idx}_{j}")
            # m <= pre-activation - lo * (1 - z)
            c2 = dict(c1)
            c2[z_j] = c2.get(z_j, 0.0) - float(lo[j])
            model.add_constraint(c2, -INF, const - float(lo[j]),
                                 f"relu_ub_{layer_idx}_{j}")
            # m <= hi * z
            model.add_constraint({m_j: 1.0, z_j: -max(0.0, float(hi[j]))},
                                 -INF, 0.0, f"relu_onoff_{layer_idx}_{j}")
            exprs.append((0.0, {m_j: 1.0}))
        neuron_exprs_layers.append(exprs)
        prev = exprs

    w_out, b_out = layers[-1]
    f_var = model.add_var("future_cost", -INF, INF, obj=1.0)
    c_out = {f_var: 1.0}
    out_const = float(b_out[0])
    for j, (const, lin) in enumerate(neuron_exprs_layers[-1]):
        coef = float(w_out[0, j])
        out_const += coef * const
        for var, c in lin.items():
            c_out[var] = c_out.get(var, 0.0) - coef * c
    model.add_constraint(c_out, out_const, out_const, "network_output")

    model.meta.update({
        "kind": "nn",
        "hidden_exprs": neuron_exprs_layers,
        "future_cost_var": f_var,
        "relu_lower": relu_lower,
        "relu_upper": relu_upper,
    })
    return model


def extract_decision(model: LinearModel, report: SolutionReport,
                     spec: InstanceSpec) -> Decision:
    """Read the allocation out of a solved single-stage model."""
    x = model.meta["x"]
    alloc = np.array([[round(report.value(int(x[i, j])))
                       for j in range(spec.num_modes)]
                      for i in range(spec.num_districts)], dtype=np.int64)
    return Decision.from_alloc(alloc, spec.capacity)
