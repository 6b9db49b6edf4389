"""Multi-period MILP over the remaining horizon with exact transition logic.

Used for the perfect-information bound (realized path data) and the rolling
re-optimization policy (expected data, optional demand margin on the first
period). Because all quantities are integral, strict demand coverage can be
encoded exactly, so the model reproduces the simulator's deprivation-time
dynamics: a gap-zero solve of the full horizon equals the true optimum over
decision schedules for that path.

Deprivation is charged through cumulative streak indicators
W[t][tau] = 1 iff the district has been uncovered for at least tau
consecutive periods at epoch t. The per-person cost g(delta) telescopes as
the sum of increments g(tau) - g(tau - 1) over tau <= delta, so shortage
charged at each active streak level reproduces the exact cost. The
indicators are pinned to the coverage binaries by sandwich constraints and
stay integral without branching; only coverage, allocations, and vehicle
counts are discrete.
"""

from __future__ import annotations

import numpy as np

from ..domain import Decision, InstanceSpec, State, marginal_deprivation_cost
from ..instances import SamplePath
from .backend import SolutionReport
from .model import INF, LinearModel


def _source_arrays(source, state0: State, spec: InstanceSpec):
    """Demand (steps, N) and supply (steps,) for epochs t0+1 .. T."""
    t0 = state0.epoch
    steps = spec.horizon - t0
    if isinstance(source, SamplePath):
        if len(source) != spec.horizon + 1:
            raise ValueError("sample path length must be horizon + 1")
        demands = source.realized_demand_matrix()[t0:]
        supplies = source.supply_vector()[t0 + 1:]
    else:
        demands, supplies = source
        demands = np.rint(np.asarray(demands, dtype=np.float64)).astype(np.int64)
        supplies = np.rint(np.asarray(supplies, dtype=np.float64)).astype(np.int64)
    if demands.shape != (steps, spec.num_districts) or supplies.shape != (steps,):
        raise ValueError(
            f"need demand ({steps}, {spec.num_districts}) and supply ({steps},) "
            f"from epoch {t0 + 1} on")
    return demands, supplies


def expected_source(spec: InstanceSpec, start_epoch: int):
    """Expected demand and supply for the remaining horizon (re-optimization)."""
    demands = spec.demand_mean[start_epoch:]
    supplies = spec.supply_mean[start_epoch + 1:]
    return demands, supplies


def build_multiperiod(source, state0: State, spec: InstanceSpec,
                      margin: bool = False) -> LinearModel:
    """Model epochs t0..T with the transition function as constraints.

    source: a SamplePath (perfect-information mode) or a (demands, supplies)
    pair of expected values (re-optimization mode). With margin=True, twice
    the forecast standard deviation is added to the first-period demand.
    """
    t0 = state0.epoch
    steps = spec.horizon - t0
    if steps < 1:
        raise ValueError("nothing left to decide at the terminal epoch")
    n, k = spec.num_districts, spec.num_modes
    demands, supplies = _source_arrays(source, state0, spec)
    demands = demands.copy()
    if margin:
        demands[0] += np.rint(2.0 * state0.forecast_std).astype(np.int64)

    total_units = int(state0.cw_inventory + state0.inventory.sum() + supplies.sum())
    g_of = lambda tau: float(marginal_deprivation_cost(tau, spec.deprivation_rate))

    model = LinearModel(f"multiperiod_t{t0}")
    x = np.zeros((steps, n, k), dtype=np.int64)
    v = np.zeros((steps, n, k), dtype=np.int64)
    icw_post = np.zeros(steps, dtype=np.int64)
    ix = np.zeros((steps, n), dtype=np.int64)
    inv = np.zeros((steps, n), dtype=np.int64)
    shortage = np.zeros((steps, n), dtype=np.int64)
    cover = np.zeros((steps, n), dtype=np.int64)
    # streak[dt][i][tau] -> W variable, tau = 1..dt+1 plus "top" = never reset
    streak = [[{} for _ in range(n)] for _ in range(steps)]
    streak_short = [[{} for _ in range(n)] for _ in range(steps)]  # tau -> u var
    TOP = "top"

    avail = int(state0.cw_inventory) + np.concatenate([[0], np.cumsum(supplies[:-1])])
    for dt in range(steps):
        for i in range(n):
            for j in range(k):
                cap = int(spec.capacity[j])
                x[dt, i, j] = model.add_var(f"x_{dt}_{i}_{j}", 0, int(avail[dt]),
                                            integer=True)
                v[dt, i, j] = model.add_var(
                    f"v_{dt}_{i}_{j}", 0, int(-(-avail[dt] // cap)), integer=True,
                    obj=float(spec.transport_cost[i, j]))
        icw_post[dt] = model.add_var(f"icw_post_{dt}", 0, INF)
        for i in range(n):
            ix[dt, i] = model.add_var(f"ix_{dt}_{i}", 0, INF)
            inv[dt, i] = model.add_var(f"inv_{dt}_{i}", 0, INF)
            shortage[dt, i] = model.add_var(f"h_{dt}_{i}", 0, INF)
            cover[dt, i] = model.add_binary(f"y_{dt}_{i}")
            delta0 = int(state0.deprivation_time[i])
            # post-reset streak levels 1..dt, plus the never-reset level
            taus = list(range(1, dt + 1)) + [TOP]
            for tau in taus:
                streak[dt][i][tau] = model.add_var(f"w_{dt}_{i}_{tau}", 0.0, 1.0)
                if tau == TOP:
                    # increments for levels dt+1 .. delta0 + dt + 1 collapse
                    weight = g_of(delta0 + dt + 1) - g_of(dt)
                else:
                    weight = g_of(tau) - g_of(tau - 1)
                streak_short[dt][i][tau] = model.add_var(
                    f"u_{dt}_{i}_{tau}", 0, INF, obj=weight)

    for dt in range(steps):
        # warehouse balance: stock at decision epoch minus shipments
        coeffs = {int(icw_post[dt]): 1.0}
        coeffs.update({int(x[dt, i, j]): 1.0 for i in range(n) for j in range(k)})
        if dt == 0:
            model.add_constraint(coeffs, state0.cw_inventory, state0.cw_inventory,
                                 f"cw_{dt}")
        else:
            coeffs[int(icw_post[dt - 1])] = -1.0
            arr = float(supplies[dt - 1])
            model.add_constraint(coeffs, arr, arr, f"cw_{dt}")
        for i in range(n):
            for j in range(k):
                model.add_constraint(
                    {int(x[dt, i, j]): 1.0, int(v[dt, i, j]): -float(spec.capacity[j])},
                    -INF, 0.0, f"load_{dt}_{i}_{j}")
            # post-decision inventory
            c = {int(ix[dt, i]): 1.0}
            for j in range(k):
                c[int(x[dt, i, j])] = -1.0
            if dt == 0:
                model.add_constraint(c, float(state0.inventory[i]),
                                     float(state0.inventory[i]), f"ix_{dt}_{i}")
            else:
                c[int(inv[dt - 1, i])] = -1.0
                model.add_constraint(c, 0.0, 0.0, f"ix_{dt}_{i}")

            d = float(demands[dt, i])
            y = int(cover[dt, i])
            # strict coverage: y = 1 iff ix >= d + 1 (all quantities integral)
            model.add_constraint({int(ix[dt, i]): 1.0, y: -(d + 1.0)}, 0.0, INF,
                                 f"cover_on_{dt}_{i}")
            model.add_constraint({int(ix[dt, i]): 1.0, y: -float(total_units)}, -INF, d,
                                 f"cover_off_{dt}_{i}")
            # next inventory = max(0, ix - d)
            model.add_constraint({int(inv[dt, i]): 1.0, int(ix[dt, i]): -1.0}, -d, INF,
                                 f"inv_lb_{dt}_{i}")
            model.add_constraint({int(inv[dt, i]): 1.0, int(ix[dt, i]): -1.0, y: d},
                                 -INF, 0.0, f"inv_ub_{dt}_{i}")
            model.add_constraint({int(inv[dt, i]): 1.0, y: -float(total_units)}, -INF,
                                 0.0, f"inv_onoff_{dt}_{i}")
            # shortage = max(0, d - ix)
            model.add_constraint({int(shortage[dt, i]): 1.0, int(ix[dt, i]): 1.0}, d,
                                 INF, f"short_lb_{dt}_{i}")
            model.add_constraint({int(shortage[dt, i]): 1.0, y: d}, -INF, d,
                                 f"short_ub_{dt}_{i}")
            # streak bookkeeping: W[tau] = 1 iff uncovered for >= tau
            # consecutive periods. W follows (1 - y) times the previous
            # streak shifted by one; the sandwich pins W exactly whenever the
            # coverage binaries are integral.
            ws = streak[dt][i]
            for tau, w_var in ws.items():
                model.add_constraint({int(w_var): 1.0, y: 1.0}, -INF, 1.0,
                                     f"w_break_{dt}_{i}_{tau}")
                if tau == 1 or (tau == TOP and dt == 0):
                    # streak >= 1 now, or never covered at the first stage:
                    # both mean exactly "not covered now"
                    model.add_constraint({int(w_var): 1.0, y: 1.0}, 1.0, INF,
                                         f"w_eq_{dt}_{i}_{tau}")
                    continue
                prev = streak[dt - 1][i][TOP if tau == TOP else tau - 1]
                model.add_constraint(
                    {int(w_var): 1.0, int(prev): -1.0, y: 1.0}, 0.0, INF,
                    f"w_lb_{dt}_{i}_{tau}")
                model.add_constraint(
                    {int(w_var): 1.0, int(prev): -1.0}, -INF, 0.0,
                    f"w_ub_{dt}_{i}_{tau}")
            # monotone staircase (redundant for integral y, tightens the LP)
            level_order = sorted(t for t in ws if t != TOP) + [TOP]
            for a, b in zip(level_order, level_order[1:]):
                model.add_constraint({int(ws[b]): 1.0, int(ws[a]): -1.0}, -INF,
                                     0.0, f"w_mono_{dt}_{i}_{a}")
            # shortage charged at every active streak level: u_tau = h * W_tau
            # at integral points. Positive shortage implies the period is
            # uncovered, so the first level is bounded by h directly, and
            # deeper levels chain off the previous one; both are much tighter
            # than the plain product relaxation.
            us = streak_short[dt][i]
            for tau, u_var in us.items():
                model.add_constraint(
                    {int(u_var): 1.0, int(shortage[dt, i]): -1.0,
                     int(ws[tau]): -d}, -d, INF, f"u_lb_{dt}_{i}_{tau}")
            first = level_order[0]
            model.add_constraint(
                {int(us[first]): 1.0, int(shortage[dt, i]): -1.0}, 0.0, INF,
                f"u_first_{dt}_{i}")
            for a, b in zip(level_order, level_order[1:]):
                model.add_constraint(
                    {int(us[b]): 1.0, int(us[a]): -1.0,
                     int(ws[a]): d, int(ws[b]): -d}, 0.0, INF,
                    f"u_chain_{dt}_{i}_{a}")
            # covering a district whose starting stock cannot do it alone
            # requires at least one dispatch by then (tightens the fractional
            # vehicle relaxation substantially)
            if state0.inventory[i] <= demands[dt, i]:
                c = {y: 1.0}
                for prev_dt in range(dt + 1):
                    for j in range(k):
                        c[int(v[prev_dt, i, j])] = -1.0
                model.add_constraint(c, -INF, 0.0, f"dispatch_need_{dt}_{i}")

    # decision-independent deprivation cost of the starting state
    g0 = marginal_deprivation_cost(state0.deprivation_time, spec.deprivation_rate)
    model.objective_constant += float((g0 * state0.shortage).sum())

    model.meta.update({
        "kind": "multiperiod", "start_epoch": t0, "steps": steps,
        "x": x, "v": v, "streak": streak, "streak_short": streak_short,
        "shortage": shortage, "cover": cover,
        "initial_deprivation": float((g0 * state0.shortage).sum()),
        "demands": demands, "supplies": supplies,
        "deprivation_rate": spec.deprivation_rate,
        "delta0": state0.deprivation_time.copy(),
    })
    return model


def extract_schedule(model: LinearModel, report: SolutionReport,
                     spec: InstanceSpec) -> list[Decision]:
    """Decisions for epochs t0..T-1 out of a solved multi-period model."""
    x = model.meta["x"]
    steps = model.meta["steps"]
    out = []
    for dt in range(steps):
        alloc = np.array([[round(report.value(int(x[dt, i, j])))
                           for j in range(spec.num_modes)]
                          for i in range(spec.num_districts)], dtype=np.int64)
        out.append(Decision.from_alloc(alloc, spec.capacity))
    return out


def cost_breakdown(model: LinearModel, report: SolutionReport,
                   spec: InstanceSpec) -> dict:
    """Deprivation and per-mode transport totals of a multi-period solution."""
    v = model.meta["v"]
    steps = model.meta["steps"]
    rate = model.meta["deprivation_rate"]
    delta0 = model.meta["delta0"]
    transport = np.zeros(spec.num_modes)
    for dt in range(steps):
        for i in range(spec.num_districts):
            for j in range(spec.num_modes):
                transport[j] += spec.transport_cost[i, j] * report.value(int(v[dt, i, j]))
    g_of = lambda tau: float(marginal_deprivation_cost(tau, rate))
    deprivation = model.meta["initial_deprivation"]
    for dt in range(steps):
        for i in range(spec.num_districts):
            for tau, u_var in model.meta["streak_short"][dt][i].items():
                if tau == "top":
                    weight = g_of(int(delta0[i]) + dt + 1) - g_of(dt)
                else:
                    weight = g_of(tau) - g_of(tau - 1)
                deprivation += weight * report.value(int(u_var))
    return {
        "deprivation": float(deprivation),
        "transport_by_mode": {m: float(transport[j]) for j, m in enumerate(spec.mode_names)},
        "total": float(deprivation + transport.sum()),
    }
