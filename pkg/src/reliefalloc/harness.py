"""Episode simulation, metrics, and multi-policy benchmarking.

All policies in a benchmark are evaluated on the identical sample paths
(common random numbers); episodes are independent jobs, so evaluation can
fan out over a process pool with one solver backend per worker.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    InstanceSpec,
    advance,
    apply_decision,
    district_costs,
    extract_features,
    initial_state,
    marginal_deprivation_cost,
)
from .instances import SamplePath, derive_seed, generate_path
from .learning import Episode


@dataclass
class EpisodeResult:
    """Costs, service metrics, and the full per-epoch trace of one episode."""

    total_cost: float
    deprivation_cost: float
    uav_cost: float
    truck_cost: float
    max_deprivation_hours: float
    coverage: float
    trace_alloc: np.ndarray        # (T, N, K) allocated units
    trace_inventory: np.ndarray    # (T+1, N) pre-decision inventory
    trace_deprivation_time: np.ndarray  # (T+1, N)
    trace_deprivation_cost: np.ndarray  # (T+1, N) incurred deprivation cost
    solver_gaps: list = field(default_factory=list)
    experience: Episode | None = None


def run_episode(policy, spec: InstanceSpec, path: SamplePath,
                rng: np.random.Generator | None = None,
                collect_experience: bool = False, episode_id: int = 0) -> EpisodeResult:
    """Simulate one full horizon under a policy on a fixed sample path."""
    if len(path) != spec.horizon + 1:
        raise ValueError("path length must be horizon + 1")
    rng = rng or np.random.default_rng(derive_seed(path.seed, "decide"))
    T, n, k = spec.horizon, spec.num_districts, spec.num_modes

    state = initial_state(spec, path.events[0])
    trace_alloc = np.zeros((T, n, k))
    trace_inventory = np.zeros((T + 1, n))
    trace_delta = np.zeros((T + 1, n))
    trace_depr_cost = np.zeros((T + 1, n))
    feats_lin = np.zeros((T, n, 3))
    feats_neu = np.zeros((T, 2 + 3 * n))
    costs = np.zeros((T + 1, n))
    uav_cost = truck_cost = 0.0
    satisfied = realized = 0.0
    gaps = []

    for t in range(T):
        trace_inventory[t] = state.inventory
        trace_delta[t] = state.deprivation_time
        g = marginal_deprivation_cost(state.deprivation_time, spec.deprivation_rate)
        trace_depr_cost[t] = g * state.shortage

        decision = policy.decide(state, rng)
        gap = getattr(policy, "last_gap", None)
        if gap is not None:
            gaps.append(float(gap))
        costs[t] = district_costs(state, decision, spec)
        transport = decision.vehicles * spec.transport_cost
        if spec.uav_index is not None:
            uav_cost += float(transport[:, spec.uav_index].sum())
        if spec.truck_index is not None:
            truck_cost += float(transport[:, spec.truck_index].sum())
        trace_alloc[t] = decision.alloc

        post = apply_decision(state, decision)
        if collect_experience:
            fv = extract_features(post, spec.deprivation_rate)
            feats_lin[t] = fv.linear
            feats_neu[t] = fv.neural
        event = path.events[t + 1]
        satisfied += float(np.minimum(event.realized_demand, post.inventory_post).sum())
        realized += float(event.realized_demand.sum())
        state = advance(post, event)

    trace_inventory[T] = state.inventory
    trace_delta[T] = state.deprivation_time
    g = marginal_deprivation_cost(state.deprivation_time, spec.deprivation_rate)
    costs[T] = g * state.shortage
    trace_depr_cost[T] = costs[T]

    deprivation = float(trace_depr_cost.sum())
    experience = None
    if collect_experience:
        experience = Episode(episode_id=episode_id, features_linear=feats_lin,
                             features_neural=feats_neu, district_costs=costs)
    return EpisodeResult(
        total_cost=deprivation + uav_cost + truck_cost,
        deprivation_cost=deprivation,
        uav_cost=uav_cost,
        truck_cost=truck_cost,
        max_deprivation_hours=float(trace_delta.max() * spec.period_hours),
        coverage=1.0 if realized == 0 else satisfied / realized,
        trace_alloc=trace_alloc,
        trace_inventory=trace_inventory,
        trace_deprivation_time=trace_delta,
        trace_deprivation_cost=trace_depr_cost,
        solver_gaps=gaps,
        experience=experience,
    )


@dataclass
class PolicyStats:
    name: str
    mean_total: float
    std_total: float
    ci95_low: float
    ci95_high: float
    mean_deprivation: float
    mean_uav: float
    mean_truck: float
    mean_max_deprivation_hours: float
    mean_coverage: float
    runtime_seconds: float
    mean_gap: float | None
    totals: np.ndarray  # per-path realized totals, in path order


@dataclass
class BenchmarkReport:
    instance: str
    num_paths: int
    seed: int
    path_digests: list[str]
    policies: list[PolicyStats]

    def by_name(self, name: str) -> PolicyStats:
        for p in self.policies:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_csv(self, path: str):
        cols = ["policy", "mean_total", "std_total", "deprivation", "uav", "truck",
                "max_depr_hours", "coverage", "runtime_s", "mean_gap"]
        lines = [",".join(cols)]
        for p in self.policies:
            gap = "" if p.mean_gap is None else _fmt(p.mean_gap)
            lines.append(",".join([
                p.name, _fmt(p.mean_total), _fmt(p.std_total), _fmt(p.mean_deprivation),
                _fmt(p.mean_uav), _fmt(p.mean_truck), _fmt(p.mean_max_deprivation_hours),
                _fmt(p.mean_coverage), _fmt(p.runtime_seconds), gap]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def benchmark_paths(spec: InstanceSpec, num_paths: int, seed: int) -> list[SamplePath]:
    """Common-random-number evaluation paths derived from a master seed."""
    return [generate_path(spec, seed=derive_seed(seed, "eval-path", i))
            for i in range(num_paths)]


def _episode_job(args):
    policy, spec, path, decide_seed = args
    rng = np.random.default_rng(decide_seed)
    result = run_episode(policy, spec, path, rng=rng)
    return (result.total_cost, result.deprivation_cost, result.uav_cost,
            result.truck_cost, result.max_deprivation_hours, result.coverage,
            result.solver_gaps)


def benchmark(policies, spec: InstanceSpec, num_paths: int = 100, seed: int = 0,
              paths: list[SamplePath] | None = None, workers: int = 1) -> BenchmarkReport:
    """Evaluate policies on identical sample paths and aggregate the metrics.

    policies: mapping name -> policy, or a list of named policies.
    """
    if num_paths < 2 and paths is None:
        raise ValueError("need at least two paths for standard deviations")
    if paths is None:
        paths = benchmark_paths(spec, num_paths, seed)
    if isinstance(policies, dict):
        named = list(policies.items())
    else:
        named = [(p.name, p) for p in policies]

    stats = []
    for name, policy in named:
        start = time.perf_counter()
        jobs = [(policy, spec, path, derive_seed(seed, "decide", name, i))
                for i, path in enumerate(paths)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_episode_job, jobs, chunksize=1))
        else:
            rows = [_episode_job(job) for job in jobs]
        runtime = time.perf_counter() - start
        totals = np.array([r[0] for r in rows])
        gaps = [g for r in rows for g in r[6]]
        half = 1.96 * totals.std(ddof=0) / np.sqrt(len(totals))
        stats.append(PolicyStats(
            name=name,
            mean_total=float(totals.mean()),
            std_total=float(totals.std(ddof=0)),
            ci95_low=float(totals.mean() - half),
            ci95_high=float(totals.mean() + half),
            mean_deprivation=float(np.mean([r[1] for r in rows])),
            mean_uav=float(np.mean([r[2] for r in rows])),
            mean_truck=float(np.mean([r[3] for r in rows])),
            mean_max_deprivation_hours=float(np.mean([r[4] for r in rows])),
            mean_coverage=float(np.mean([r[5] for r in rows])),
            runtime_seconds=runtime,
            mean_gap=float(np.mean(gaps)) if gaps else None,
            totals=totals,
        ))
    return BenchmarkReport(
        instance=spec.name, num_paths=len(paths), seed=seed,
        path_digests=[p.digest() for p in paths], policies=stats)


def allocation_trace(policy, spec: InstanceSpec, num_paths: int = 100, seed: int = 0,
                     paths: list[SamplePath] | None = None) -> np.ndarray:
    """(T, K) mean allocated units per epoch per mode, averaged over episodes."""
    if paths is None:
        paths = benchmark_paths(spec, num_paths, seed)
    acc = np.zeros((spec.horizon, spec.num_modes))
    for i, path in enumerate(paths):
        rng = np.random.default_rng(derive_seed(seed, "decide", "trace", i))
        result = run_episode(policy, spec, path, rng=rng)
        acc += result.trace_alloc.sum(axis=1)
    return acc / len(paths)


def allocation_trace_csv(trace: np.ndarray, spec: InstanceSpec, path: str):
    lines = ["epoch,mode,mean_units"]
    for t in range(trace.shape[0]):
        for j, mode in enumerate(spec.mode_names):
            lines.append(f"{t},{mode},{_fmt(trace[t, j])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def deprivation_heatmap(result: EpisodeResult) -> np.ndarray:
    """(N, T+1) deprivation cost incurred per district per epoch."""
    return result.trace_deprivation_cost.T.copy()


def heatmap_csv(matrix: np.ndarray, path: str):
    lines = ["district,epoch,deprivation_cost"]
    for i in range(matrix.shape[0]):
        for t in range(matrix.shape[1]):
            lines.append(f"{i + 1},{t},{_fmt(matrix[i, t])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def vfa_surface(value_fn, spec: InstanceSpec, epochs, inventories,
                expected_deprivations, district: int = 0,
                pinned_delta: int = 0, pinned_cw: float = 0.0) -> list[dict]:
    """Predicted future costs over a grid of (epoch, inventory, expected cost).

    Works for both the per-district linear value functions and the network.
    Points outside the instance-level feature box are flagged as
    extrapolations.
    """
    from .learning import LinearVFA, MlpVFA  # local import to avoid cycles
    from .milp.single_stage import instance_feature_bounds

    bounds = instance_feature_bounds(spec)
    n = spec.num_districts
    rows = []
    for t in epochs:
        for inv in inventories:
            for g_exp in expected_deprivations:
                extrapolated = not (
                    bounds[0, 0] <= t <= bounds[0, 1]
                    and bounds[2 + 3 * district, 0] <= inv <= bounds[2 + 3 * district, 1]
                    and bounds[4 + 3 * district, 0] <= g_exp <= bounds[4 + 3 * district, 1])
                if isinstance(value_fn, LinearVFA):
                    w = value_fn.weights[min(int(t), value_fn.horizon - 1), district]
                    value = float(w[0] + w[1] * inv + w[2] * pinned_delta + w[3] * g_exp)
                elif isinstance(value_fn, MlpVFA):
                    phi = np.zeros(2 + 3 * n)
                    phi[0], phi[1] = t, pinned_cw
                    phi[2 + 3 * district] = inv
                    phi[3 + 3 * district] = pinned_delta
                    phi[4 + 3 * district] = g_exp
                    value = float(value_fn.forward(phi))
                else:
                    raise TypeError(f"unsupported value function {type(value_fn).__name__}")
                rows.append({"epoch": t, "inventory": inv,
                             "expected_deprivation": g_exp, "value": value,
                             "extrapolated": extrapolated})
    return rows


def surface_csv(rows: list[dict], path: str):
    lines = ["epoch,inventory,expected_deprivation,value,extrapolated"]
    for r in rows:
        lines.append(f"{r['epoch']},{_fmt(r['inventory'])},{_fmt(r['expected_deprivation'])},"
                     f"{_fmt(r['value'])},{int(r['extrapolated'])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def learning_curve_csv(curve: list[dict], path: str):
    lines = ["episode,mean_cost,ci95_low,ci95_high"]
    for point in curve:
        lines.append(f"{point['episode']},{_fmt(point['mean_cost'])},"
                     f"{_fmt(point['ci95_low'])},{_fmt(point['ci95_high'])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
