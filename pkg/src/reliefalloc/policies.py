"""Decision policies: heuristics, trained value-function policies, rolling
re-optimization, and the perfect-information bound.

Every policy implements decide(state, rng) -> Decision and returns only
feasible allocations. MILP-backed policies expose the gap of their latest
solve through the last_gap attribute so the harness can report it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    Decision,
    InstanceSpec,
    State,
    advance,
    apply_decision,
    direct_cost,
    district_costs,
    extract_features,
    initial_state,
    marginal_deprivation_cost,
)
from .harness import run_episode
from .instances import ScenarioConfig, derive_seed, generate_path
from .learning import (
    Episode,
    ExperienceBuffer,
    LinearVFA,
    MlpTrainer,
    MlpVFA,
    TrainingConfig,
    filter_outliers,
    fit_linear,
    smooth_weights,
    value_targets,
)
from .milp import (
    SolverBackend,
    build_multiperiod,
    build_single_stage_dl,
    build_single_stage_nn,
    cost_breakdown,
    default_backend,
    expected_source,
    extract_decision,
    extract_schedule,
    solve,
)


def warmup_decide(state: State, spec: InstanceSpec, rng: np.random.Generator) -> Decision:
    """Randomized warm-up allocation rule.

    Districts deprived for at least a random threshold receive one to three
    full UAV loads when warehouse stock allows; afterwards one random
    district, if deprived long enough, gets a single truck instead, loaded
    with its provisional UAV units plus whatever else fits.
    """
    n = spec.num_districts
    alloc = np.zeros((n, spec.num_modes), dtype=np.int64)
    remaining = int(state.cw_inventory)
    uav, truck = spec.uav_index, spec.truck_index
    if uav is not None:
        q_uav = int(spec.capacity[uav])
        for i in range(n):
            if state.deprivation_time[i] >= rng.integers(1, 4):
                amount = q_uav * int(rng.integers(1, 4))
                if amount <= remaining:
                    alloc[i, uav] = amount
                    remaining -= amount
    if truck is not None:
        target = int(rng.integers(0, n))
        prior = int(alloc[target, uav]) if uav is not None else 0
        amount = min(int(spec.capacity[truck]), remaining + prior)
        if state.deprivation_time[target] >= rng.integers(1, 4):
            if uav is not None:
                alloc[target, uav] = 0
            alloc[target, truck] = amount
    return Decision.from_alloc(alloc, spec.capacity)


def rule_based_decide(state: State, spec: InstanceSpec) -> Decision:
    """Deterministic dispatch rule used as a practice-style benchmark.

    UAV loads cover the forecast demand of districts deprived for two or
    more periods; then the district currently hurting the most gets its UAV
    allocation converted to trucks along with all remaining stock.
    """
    n = spec.num_districts
    alloc = np.zeros((n, spec.num_modes), dtype=np.int64)
    remaining = int(state.cw_inventory)
    uav, truck = spec.uav_index, spec.truck_index
    if uav is not None:
        q_uav = int(spec.capacity[uav])
        for i in range(n):
            if state.deprivation_time[i] >= 2:
                loads = int(-(-state.demand_forecast[i] // q_uav))
                amount = min(loads * q_uav, remaining)
                alloc[i, uav] = amount
                remaining -= amount
    if truck is not None:
        g = marginal_deprivation_cost(state.deprivation_time, spec.deprivation_rate)
        target = int(np.argmax(g * state.shortage))
        if uav is not None:
            remaining += int(alloc[target, uav])
            alloc[target, uav] = 0
        alloc[target, truck] = remaining
    return Decision.from_alloc(alloc, spec.capacity)


class WarmupPolicy:
    def __init__(self, spec: InstanceSpec, name: str = "warm-up"):
        self.spec = spec
        self.name = name

    def decide(self, state: State, rng: np.random.Generator) -> Decision:
        return warmup_decide(state, self.spec, rng)


class RuleBasedPolicy:
    def __init__(self, spec: InstanceSpec, name: str = "rule-based"):
        self.spec = spec
        self.name = name

    def decide(self, state: State, rng=None) -> Decision:
        return rule_based_decide(state, self.spec)


class DlVfaPolicy:
    """Greedy policy over per-district linear value functions via the MILP."""

    def __init__(self, vfa: LinearVFA, spec: InstanceSpec,
                 backend: SolverBackend | None = None, gap_tol: float = 1e-6,
                 time_limit: float | None = None, name: str = "dl-vfa"):
        self.vfa = vfa
        self.spec = spec
        self.backend = backend or default_backend()
        self.gap_tol = gap_tol
        self.time_limit = time_limit
        self.name = name
        self.last_gap = None

    def decide(self, state: State, rng=None) -> Decision:
        model = build_single_stage_dl(state, self.vfa, self.spec)
        report = solve(model, self.backend, time_limit=self.time_limit,
                       gap_tol=self.gap_tol)
        self.last_gap = report.gap
        return extract_decision(model, report, self.spec)


class NnVfaPolicy:
    """Greedy policy over the network value function via the MILP encoding."""

    def __init__(self, network: MlpVFA, spec: InstanceSpec,
                 backend: SolverBackend | None = None, gap_tol: float = 1e-6,
                 time_limit: float | None = None, name: str = "nn-vfa"):
        self.vfa = network
        self.spec = spec
        self.backend = backend or default_backend()
        self.gap_tol = gap_tol
        self.time_limit = time_limit
        self.name = name
        self.last_gap = None

    def decide(self, state: State, rng=None) -> Decision:
        model = build_single_stage_nn(state, self.vfa, self.spec)
        report = solve(model, self.backend, time_limit=self.time_limit,
                       gap_tol=self.gap_tol)
        self.last_gap = report.gap
        return extract_decision(model, report, self.spec)


class ScriptedPolicy:
    """Replays a fixed decision schedule (one decision per epoch)."""

    def __init__(self, schedule: list[Decision], name: str = "scripted"):
        self.schedule = list(schedule)
        self.name = name

    def decide(self, state: State, rng=None) -> Decision:
        return self.schedule[state.epoch]


def _deterministic_rollout_cost(schedule, state: State, spec: InstanceSpec,
                                demands: np.ndarray, supplies: np.ndarray) -> float:
    """Cost of a (possibly infeasible) schedule on deterministic data.

    Allocations are clipped to the available warehouse stock, so the result
    is always the cost of some feasible schedule and therefore a valid upper
    bound on the model optimum.
    """
    from .domain import ExogenousEvent
    total = 0.0
    zeros = np.zeros(spec.num_districts)
    for e in range(len(supplies)):
        alloc = schedule[e].alloc.copy() if e < len(schedule) \
            else np.zeros((spec.num_districts, spec.num_modes), dtype=np.int64)
        overshoot = int(alloc.sum()) - state.cw_inventory
        if overshoot > 0:
            flat = alloc.ravel()
            for idx in np.argsort(-flat):
                cut = min(int(flat[idx]), overshoot)
                flat[idx] -= cut
                overshoot -= cut
                if overshoot == 0:
                    break
            alloc = flat.reshape(alloc.shape)
        decision = Decision.from_alloc(alloc, spec.capacity)
        total += direct_cost(state, decision, spec)
        event = ExogenousEvent(supply_arrival=int(supplies[e]),
                               realized_demand=demands[e],
                               next_forecast=zeros, next_forecast_std=zeros)
        state = advance(apply_decision(state, decision), event)
    g = marginal_deprivation_cost(state.deprivation_time, spec.deprivation_rate)
    return total + float((g * state.shortage).sum())


def _cover_ahead_schedule(state: State, spec: InstanceSpec, demands: np.ndarray,
                          supplies: np.ndarray, modes=None) -> list[Decision]:
    """Feasible heuristic plan on deterministic data: when a district is
    about to run dry, ship enough to cover as many future periods as the
    warehouse allows, choosing the cheaper allowed mode for the amount."""
    steps = len(supplies)
    n, k = spec.num_districts, spec.num_modes
    modes = list(range(k)) if modes is None else list(modes)
    inv = state.inventory.astype(np.int64).copy()
    cw = int(state.cw_inventory)
    schedule = []
    for e in range(steps):
        alloc = np.zeros((n, k), dtype=np.int64)
        for i in np.argsort(-demands[e]):
            if inv[i] > demands[e, i] or cw == 0:
                continue
            horizon_need = int(demands[e:, i].sum()) + 1 - int(inv[i])
            amount = min(cw, max(0, horizon_need))
            if amount <= 0:
                continue
            costs = [(-(-amount // int(spec.capacity[j])) * spec.transport_cost[i, j], j)
                     for j in modes]
            mode = min(costs)[1]
            alloc[i, mode] = amount
            cw -= amount
        decision = Decision.from_alloc(alloc, spec.capacity)
        schedule.append(decision)
        inv = np.maximum(0, inv + alloc.sum(axis=1) - demands[e])
        cw += int(supplies[e])
    return schedule


class ReoptimizationPolicy:
    """Rolling-horizon deterministic MIP over expected demand and supply.

    Solves the remaining horizon each epoch with a two-sigma margin on the
    immediate next period, takes the first-epoch decision, and falls back to
    the dispatch rule if the solver produces no incumbent in time.

    Each solve carries an objective cutoff from cheap feasible plans (the
    previous epoch's shifted schedule and a cover-ahead heuristic); the
    cutoff is an upper bound on the optimum, so it never changes the solved
    problem but stops the solver from reporting poor incumbents under tight
    time limits.
    """

    def __init__(self, spec: InstanceSpec, backend: SolverBackend | None = None,
                 epoch_time_limit: float = 900.0, gap_tol: float = 1e-4,
                 margin: bool = True, use_cutoff: bool = True,
                 name: str = "re-optimization"):
        self.spec = spec
        self.backend = backend or default_backend()
        self.epoch_time_limit = epoch_time_limit
        self.gap_tol = gap_tol
        self.margin = margin
        self.use_cutoff = use_cutoff
        self.name = name
        self.last_gap = None
        self.fallback_epochs: list[int] = []
        self._last_schedule: list[Decision] | None = None
        self._last_epoch: int | None = None

    def _cutoff_bound(self, state: State, demands, supplies) -> float:
        candidates = [_cover_ahead_schedule(state, self.spec, demands, supplies)]
        if self.spec.truck_index is not None and self.spec.num_modes > 1:
            # bulk-only plan: amortized transport, often the tighter bound
            candidates.append(_cover_ahead_schedule(
                state, self.spec, demands, supplies, modes=[self.spec.truck_index]))
        if self._last_schedule is not None and self._last_epoch == state.epoch - 1:
            candidates.append(self._last_schedule[1:])
        return min(_deterministic_rollout_cost(s, state, self.spec, demands, supplies)
                   for s in candidates)

    def decide(self, state: State, rng=None) -> Decision:
        source = expected_source(self.spec, state.epoch)
        model = build_multiperiod(source, state, self.spec, margin=self.margin)
        if self.use_cutoff:
            bound = self._cutoff_bound(state, model.meta["demands"],
                                       model.meta["supplies"])
            cut = dict(model.objective)
            model.add_constraint(cut, -np.inf,
                                 bound - model.objective_constant + 1e-6, "cutoff")
        report = solve(model, self.backend, time_limit=self.epoch_time_limit,
                       gap_tol=self.gap_tol)
        if not report.has_solution:
            self.fallback_epochs.append(state.epoch)
            self.last_gap = None
            self._last_schedule = None
            return rule_based_decide(state, self.spec)
        self.last_gap = report.gap
        schedule = extract_schedule(model, report, self.spec)
        self._last_schedule = schedule
        self._last_epoch = state.epoch
        return schedule[0]


@dataclass
class PiResult:
    objective: float
    bound: float | None
    gap: float | None
    schedule: list[Decision]
    deprivation_cost: float
    uav_cost: float
    truck_cost: float
    status: str


def perfect_information_cost(path, spec: InstanceSpec,
                             backend: SolverBackend | None = None,
                             time_limit: float | None = None,
                             gap_tol: float = 0.0) -> PiResult:
    """Optimal cost when the whole sample path is known in advance."""
    state0 = initial_state(spec, path.events[0])
    model = build_multiperiod(path, state0, spec, margin=False)
    report = solve(model, backend or default_backend(), time_limit=time_limit,
                   gap_tol=gap_tol)
    if not report.has_solution:
        raise RuntimeError(f"perfect-information solve failed: {report.message}")
    parts = cost_breakdown(model, report, spec)
    by_mode = parts["transport_by_mode"]
    return PiResult(
        objective=float(report.objective),
        bound=report.bound,
        gap=report.gap,
        schedule=extract_schedule(model, report, spec),
        deprivation_cost=parts["deprivation"],
        uav_cost=float(by_mode.get("uav", 0.0)),
        truck_cost=float(by_mode.get("truck", 0.0)),
        status=report.status.value,
    )


@dataclass
class TrainResult:
    policy: object
    vfa: LinearVFA | MlpVFA
    learning_curve: list[dict]
    episodes_run: int
    wall_seconds: float
    truncated: bool
    config: TrainingConfig = field(repr=False, default=None)


def _terminal_district_costs(state: State, spec: InstanceSpec) -> np.ndarray:
    g = marginal_deprivation_cost(state.deprivation_time, spec.deprivation_rate)
    return g * state.shortage


def _simulate_episode(spec: InstanceSpec, path, decide_fn, episode_id: int) -> Episode:
    """Run one horizon with an arbitrary decision function, recording
    post-decision features and per-district direct costs."""
    T, n = spec.horizon, spec.num_districts
    feats_lin = np.zeros((T, n, 3))
    feats_neu = np.zeros((T, 2 + 3 * n))
    costs = np.zeros((T + 1, n))
    state = initial_state(spec, path.events[0])
    for t in range(T):
        decision = decide_fn(state)
        costs[t] = district_costs(state, decision, spec)
        post = apply_decision(state, decision)
        fv = extract_features(post, spec.deprivation_rate)
        feats_lin[t] = fv.linear
        feats_neu[t] = fv.neural
        state = advance(post, path.events[t + 1])
    costs[T] = _terminal_district_costs(state, spec)
    return Episode(episode_id=episode_id, features_linear=feats_lin,
                   features_neural=feats_neu, district_costs=costs)


def warm_start_buffer(spec: InstanceSpec, config: TrainingConfig, seed: int,
                      scenario: ScenarioConfig | None = None) -> ExperienceBuffer:
    """Fill a fresh buffer with warm-up-heuristic episodes."""
    buffer = ExperienceBuffer(config.buffer_size)
    for b in range(config.buffer_size):
        path = generate_path(spec, scenario, seed=derive_seed(seed, "warmup-path", b))
        rng = np.random.default_rng(derive_seed(seed, "warmup-decide", b))
        buffer.append(_simulate_episode(
            spec, path, lambda s: warmup_decide(s, spec, rng), episode_id=b))
    return buffer


def _fit_all_linear(buffer, spec: InstanceSpec, config: TrainingConfig) -> np.ndarray:
    """Per-(epoch, district) regression over the filtered buffer."""
    episodes = filter_outliers(buffer)
    T, n = spec.horizon, spec.num_districts
    weights = np.zeros((T, n, 4))
    feats = np.stack([ep.features_linear for ep in episodes])   # (B, T, N, 3)
    targets = np.stack([value_targets(ep, config.discount) for ep in episodes])
    for t in range(T):
        for i in range(n):
            weights[t, i] = fit_linear(feats[:, t, i, :], targets[:, t, i],
                                       ridge=config.ridge)
    return weights


def _evaluate_mean_cost(policy, spec, scenario, seed: int, event: int, paths: int):
    """Held-out evaluation for learning-curve points."""
    totals = []
    for j in range(paths):
        path = generate_path(spec, scenario, seed=derive_seed(seed, "curve-eval", event, j))
        rng = np.random.default_rng(derive_seed(seed, "curve-decide", event, j))
        totals.append(run_episode(policy, spec, path, rng=rng).total_cost)
    totals = np.array(totals)
    half = 1.96 * totals.std(ddof=0) / np.sqrt(len(totals)) if len(totals) > 1 else 0.0
    return float(totals.mean()), float(totals.mean() - half), float(totals.mean() + half)


def train_dl_vfa(spec: InstanceSpec, config: TrainingConfig | None = None,
                 backend: SolverBackend | None = None, seed: int = 0,
                 scenario: ScenarioConfig | None = None,
                 progress=None) -> TrainResult:
    """Train per-district linear value functions by simulation and regression.

    Warm-start episodes seed the buffer and the initial regression; then
    epsilon-greedy episodes refresh the buffer, and every few episodes the
    weights are re-fit on the filtered buffer and blended into the running
    estimate while epsilon and the blend factor decay.
    """
    config = config or TrainingConfig()
    backend = backend or default_backend()
    start = time.perf_counter()

    buffer = warm_start_buffer(spec, config, seed, scenario)
    weights = _fit_all_linear(buffer, spec, config)
    vfa = LinearVFA(weights)
    policy = DlVfaPolicy(vfa, spec, backend)

    epsilon, alpha = config.epsilon0, config.alpha0
    curve: list[dict] = []
    truncated = False
    episodes_run = 0
    best = (np.inf, weights.copy())

    for r in range(1, config.episodes + 1):
        if time.perf_counter() - start > config.time_cap_s:
            truncated = True
            break
        path = generate_path(spec, scenario, seed=derive_seed(seed, "train-path", r))
        explore_rng = np.random.default_rng(derive_seed(seed, "explore", r))

        def decide(state):
            if explore_rng.uniform() < epsilon:
                return warmup_decide(state, spec, explore_rng)
            model = build_single_stage_dl(state, vfa.weights[state.epoch], spec)
            report = solve(model, backend, gap_tol=1e-6)
            return extract_decision(model, report, spec)

        buffer.append(_simulate_episode(spec, path, decide,
                                        episode_id=config.buffer_size + r))
        episodes_run = r

        if r % config.update_every == 0:
            new_weights = _fit_all_linear(buffer, spec, config)
            vfa.weights = smooth_weights(vfa.weights, new_weights, alpha)
            epsilon *= config.epsilon_decay
            alpha *= config.alpha_decay
            if config.eval_paths > 0:
                mean, lo, hi = _evaluate_mean_cost(
                    DlVfaPolicy(LinearVFA(vfa.weights.copy()), spec, backend),
                    spec, scenario, seed, r, config.eval_paths)
                curve.append({"episode": r, "mean_cost": mean,
                              "ci95_low": lo, "ci95_high": hi})
                if mean < best[0]:
                    best = (mean, vfa.weights.copy())
            if progress is not None:
                progress(r, curve[-1] if curve else None)

    if truncated and np.isfinite(best[0]):
        vfa.weights = best[1]
    return TrainResult(policy=policy, vfa=vfa, learning_curve=curve,
                       episodes_run=episodes_run,
                       wall_seconds=time.perf_counter() - start,
                       truncated=truncated, config=config)


def _buffer_neural_records(episodes, discount):
    """All (neural features, summed value target) records in a buffer view."""
    feats, targets = [], []
    for ep in episodes:
        v = value_targets(ep, discount).sum(axis=1)
        feats.append(ep.features_neural)
        targets.append(v)
    return np.concatenate(feats), np.concatenate(targets)


def _train_network_pass(trainer: MlpTrainer, feats, targets, batch_size, rng):
    order = rng.permutation(len(feats))
    losses = []
    for s in range(0, len(order), batch_size):
        idx = order[s:s + batch_size]
        losses.append(trainer.train_step(feats[idx], targets[idx]))
    return float(np.mean(losses)) if losses else 0.0


def train_nn_vfa(spec: InstanceSpec, config: TrainingConfig | None = None,
                 backend: SolverBackend | None = None, seed: int = 0,
                 scenario: ScenarioConfig | None = None,
                 progress=None) -> TrainResult:
    """Train the network value function: same loop as the linear variant,
    with the regression step replaced by passes of mini-batch gradient
    descent over the filtered buffer.

    Feature and target standardization is frozen on the warm-start buffer so
    the function being learned stays consistent across updates.
    """
    config = config or TrainingConfig()
    backend = backend or default_backend()
    start = time.perf_counter()
    rng = np.random.default_rng(derive_seed(seed, "nn-train"))

    buffer = warm_start_buffer(spec, config, seed, scenario)
    feats, targets = _buffer_neural_records(filter_outliers(buffer), config.discount)
    network = MlpVFA.initialize(2 + 3 * spec.num_districts, config.hidden, rng)
    network.set_standardization(
        feats.mean(axis=0), np.maximum(feats.std(axis=0), 1e-8),
        targets.mean(), max(float(targets.std()), 1e-8))
    trainer = MlpTrainer(network, learning_rate=config.learning_rate)
    for _ in range(config.pretrain_passes):
        _train_network_pass(trainer, feats, targets, config.batch_size, rng)

    policy = NnVfaPolicy(network, spec, backend)
    epsilon = config.epsilon0
    curve: list[dict] = []
    truncated = False
    episodes_run = 0
    best = (np.inf, [p.copy() for p in network.params()])

    for r in range(1, config.episodes + 1):
        if time.perf_counter() - start > config.time_cap_s:
            truncated = True
            break
        path = generate_path(spec, scenario, seed=derive_seed(seed, "train-path", r))
        explore_rng = np.random.default_rng(derive_seed(seed, "explore", r))

        def decide(state):
            if explore_rng.uniform() < epsilon:
                return warmup_decide(state, spec, explore_rng)
            model = build_single_stage_nn(state, network, spec)
            report = solve(model, backend, gap_tol=1e-6)
            return extract_decision(model, report, spec)

        buffer.append(_simulate_episode(spec, path, decide,
                                        episode_id=config.buffer_size + r))
        episodes_run = r

        if r % config.update_every == 0:
            feats, targets = _buffer_neural_records(filter_outliers(buffer),
                                                    config.discount)
            _train_network_pass(trainer, feats, targets, config.batch_size, rng)
            epsilon *= config.epsilon_decay
            if config.eval_paths > 0:
                mean, lo, hi = _evaluate_mean_cost(policy, spec, scenario, seed, r,
                                                   config.eval_paths)
                curve.append({"episode": r, "mean_cost": mean,
                              "ci95_low": lo, "ci95_high": hi})
                if mean < best[0]:
                    best = (mean, [p.copy() for p in network.params()])
            if progress is not None:
                progress(r, curve[-1] if curve else None)

    if truncated and np.isfinite(best[0]):
        for p, b in zip(network.params(), best[1]):
            p[...] = b
    return TrainResult(policy=policy, vfa=network, learning_curve=curve,
                       episodes_run=episodes_run,
                       wall_seconds=time.perf_counter() - start,
                       truncated=truncated, config=config)
