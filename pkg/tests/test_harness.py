import numpy as np
import pytest

from oracle_helpers import tiny_instance, tiny_path
from reliefalloc.domain import Decision, ExogenousEvent, InstanceSpec
from reliefalloc.harness import (
    allocation_trace,
    allocation_trace_csv,
    benchmark,
    benchmark_paths,
    deprivation_heatmap,
    heatmap_csv,
    learning_curve_csv,
    run_episode,
    surface_csv,
    vfa_surface,
)
from reliefalloc.instances import SamplePath, builtin_instance
from reliefalloc.learning import LinearVFA, MlpVFA
from reliefalloc.policies import RuleBasedPolicy, ScriptedPolicy, WarmupPolicy


class NullPolicy:
    name = "null"

    def decide(self, state, rng=None):
        return Decision.empty(state.num_districts, 2)


def hand_path():
    """Two-period, one-district path with round numbers for hand evaluation."""
    spec = InstanceSpec(
        name="hand", mode_names=("uav", "truck"),
        capacity=np.array([200, 5000]), transport_cost=np.array([[150.0, 900.0]]),
        horizon=2, period_hours=6.0,
        demand_mean=np.array([[200.0], [200.0]]), demand_cov=0.0,
        supply_mean=np.array([400.0, 0.0, 0.0]), supply_cov=0.0,
        deprivation_rate=0.065)
    events = (
        ExogenousEvent(400, np.zeros(1, dtype=int), np.array([200.0]), np.zeros(1)),
        ExogenousEvent(0, np.array([200]), np.array([200.0]), np.zeros(1)),
        ExogenousEvent(0, np.array([200]), np.zeros(1), np.zeros(1)),
    )
    return spec, SamplePath(events, seed=0)


class TestRunEpisode:
    def test_zero_demand_null_policy(self):
        spec = tiny_instance()
        events = tuple(
            ExogenousEvent(4 if t == 0 else 0, np.zeros(1, dtype=int),
                           np.zeros(1), np.zeros(1))
            for t in range(5))
        result = run_episode(NullPolicy(), spec, SamplePath(events, seed=0))
        assert result.total_cost == 0.0
        assert result.coverage == 1.0
        assert result.max_deprivation_hours > 0  # zero demand still "uncovered"

    def test_hand_computed_costs(self):
        spec, path = hand_path()
        # ship one UAV load at t=0 (covers 200 exactly -> delta increments,
        # no shortage); ship nothing at t=1 -> 200 short at delta=2
        schedule = [Decision.from_alloc([[200, 0]], spec.capacity),
                    Decision.empty(1, 2)]
        result = run_episode(ScriptedPolicy(schedule), spec, path)
        g2 = float(np.exp(0.13) - np.exp(0.065))
        assert result.uav_cost == 150.0
        assert result.truck_cost == 0.0
        assert result.deprivation_cost == pytest.approx(g2 * 200, abs=1e-9)
        assert result.total_cost == pytest.approx(150 + g2 * 200, abs=1e-9)
        assert result.coverage == pytest.approx(0.5)
        assert result.max_deprivation_hours == 12.0

    def test_cost_decomposition_identity(self):
        spec = builtin_instance("districts-3")
        paths = benchmark_paths(spec, 5, seed=3)
        policy = RuleBasedPolicy(spec)
        for path in paths:
            r = run_episode(policy, spec, path)
            assert r.total_cost == pytest.approx(
                r.deprivation_cost + r.uav_cost + r.truck_cost, abs=1e-9)

    def test_deterministic_policy_reproducible(self):
        spec = builtin_instance("districts-3")
        path = benchmark_paths(spec, 2, seed=5)[0]
        policy = RuleBasedPolicy(spec)
        a = run_episode(policy, spec, path)
        b = run_episode(policy, spec, path)
        assert a.total_cost == b.total_cost
        assert np.array_equal(a.trace_alloc, b.trace_alloc)

    def test_experience_collection(self):
        spec = builtin_instance("districts-2")
        path = benchmark_paths(spec, 2, seed=1)[0]
        r = run_episode(RuleBasedPolicy(spec), spec, path, collect_experience=True,
                        episode_id=9)
        assert r.experience is not None
        assert r.experience.episode_id == 9
        assert r.experience.district_costs.sum() == pytest.approx(r.total_cost, abs=1e-9)


class TestBenchmark:
    def test_common_random_numbers(self):
        spec = builtin_instance("districts-2")
        paths = benchmark_paths(spec, 4, seed=9)
        report_a = benchmark({"rule-based": RuleBasedPolicy(spec)}, spec, paths=paths)
        report_b = benchmark({"warm-up": WarmupPolicy(spec),
                              "null": NullPolicy()}, spec, paths=paths)
        assert report_a.path_digests == report_b.path_digests

    def test_identical_policies_identical_rows(self):
        spec = builtin_instance("districts-1")
        paths = benchmark_paths(spec, 4, seed=2)
        report = benchmark({"a": RuleBasedPolicy(spec, name="a"),
                            "b": RuleBasedPolicy(spec, name="b")}, spec, paths=paths)
        a, b = report.by_name("a"), report.by_name("b")
        assert a.mean_total == b.mean_total
        assert np.array_equal(a.totals, b.totals)

    def test_permutation_invariant_mean(self):
        spec = builtin_instance("districts-1")
        paths = benchmark_paths(spec, 6, seed=4)
        r1 = benchmark({"p": RuleBasedPolicy(spec, name="p")}, spec, paths=paths)
        r2 = benchmark({"p": RuleBasedPolicy(spec, name="p")}, spec,
                       paths=list(reversed(paths)))
        assert r1.by_name("p").mean_total == pytest.approx(
            r2.by_name("p").mean_total, abs=1e-9)

    def test_csv_output(self, tmp_path):
        spec = builtin_instance("districts-1")
        paths = benchmark_paths(spec, 3, seed=1)
        report = benchmark({"rule-based": RuleBasedPolicy(spec)}, spec, paths=paths)
        out = tmp_path / "bench.csv"
        report.to_csv(str(out))
        lines = out.read_text().strip().split("\n")
        assert lines[0].startswith("policy,mean_total,std_total")
        assert lines[1].startswith("rule-based,")

    def test_parallel_matches_serial(self):
        spec = builtin_instance("districts-1")
        paths = benchmark_paths(spec, 4, seed=8)
        serial = benchmark({"w": WarmupPolicy(spec, name="w")}, spec, paths=paths)
        parallel = benchmark({"w": WarmupPolicy(spec, name="w")}, spec, paths=paths,
                             workers=2)
        assert np.array_equal(serial.by_name("w").totals, parallel.by_name("w").totals)


class TestTraces:
    def test_allocation_trace_zero_policy(self):
        spec = builtin_instance("districts-2")
        trace = allocation_trace(NullPolicy(), spec, num_paths=3, seed=0)
        assert trace.shape == (30, 2)
        assert np.all(trace == 0)

    def test_allocation_trace_consistency(self, tmp_path):
        spec = builtin_instance("districts-3")
        policy = RuleBasedPolicy(spec)
        paths = benchmark_paths(spec, 4, seed=2)
        trace = allocation_trace(policy, spec, paths=paths)
        manual = np.zeros((30, 2))
        for i, path in enumerate(paths):
            r = run_episode(policy, spec, path)
            manual += r.trace_alloc.sum(axis=1)
        assert np.allclose(trace, manual / 4)
        out = tmp_path / "alloc.csv"
        allocation_trace_csv(trace, spec, str(out))
        assert out.read_text().startswith("epoch,mode,mean_units")

    def test_heatmap_identity(self, tmp_path):
        spec = builtin_instance("districts-3")
        path = benchmark_paths(spec, 2, seed=6)[0]
        r = run_episode(RuleBasedPolicy(spec), spec, path)
        matrix = deprivation_heatmap(r)
        assert matrix.shape == (3, 31)
        assert matrix.sum() == pytest.approx(r.deprivation_cost, abs=1e-9)
        heatmap_csv(matrix, str(tmp_path / "h.csv"))

    def test_zero_shortage_heatmap(self):
        spec = tiny_instance()
        events = tuple(
            ExogenousEvent(9 if t == 0 else 0, np.zeros(1, dtype=int),
                           np.zeros(1), np.zeros(1))
            for t in range(5))
        schedule = [Decision.from_alloc([[2, 0]], np.array([2, 5]))] + \
            [Decision.empty(1, 2)] * 3
        r = run_episode(ScriptedPolicy(schedule), spec, SamplePath(events, 0))
        assert np.all(deprivation_heatmap(r) == 0)


class TestCoverage:
    def test_reducing_allocation_cannot_raise_coverage(self):
        spec = builtin_instance("districts-3")
        path = benchmark_paths(spec, 2, seed=12)[0]
        base = run_episode(RuleBasedPolicy(spec), spec, path)
        schedule = [Decision.from_alloc(base.trace_alloc[t].astype(int), spec.capacity)
                    for t in range(spec.horizon)]
        rng = np.random.default_rng(0)
        for _ in range(10):
            t = int(rng.integers(0, spec.horizon))
            alloc = schedule[t].alloc.copy()
            positive = np.argwhere(alloc > 0)
            if len(positive) == 0:
                continue
            i, j = positive[int(rng.integers(0, len(positive)))]
            alloc[i, j] -= int(rng.integers(1, alloc[i, j] + 1))
            perturbed = schedule.copy()
            perturbed[t] = Decision.from_alloc(alloc, spec.capacity)
            result = run_episode(ScriptedPolicy(perturbed), spec, path)
            assert result.coverage <= base.coverage + 1e-12


class TestSurface:
    def test_zero_linear_vfa_flat(self):
        spec = builtin_instance("districts-1")
        rows = vfa_surface(LinearVFA.zeros(30, 1), spec, epochs=[0, 10],
                           inventories=[0, 100], expected_deprivations=[0, 10])
        assert all(r["value"] == 0.0 for r in rows)

    def test_mlp_surface_matches_forward(self, tmp_path):
        spec = builtin_instance("districts-1")
        rng = np.random.default_rng(2)
        net = MlpVFA.initialize(5, (16, 16), rng)
        rows = vfa_surface(net, spec, epochs=[3], inventories=[50.0],
                           expected_deprivations=[7.0], pinned_delta=2, pinned_cw=100)
        phi = np.array([3.0, 100.0, 50.0, 2.0, 7.0])
        assert rows[0]["value"] == pytest.approx(float(net.forward(phi)), abs=1e-12)
        surface_csv(rows, str(tmp_path / "s.csv"))

    def test_extrapolation_flagged(self):
        spec = builtin_instance("districts-1")
        rows = vfa_surface(LinearVFA.zeros(30, 1), spec, epochs=[0],
                           inventories=[1e9], expected_deprivations=[0.0])
        assert rows[0]["extrapolated"]


class TestCurveCsv:
    def test_format(self, tmp_path):
        out = tmp_path / "curve.csv"
        learning_curve_csv([{"episode": 10, "mean_cost": 123.456789,
                             "ci95_low": 100.0, "ci95_high": 150.0}], str(out))
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "episode,mean_cost,ci95_low,ci95_high"
        assert lines[1].startswith("10,123.457,")
