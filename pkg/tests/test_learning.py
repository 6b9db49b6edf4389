import numpy as np
import pytest

from reliefalloc import learning
from reliefalloc.learning import (
    Episode,
    ExperienceBuffer,
    LinearVFA,
    MlpTrainer,
    MlpVFA,
    TrainingConfig,
    filter_outliers,
    fit_linear,
    load_checkpoint,
    mlp_forward,
    mlp_loss_and_grads,
    save_checkpoint,
    smooth_weights,
    value_targets,
)


def make_episode(costs, episode_id=0, num_districts=None):
    """Episode from a (T+1, N) cost array with placeholder features."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim == 1:
        costs = costs[:, np.newaxis]
    T, N = costs.shape[0] - 1, costs.shape[1]
    return Episode(
        episode_id=episode_id,
        features_linear=np.zeros((T, N, 3)),
        features_neural=np.zeros((T, 2 + 3 * N)),
        district_costs=costs,
    )


class TestValueTargets:
    def test_zero_costs(self):
        ep = make_episode(np.zeros(5))
        assert np.all(value_targets(ep, 0.9) == 0)

    def test_hand_recursion(self):
        ep = make_episode([0.0, 10.0, 20.0, 30.0])
        v = value_targets(ep, 0.9)
        assert v[2, 0] == pytest.approx(30.0)
        assert v[1, 0] == pytest.approx(20 + 0.9 * 30)
        assert v[0, 0] == pytest.approx(10 + 0.9 * (20 + 0.9 * 30))

    def test_zero_discount(self):
        ep = make_episode([5.0, 1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            TrainingConfig(discount=0.0)
        v = value_targets(ep, 1e-12)
        assert np.allclose(v[:, 0], [1.0, 2.0, 3.0], atol=1e-9)

    def test_linear_in_costs(self):
        base = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
        v1 = value_targets(make_episode(base), 0.9)
        v2 = value_targets(make_episode(7.0 * base, episode_id=1), 0.9)
        assert np.allclose(7.0 * v1, v2)

    def test_incomplete_episode_rejected(self):
        ep = make_episode(np.zeros((4, 1)))
        ep.district_costs = np.zeros((2, 1))
        with pytest.raises(ValueError):
            value_targets(ep, 0.9)


class TestBuffer:
    def test_fifo_eviction(self):
        buf = ExperienceBuffer(capacity=3)
        for i in range(5):
            buf.append(make_episode(np.zeros(3), episode_id=i))
        assert len(buf) == 3
        assert [ep.episode_id for ep in buf.episodes()] == [2, 3, 4]


class TestFilterOutliers:
    def test_identical_costs_kept(self):
        eps = [make_episode(np.full(3, 10.0), i) for i in range(8)]
        assert len(filter_outliers(eps)) == 8

    def test_extreme_episode_removed(self):
        eps = [make_episode(np.array([0, 0, c]), i)
               for i, c in enumerate([10, 10, 10, 10, 1000])]
        kept = filter_outliers(eps)
        assert len(kept) == 4
        assert all(ep.total_cost == 10 for ep in kept)

    def test_small_buffer_guard(self):
        eps = [make_episode(np.array([0, 0, c]), i) for i, c in enumerate([1, 2, 1000])]
        assert len(filter_outliers(eps)) == 3

    def test_buffer_not_mutated(self):
        buf = ExperienceBuffer(10)
        for i, c in enumerate([10, 10, 10, 10, 1000]):
            buf.append(make_episode(np.array([0.0, 0, c]), i))
        filter_outliers(buf)
        assert len(buf) == 5

    def test_iid_removal_rate(self):
        rng = np.random.default_rng(7)
        for rep in range(5):
            eps = [make_episode(np.array([0.0, 0, rng.exponential(100)]), i)
                   for i in range(1000)]
            kept = filter_outliers(eps)
            assert len(kept) >= 750, f"removed too many in rep {rep}"


class TestFitLinear:
    def test_exact_recovery(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 10, (200, 3))
        w = np.array([4.0, 2.0, -5.0, 3.0])
        y = w[0] + X @ w[1:]
        fitted = fit_linear(X, y)
        assert np.allclose(fitted, w, atol=1e-6)

    def test_single_record_interpolates(self):
        X = np.array([[150.0, 2.0, 13.4]])
        y = np.array([1700.0])
        w = fit_linear(X, y)
        assert w[0] + X[0] @ w[1:] == pytest.approx(1700.0, abs=1e-6)

    def test_noisy_recovery(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 5, (500, 3))
        y = 2.0 * X[:, 0] - 5.0 * X[:, 1] + 3.0 * X[:, 2] + rng.normal(0, 0.01, 500)
        w = fit_linear(X, y)
        assert abs(w[1] - 2.0) < 0.05
        assert abs(w[2] + 5.0) < 0.05
        assert abs(w[3] - 3.0) < 0.05


class TestSmoothing:
    def test_endpoints_and_convexity(self):
        old = np.zeros(4)
        new = np.full(4, 10.0)
        assert np.all(smooth_weights(old, new, 0.0) == old)
        assert np.all(smooth_weights(old, new, 1.0) == new)
        assert np.all(smooth_weights(old, new, 0.2) == 2.0)

    def test_contraction(self):
        old = np.array([8.0])
        new = np.array([2.0])
        for alpha in [0.1, 0.5, 0.9, 1.0]:
            out = smooth_weights(old, new, alpha)
            assert abs(out[0] - new[0]) < abs(old[0] - new[0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            smooth_weights(np.zeros(3), np.zeros(4), 0.5)


class TestMlp:
    def test_zero_weights_constant_output(self):
        net = MlpVFA(w1=np.zeros((16, 5)), b1=np.zeros(16), w2=np.zeros((16, 16)),
                     b2=np.zeros(16), w3=np.zeros((1, 16)), b3=np.array([7.5]))
        rng = np.random.default_rng(3)
        for _ in range(5):
            assert mlp_forward(net, rng.normal(0, 10, 5)) == pytest.approx(7.5)

    @staticmethod
    def draw_smooth_batch(net, rng, size=16):
        """Batch whose pre-activations sit away from the ReLU kinks.

        Central differences are only a valid oracle on the smooth region;
        a perturbation of 1e-4 moves pre-activations by well under the
        5e-3 margin enforced here.
        """
        for _ in range(200):
            X = rng.normal(0, 1, (size, net.input_dim))
            a1 = X @ net.w1.T + net.b1
            a2 = np.maximum(0, a1) @ net.w2.T + net.b2
            if min(np.abs(a1).min(), np.abs(a2).min()) > 5e-3:
                return X
        raise AssertionError("could not find a kink-free batch")

    def test_gradient_check(self):
        rng = np.random.default_rng(11)
        max_err = 0.0
        for _ in range(20):
            net = MlpVFA.initialize(5, (8, 8), rng)
            params = [p.copy() for p in net.params()]
            X = self.draw_smooth_batch(net, rng)
            y = rng.normal(0, 1, len(X))
            _, grads = mlp_loss_and_grads(tuple(params), X, y)
            h = 1e-4
            for pi, p in enumerate(params):
                flat = p.ravel()
                idx = rng.integers(0, flat.size, size=min(6, flat.size))
                for j in idx:
                    orig = flat[j]
                    flat[j] = orig + h
                    lp, _ = mlp_loss_and_grads(tuple(params), X, y)
                    flat[j] = orig - h
                    lm, _ = mlp_loss_and_grads(tuple(params), X, y)
                    flat[j] = orig
                    fd = (lp - lm) / (2 * h)
                    an = grads[pi].ravel()[j]
                    err = abs(fd - an) / max(abs(fd), abs(an), 1.0)
                    max_err = max(max_err, err)
        assert max_err < 1e-4

    def test_self_training(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, (10_000, 4))
        y = X.sum(axis=1)
        net = MlpVFA.initialize(4, (16, 16), rng)
        trainer = MlpTrainer(net, learning_rate=0.01)
        for step in range(200):
            idx = rng.integers(0, len(X), 256)
            trainer.train_step(X[idx], y[idx])
        held_X = rng.uniform(-1, 1, (1000, 4))
        held_y = held_X.sum(axis=1)
        pred = net.forward(held_X)
        mse = float(np.mean((pred - held_y) ** 2))
        assert mse < 0.01 * float(np.var(held_y))

    def test_fold_preserves_output(self):
        rng = np.random.default_rng(9)
        net = MlpVFA.initialize(7, (16, 16), rng)
        net.set_standardization(rng.normal(0, 5, 7), rng.uniform(0.5, 3, 7), 120.0, 45.0)
        layers = net.folded_layers()

        def folded_forward(phi):
            h = np.asarray(phi, dtype=np.float64)
            for i, (w, b) in enumerate(layers):
                h = h @ w.T + b
                if i < len(layers) - 1:
                    h = np.maximum(0.0, h)
            return float(h[0])

        for _ in range(1000):
            phi = rng.normal(0, 5, 7)
            assert abs(net.forward(phi) - folded_forward(phi)) < 1e-8

    def test_nonfinite_loss_aborts_update(self):
        net = MlpVFA.initialize(3, (4, 4), np.random.default_rng(1))
        before = [p.copy() for p in net.params()]
        trainer = MlpTrainer(net)
        loss = trainer.train_step(np.ones((2, 3)), np.array([np.inf, 1.0]))
        assert not np.isfinite(loss)
        for b, a in zip(before, net.params()):
            assert np.array_equal(b, a)


class TestCheckpoints:
    def test_linear_round_trip(self, tmp_path):
        vfa = LinearVFA(np.random.default_rng(2).normal(0, 3, (30, 2, 4)))
        path = tmp_path / "lin.json"
        save_checkpoint(vfa, str(path), meta={"instance": "districts-2"})
        loaded, meta = load_checkpoint(str(path))
        assert isinstance(loaded, LinearVFA)
        assert np.array_equal(loaded.weights, vfa.weights)
        assert meta["instance"] == "districts-2"

    def test_mlp_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        net = MlpVFA.initialize(5, (16, 16), rng)
        net.set_standardization(rng.normal(0, 1, 5), rng.uniform(0.5, 2, 5), 10.0, 3.0)
        path = tmp_path / "mlp.json"
        save_checkpoint(net, str(path))
        loaded, _ = load_checkpoint(str(path))
        for a, b in zip(net.params(), loaded.params()):
            assert np.array_equal(a, b)
        assert np.array_equal(loaded.x_mean, net.x_mean)
        assert loaded.y_std == net.y_std

    def test_version_guard(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": 99, "kind": "linear", "weights": []}')
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(str(path))


class TestTrainingConfig:
    def test_defaults(self):
        cfg = TrainingConfig()
        assert cfg.discount == 0.9
        assert cfg.epsilon0 == 0.2 and cfg.epsilon_decay == 0.98
        assert cfg.alpha0 == 0.2 and cfg.alpha_decay == 0.99
        assert cfg.buffer_size == 1000 and cfg.update_every == 10
        assert cfg.learning_rate == 0.001 and cfg.batch_size == 256
        assert cfg.hidden == (16, 16)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainingConfig(epsilon0=1.5)
