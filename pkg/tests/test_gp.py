import itertools
import math

import numpy as np
import pytest

from sdlsim import gp
from sdlsim.gp import GPFitError, Hyperparams, NoiseMode

from oracles import dense_lml, dense_posterior, matern52_loop


def random_problem(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    d = int(rng.integers(1, 5))
    x = rng.random((n, d))
    y = rng.normal(size=n)
    hp = Hyperparams(np.exp(rng.uniform(np.log(0.05), np.log(2.0), d)),
                     float(np.exp(rng.uniform(-1, 1))),
                     float(np.exp(rng.uniform(np.log(1e-4), 0))))
    return x, y, hp, rng.random((5, d))


def test_kernel_matches_loop():
    rng = np.random.default_rng(0)
    a, b = rng.random((6, 3)), rng.random((4, 3))
    ls = np.array([0.2, 0.5, 1.3])
    np.testing.assert_allclose(gp.matern52(a, b, ls, 1.7), matern52_loop(a, b, ls, 1.7),
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(np.diag(gp.matern52(a, a, ls, 1.7)), 1.7, rtol=1e-12)


def test_normalize_roundtrip():
    bounds = ((-32.768, 32.768), (220.0, 300.0))
    x = np.array([[0.0, 250.0], [-32.768, 300.0]])
    u = gp.normalize(x, bounds)
    np.testing.assert_allclose(u, [[0.5, 0.375], [0.0, 1.0]])
    np.testing.assert_allclose(gp.unnormalize(u, bounds), x)


class TestDenseOracle:
    @pytest.mark.parametrize("standardize", [False, True])
    def test_posterior_and_lml(self, standardize):
        for seed in range(100):
            x, y, hp, xq = random_problem(seed)
            model = gp.from_hyperparams(x, y, hp, standardize=standardize)
            mean, var = gp.posterior(model, xq)
            ref_mean, ref_var = dense_posterior(
                x, model.train_y, hp.lengthscales, hp.signal_variance, hp.noise_variance, xq,
                model.y_mean, model.y_std)
            np.testing.assert_allclose(mean, ref_mean, rtol=1e-8, atol=1e-8)
            np.testing.assert_allclose(var, ref_var, rtol=1e-8, atol=1e-8)
            ref_lml = dense_lml(x, model.train_y, hp.lengthscales, hp.signal_variance,
                                hp.noise_variance)
            assert gp.log_marginal_likelihood(model) == pytest.approx(ref_lml, rel=1e-8, abs=1e-8)

    def test_observation_noise_adds_noise_variance(self):
        x, y, hp, xq = random_problem(3)
        model = gp.from_hyperparams(x, y, hp)
        _, latent = gp.posterior(model, xq)
        _, noisy = gp.posterior(model, xq, observation_noise=True)
        np.testing.assert_allclose(noisy - latent, hp.noise_variance, rtol=1e-12)

    def test_scalar_query_returns_floats(self):
        x, y, hp, xq = random_problem(4)
        mean, var = gp.posterior(gp.from_hyperparams(x, y, hp), xq[0])
        assert isinstance(mean, float) and isinstance(var, float)


class TestSmallCases:
    def test_single_point(self):
        hp = Hyperparams(np.array([0.5]), 1.0, 0.25)
        model = gp.from_hyperparams([[0.3]], [2.0], hp)
        mean, var = gp.posterior(model, np.array([0.3]))
        assert mean == pytest.approx(2.0 / 1.25, rel=1e-12)
        assert var == pytest.approx(1.0 - 1.0 / 1.25, rel=1e-12)

    def test_single_zero_target_lml(self):
        hp = Hyperparams(np.array([0.5]), 0.75, 0.25)
        model = gp.from_hyperparams([[0.3]], [0.0], hp)
        assert gp.log_marginal_likelihood(model) == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_lml_drops_when_targets_scaled_up(self):
        rng = np.random.default_rng(1)
        x, y = rng.random((6, 2)), rng.normal(size=6)
        hp = Hyperparams(np.array([0.3, 0.3]), 1.0, 0.01)
        small = gp.log_marginal_likelihood(gp.from_hyperparams(x, y, hp))
        big = gp.log_marginal_likelihood(gp.from_hyperparams(x, 10 * y, hp))
        assert big < small

    def test_far_query_reverts_to_prior(self):
        rng = np.random.default_rng(2)
        x, y = rng.random((5, 2)), rng.normal(size=5)
        hp = Hyperparams(np.array([0.1, 0.1]), 1.3, 0.01)
        model = gp.from_hyperparams(x, y, hp)
        mean, var = gp.posterior(model, np.array([50.0, 50.0]))
        assert abs(mean) < 1e-12
        assert var == pytest.approx(1.3, rel=1e-12)

    def test_noiseless_interpolation(self):
        rng = np.random.default_rng(3)
        x = rng.random((8, 2))
        y = np.sin(3 * x[:, 0]) + x[:, 1]
        model = gp.fit(x, y, NoiseMode.fixed_value(1e-10), seed=0)
        mean, var = gp.posterior(model, x)
        np.testing.assert_allclose(mean, y, atol=1e-4)
        assert var.max() < 1e-4

    def test_permutation_invariance(self):
        x, y, hp, xq = random_problem(11)
        perm = np.random.default_rng(0).permutation(len(x))
        a = gp.posterior(gp.from_hyperparams(x, y, hp), xq)
        b = gp.posterior(gp.from_hyperparams(x[perm], y[perm], hp), xq)
        np.testing.assert_allclose(a[0], b[0], atol=1e-10)
        np.testing.assert_allclose(a[1], b[1], atol=1e-10)

    def test_extra_point_never_increases_variance(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            x, y = rng.random((6, 3)), rng.normal(size=6)
            hp = Hyperparams(rng.uniform(0.1, 1.0, 3), 1.0, 1e-3)
            xq = rng.random((20, 3))
            _, before = gp.posterior(gp.from_hyperparams(x[:5], y[:5], hp), xq)
            _, after = gp.posterior(gp.from_hyperparams(x, y, hp), xq)
            assert np.all(after <= before + 1e-12)


class TestFit:
    def test_fit_not_worse_than_any_start(self):
        rng = np.random.default_rng(4)
        x = rng.random((20, 2))
        y = np.cos(4 * x[:, 0]) * x[:, 1] + 0.05 * rng.normal(size=20)
        model = gp.fit(x, y, seed=1)
        assert len(model.start_mlls) == gp.N_STARTS
        assert gp.log_marginal_likelihood(model) >= max(model.start_mlls) - 1e-9

    def test_within_tolerance_of_grid_search(self):
        x = np.array([[0.0], [0.2], [0.45], [0.7], [1.0]])
        y = np.array([0.1, 0.9, 0.2, -0.6, 0.4])
        model = gp.fit(x, y, seed=0)
        ys = model.train_y
        grid_ls = np.exp(np.linspace(np.log(1e-2), np.log(10), 25))
        grid_var = np.exp(np.linspace(np.log(1e-3), np.log(10), 25))
        grid_sn = np.exp(np.linspace(np.log(1e-6), np.log(1), 25))
        best = max(dense_lml(x, ys, [ls], sf, sn)
                   for ls, sf, sn in itertools.product(grid_ls, grid_var, grid_sn))
        assert gp.log_marginal_likelihood(model) >= best - 0.1

    def test_hyperparameters_within_bounds(self):
        rng = np.random.default_rng(5)
        x = rng.random((15, 3))
        model = gp.fit(x, rng.normal(size=15), seed=0)
        hp = model.hyperparams
        assert np.all(hp.lengthscales >= gp.LENGTHSCALE_BOUNDS[0] * (1 - 1e-9))
        assert np.all(hp.lengthscales <= gp.LENGTHSCALE_BOUNDS[1] * (1 + 1e-9))
        assert gp.VARIANCE_BOUNDS[0] * (1 - 1e-9) <= hp.noise_variance

    def test_fixed_noise_in_objective_units(self):
        rng = np.random.default_rng(6)
        x = rng.random((10, 2))
        y = 1e5 * rng.normal(size=10)
        model = gp.fit(x, y, NoiseMode.fixed_value(4e8), seed=0)
        assert model.hyperparams.noise_variance * model.y_std**2 == pytest.approx(4e8)

    def test_seeded_fit_is_deterministic(self):
        rng = np.random.default_rng(7)
        x, y = rng.random((12, 2)), rng.normal(size=12)
        a, b = gp.fit(x, y, seed=3), gp.fit(x, y, seed=3)
        np.testing.assert_array_equal(a.hyperparams.lengthscales, b.hyperparams.lengthscales)

    def test_mismatched_shapes(self):
        with pytest.raises(ValueError):
            gp.fit(np.zeros((3, 2)), np.zeros(2))

    def test_negative_fixed_noise_rejected(self):
        with pytest.raises(ValueError):
            NoiseMode.fixed_value(-1.0)


class TestCholesky:
    def test_indefinite_raises(self):
        a = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(GPFitError, match="condition number"):
            gp.robust_cholesky(a)

    def test_near_singular_gets_jitter(self):
        a = np.ones((3, 3))
        chol, jitter = gp.robust_cholesky(a)
        assert 0 < jitter <= gp.JITTER_MAX
        np.testing.assert_allclose(chol @ chol.T, a + jitter * np.eye(3), atol=1e-12)


class TestFantasize:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.x = rng.random((8, 2))
        self.y = np.sin(5 * self.x[:, 0]) + self.x[:, 1]
        self.model = gp.fit(self.x, self.y, seed=0)

    def test_empty_pending_is_identity(self):
        assert gp.fantasize(self.model, np.empty((0, 2))) is self.model

    def test_variance_collapses_at_pending(self):
        p = np.array([[0.5, 0.5], [0.9, 0.1]])
        fm = gp.fantasize(self.model, p)
        assert fm.n_fantasies == 2 and fm.n == self.model.n + 2
        _, before = gp.posterior(self.model, p)
        _, after = gp.posterior(fm, p)
        assert np.all(after < before)
        noise = self.model.hyperparams.noise_variance * self.model.y_std**2
        assert np.all(after <= noise + 1e-6)

    def test_mean_at_pending_unchanged(self):
        p = np.array([[0.3, 0.6]])
        before, _ = gp.posterior(self.model, p)
        after, _ = gp.posterior(gp.fantasize(self.model, p), p)
        np.testing.assert_allclose(after, before, atol=1e-10)

    def test_far_mean_unchanged(self):
        fm = gp.fantasize(self.model, np.array([[0.5, 0.5]]))
        far = np.array([[40.0, -40.0]])
        np.testing.assert_allclose(gp.posterior(fm, far)[0], gp.posterior(self.model, far)[0],
                                   atol=1e-10)

    def test_hyperparameters_untouched(self):
        fm = gp.fantasize(self.model, np.array([[0.1, 0.1]]))
        assert fm.hyperparams is self.model.hyperparams
        assert fm.y_mean == self.model.y_mean and fm.y_std == self.model.y_std


class TestCrossValidation:
    def test_fold_indices_interleaved(self):
        folds = gp.fold_indices(7, 3)
        assert [f.tolist() for f in folds] == [[0, 3, 6], [1, 4], [2, 5]]

    def test_smooth_draw_predicts_well(self):
        rng = np.random.default_rng(9)
        x = rng.random((40, 2))
        k = matern52_loop(x, x, [0.6, 0.6], 1.0) + 1e-8 * np.eye(40)
        y = np.linalg.cholesky(k) @ rng.normal(size=40)
        assert gp.cross_validate(x, y, NoiseMode.fixed_value(1e-6), folds=10) > 0.99

    def test_pure_noise_has_no_skill(self):
        scores = []
        for seed in range(30):
            rng = np.random.default_rng(100 + seed)
            scores.append(gp.cross_validate(rng.random((20, 2)), rng.normal(size=20), folds=5,
                                            n_starts=2))
        assert np.median(scores) <= 0.05

    def test_leave_one_out_matches_refit(self):
        rng = np.random.default_rng(10)
        x = rng.random((20, 2))
        y = x[:, 0] ** 2 - x[:, 1] + 0.01 * rng.normal(size=20)
        noise = NoiseMode.fixed_value(1e-4)
        pred = np.empty(20)
        for i in range(20):
            keep = np.arange(20) != i
            m = gp.fit(x[keep], y[keep], noise, seed=0, n_starts=3)
            pred[i] = gp.posterior(m, x[i])[0]
        ss = 1 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
        assert gp.cross_validate(x, y, noise, folds=20, n_starts=3) == pytest.approx(ss, abs=1e-6)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            gp.cross_validate(np.zeros((3, 1)), np.zeros(3), folds=10)


def test_dump_is_json_ready():
    import json
    rng = np.random.default_rng(12)
    model = gp.fit(rng.random((6, 2)), rng.normal(size=6), seed=0)
    text = json.dumps(gp.dump(model, ((0, 1), (0, 1))))
    assert "matern52_ard" in text
