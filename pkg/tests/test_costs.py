import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize, minimize_scalar

from diffadapt.costs import (
    ConvergenceError,
    LinearModelData,
    LocalizationCost,
    QuadraticCost,
    SparseRegCost,
    global_minimizer,
    smooth_l1,
    total_cost,
)


def central_difference(f, w, h=1e-6):
    g = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def make_models(seed=0, m=5):
    r = np.random.default_rng(seed)
    w_true = r.normal(size=m)
    var = r.uniform(0.5, 2.0, size=m)
    quad = QuadraticCost(LinearModelData(w_true, rows=3, noise_std=0.7, regressor_var=var))
    sparse = SparseRegCost(LinearModelData(w_true, rows=2, noise_std=1.0), rho=2.0, epsilon=1e-3, n_nodes_total=10)
    loc = LocalizationCost(anchor=[0.8, -1.1], noise_std=1.0, target=[0.0, 0.0])
    return {"quadratic": quad, "sparse": sparse, "localization": loc}


MODELS = make_models()


def assert_fd_gradient(model, n_points=20, seed=1):
    r = np.random.default_rng(seed)
    for _ in range(n_points):
        w = r.normal(size=model.dim)
        g = model.gradient(w)
        fd = central_difference(model.cost, w)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1.0)


class TestQuadratic:
    def test_gradient_zero_at_optimum(self):
        q = MODELS["quadratic"]
        np.testing.assert_allclose(q.gradient(q.data.w_true), 0.0)

    def test_scalar_value(self):
        q = QuadraticCost(LinearModelData(np.zeros(1)))
        np.testing.assert_allclose(q.gradient(np.array([3.0])), [6.0])

    def test_finite_difference(self):
        assert_fd_gradient(MODELS["quadratic"])

    def test_noiseless_sample_gradient_at_optimum(self, rng):
        q = QuadraticCost(LinearModelData(np.array([1.0, -2.0, 0.5]), rows=4, noise_std=0.0))
        g = q.sample_gradient(np.broadcast_to(q.data.w_true, (100, 3)), q.draw(rng, 100))
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_sample_mean_converges(self, rng):
        q = MODELS["quadratic"]
        w = rng.normal(size=q.dim)
        n = 100_000
        g = q.sample_gradient(np.broadcast_to(w, (n, q.dim)), q.draw(rng, n))
        se = g.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(g.mean(axis=0) - q.gradient(w)) <= 3 * se)

    def test_noise_floor_constant(self):
        q = QuadraticCost(LinearModelData(np.zeros(4), rows=2, noise_std=0.5))
        alpha, floor = q.noise_moments(np.zeros(4))
        assert floor == pytest.approx(4 * 0.25 * 2 * 4)
        # 4K(tr R R + R^2) with R = I
        assert alpha == pytest.approx(4 * 2 * (4 + 1))

    def test_hessian_bounds_unit(self):
        q = QuadraticCost(LinearModelData(np.zeros(3)))
        assert tuple(q.hessian_bounds())[:2] == (2.0, 2.0)

    def test_analytic_covariance_matches_monte_carlo(self, rng):
        q = MODELS["quadratic"]
        w = q.data.w_true + rng.normal(scale=0.5, size=q.dim)
        n = 200_000
        v = q.sample_gradient(np.broadcast_to(w, (n, q.dim)), q.draw(rng, n)) - q.gradient(w)
        emp = v.T @ v / n
        np.testing.assert_allclose(emp, q.noise_covariance(w), atol=0.05 * np.abs(q.noise_covariance(w)).max())

    def test_target_override(self, rng):
        q = QuadraticCost(LinearModelData(np.zeros(2), noise_std=0.0))
        t = np.array([1.0, 2.0])
        u, d = q.draw(rng, 5, target=t)
        np.testing.assert_allclose(d, u @ t)

    def test_bad_data(self):
        with pytest.raises(ValueError):
            LinearModelData(np.zeros(2), regressor_var=[1.0, -1.0])
        with pytest.raises(ValueError):
            LinearModelData(np.zeros(2), rows=0)


class TestSparse:
    def test_rho_zero_is_quadratic(self, rng):
        data = LinearModelData(rng.normal(size=4), rows=2)
        s, q = SparseRegCost(data, 0.0, 1e-3, 10), QuadraticCost(data)
        w = rng.normal(size=4)
        np.testing.assert_array_equal(s.gradient(w), q.gradient(w))
        sample = q.draw(rng, ())
        np.testing.assert_array_equal(s.sample_gradient(w, sample), q.sample_gradient(w, sample))

    def test_regularizer_gradient_zero_at_origin(self):
        s = SparseRegCost(LinearModelData(np.zeros(3)), 2.0, 1e-3, 10)
        np.testing.assert_array_equal(s.gradient(np.zeros(3)), 0.0)

    def test_finite_difference(self):
        assert_fd_gradient(MODELS["sparse"])

    def test_hessian_bound_peak(self):
        eps, rho, n = 1e-3, 2.0, 10
        s = SparseRegCost(LinearModelData(np.zeros(3)), rho, eps, n)
        res = minimize_scalar(lambda x: -(eps**2) / (x * x + eps**2) ** 1.5, bounds=(-0.1, 0.1), method="bounded", options={"xatol": 1e-12})
        lo, hi, _ = s.hessian_bounds()
        assert hi == pytest.approx(2.0 + rho / n * (-res.fun), rel=1e-6)
        assert hi == pytest.approx(2.0 + 200.0)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
    def test_smooth_l1_limit(self, w):
        w = np.array(w)
        assert abs(smooth_l1(w, 1e-6) - np.abs(w).sum()) <= w.size * 1e-6

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(1e-4, 2.0))
    def test_smooth_l1_upper(self, w, eps):
        w = np.array(w)
        assert smooth_l1(w, eps) >= np.abs(w).sum()


class TestLocalization:
    def test_zero_gradient_at_target_noiseless(self):
        loc = LocalizationCost([1.0, 2.0], 0.0, [0.0, 0.0])
        np.testing.assert_allclose(loc.gradient(np.zeros(2)), 0.0)

    def test_zero_gradient_at_anchor(self, rng):
        loc = LocalizationCost([1.0, 2.0], 1.0, [0.0, 0.0])
        np.testing.assert_array_equal(loc.gradient(loc.anchor), 0.0)
        np.testing.assert_array_equal(loc.sample_gradient(loc.anchor, loc.draw(rng)), 0.0)

    def test_finite_difference(self):
        assert_fd_gradient(MODELS["localization"])

    def test_non_convex_flag(self):
        b = MODELS["localization"].hessian_bounds()
        assert b.non_convex and b.lam_min < 0

    def test_hessian_rank_one_at_target(self):
        loc = MODELS["localization"]
        vals = np.linalg.eigvalsh(loc.hessian(loc.target))
        e = loc.target - loc.anchor
        np.testing.assert_allclose(vals, [0.0, 2 * e @ e], atol=1e-12)


@pytest.mark.parametrize("name", sorted(MODELS))
class TestNoiseProperties:
    def test_zero_mean(self, name):
        model = MODELS[name]
        r = np.random.default_rng(5)
        n = 10_000
        for _ in range(10):
            w = r.normal(size=model.dim)
            v = model.sample_gradient(np.broadcast_to(w, (n, model.dim)), model.draw(r, n)) - model.gradient(w)
            se = v.std(axis=0, ddof=1) / np.sqrt(n)
            assert np.all(np.abs(v.mean(axis=0)) <= 4 * se)

    def test_moment_growth(self, name):
        model = MODELS[name]
        r = np.random.default_rng(6)
        w_opt = model.minimizer_hint if model.minimizer_hint is not None else model.data.w_true
        alpha, sv2 = model.noise_moments(w_opt)
        n = 20_000
        for dist in (0.0, 0.25, 0.5, 1.0, 2.0, 4.0):
            direction = r.normal(size=model.dim)
            w = w_opt + dist * direction / np.linalg.norm(direction)
            v = model.sample_gradient(np.broadcast_to(w, (n, model.dim)), model.draw(r, n)) - model.gradient(w)
            sq = np.sum(v * v, axis=1)
            bound = alpha * dist**2 + sv2
            assert sq.mean() <= bound + 4 * sq.std(ddof=1) / np.sqrt(n)

    def test_hessian_matches_gradient_difference(self, name):
        model = MODELS[name]
        w = np.random.default_rng(7).normal(size=model.dim)
        fd = np.column_stack([central_difference(lambda x, i=i: model.gradient(x)[i], w) for i in range(model.dim)])
        np.testing.assert_allclose(model.hessian(w), fd, rtol=1e-5, atol=1e-4)


@pytest.mark.parametrize("name", ["quadratic", "sparse"])
def test_hessian_within_bounds(name):
    model = MODELS[name]
    lo, hi, _ = model.hessian_bounds()
    r = np.random.default_rng(8)
    for _ in range(50):
        vals = np.linalg.eigvalsh(model.hessian(r.normal(scale=0.1, size=model.dim)))
        assert vals.min() >= lo - 1e-12 and vals.max() <= hi + 1e-12


class TestGlobalMinimizer:
    def _costs(self, rho, eps=1e-3, n=10, m=8):
        w = np.zeros(m)
        w[0] = w[-1] = 1.0
        return [SparseRegCost(LinearModelData(w, rows=5), rho, eps, n) for _ in range(n)], w

    def test_unbiased_without_penalty(self):
        costs, w = self._costs(0.0)
        np.testing.assert_allclose(global_minimizer(costs), w, atol=1e-8)

    def test_biased_with_penalty(self):
        costs, w = self._costs(2.0)
        w_hat = global_minimizer(costs)
        assert np.linalg.norm(w_hat - w) > 0
        # first-order balance 2KN (w_hat - 1) + rho = 0 on the unit coordinates
        np.testing.assert_allclose(w_hat[[0, -1]], 1 - 2.0 / (2 * 5 * 10), atol=1e-6)
        np.testing.assert_allclose(w_hat[1:-1], 0.0, atol=1e-10)

    def test_matches_generic_optimizer(self):
        costs, _ = self._costs(2.0, eps=0.1)
        ref = minimize(lambda x: total_cost(costs, x), np.zeros(8), method="BFGS", options={"gtol": 1e-10}).x
        np.testing.assert_allclose(global_minimizer(costs), ref, atol=1e-6)

    def test_gradient_norm_stopping_rule(self):
        costs, _ = self._costs(2.0)
        w_hat = global_minimizer(costs)
        assert np.linalg.norm(sum(c.gradient(w_hat) for c in costs)) <= 1e-10

    def test_iteration_cap(self):
        costs, _ = self._costs(2.0)
        with pytest.raises(ConvergenceError):
            global_minimizer(costs, w0=np.full(8, 5.0), max_iter=2)
