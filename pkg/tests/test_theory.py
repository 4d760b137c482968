import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from diffadapt.costs import LinearModelData, LocalizationCost, QuadraticCost
from diffadapt.graph import (
    CombinationMatrices,
    averaging_weights,
    complete_graph,
    geometric_topology,
    metropolis_weights,
    strategy_matrices,
)
from diffadapt.theory import (
    AssumptionViolation,
    UnstableError,
    analyze,
    b_matrix,
    block_max_norm,
    block_max_norm_attainer,
    d_infinity,
    f_matrix,
    gamma_k,
    mean_error_dynamics_check,
    one_norm,
    rv_from_model,
    sigma_minmax,
    spectral_radius,
    stable_stepsize_interval,
    stacked_noise_covariance,
    steady_state_mse,
    worst_node_mse_bound,
)


def random_instance(seed, n=None, m=None, kind=None, mu_scale=0.2):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 6)) if n is None else n
    m = int(r.integers(1, 3)) if m is None else m
    kind = ["atc", "cta", "noncooperative"][int(r.integers(3))] if kind is None else kind
    net = geometric_topology(n, 0.7, int(r.integers(1 << 30)))
    w_true = r.normal(size=m)
    costs = [
        QuadraticCost(LinearModelData(w_true, rows=1, noise_std=r.uniform(0.2, 1.5), regressor_var=r.uniform(0.5, 2.0, m)))
        for _ in range(n)
    ]
    cm = strategy_matrices(kind, averaging_weights(net), metropolis_weights(net))
    _, smax = sigma_minmax(cm.s, [c.hessian_bounds() for c in costs])
    cm = cm.with_mu(mu_scale * r.uniform(0.2, 1.0, n) / smax)
    return cm, costs, w_true


def instance_matrices(cm, costs, w):
    d = d_infinity(cm.s, [c.hessian(w) for c in costs])
    rv = stacked_noise_covariance([c.noise_covariance(w) for c in costs], cm.s)
    return d, rv


def scalar_cm(mu):
    one = np.eye(1)
    return CombinationMatrices(one, one, one, [mu])


class TestSigma:
    def test_identity(self):
        smin, smax = sigma_minmax(np.eye(2), [(1, 2), (1, 2)])
        np.testing.assert_array_equal(smin, [1, 1])
        np.testing.assert_array_equal(smax, [2, 2])

    def test_uniform_average(self):
        _, smax = sigma_minmax(np.full((2, 2), 0.5), [(1, 2), (1, 4)])
        np.testing.assert_allclose(smax, [3, 3])

    def test_brute_force_sum(self):
        net = geometric_topology(7, 0.5, 4)
        s = metropolis_weights(net)
        r = np.random.default_rng(0)
        lam = np.sort(r.uniform(0.1, 3.0, size=(7, 2)), axis=1)
        smin, smax = sigma_minmax(s, lam)
        for k in range(7):
            assert smin[k] == pytest.approx(sum(s[l, k] * lam[l, 0] for l in range(7)))
            assert smax[k] == pytest.approx(sum(s[l, k] * lam[l, 1] for l in range(7)))

    def test_violation_names_node(self):
        with pytest.raises(AssumptionViolation, match=r"\[1\]"):
            sigma_minmax(np.eye(2), [(1, 2), (0, 2)])


class TestStepSizes:
    def test_alpha_zero(self):
        _, b = stable_stepsize_interval(1.0, 4.0, 0.0, 1.0)
        assert b == pytest.approx(0.5)

    def test_equal_sigmas(self):
        assert stable_stepsize_interval(2.0, 2.0, 0.0, 1.0)[1] == pytest.approx(1.0)

    def test_both_branches(self):
        assert stable_stepsize_interval(1.0, 4.0, 3.0, 1.0)[1] == pytest.approx(8 / 19)

    def test_gamma(self):
        assert gamma_k(0.0, 1.0, 3.0) == 1.0
        assert gamma_k(0.5, 2.0, 2.0) == 0.0
        assert gamma_k(0.001, 1.0, 3.0) == pytest.approx(0.999)

    def test_gamma_small_step_branch(self):
        mu = np.array([1e-3, 1e-2])
        np.testing.assert_allclose(gamma_k(mu, 1.0, 5.0), 1 - mu * 1.0)


class TestWorstNodeBound:
    def test_noise_free(self):
        assert worst_node_mse_bound([0.01], [0.99], 0.0, 0.0, 1.0)[0] == 0.0

    def test_scalar_value_and_simulation(self):
        bound, _ = worst_node_mse_bound([0.01], [0.99], 0.0, 1.0, 1.0)
        assert bound == pytest.approx(1e-4 / (1 - 0.9801))
        # w' = w - mu (w + v) with unit-variance v independent of w: alpha = 0, sigma_v^2 = 1
        r = np.random.default_rng(1)
        w = np.zeros(2000)
        acc = []
        for i in range(3000):
            w = w - 0.01 * (w + r.standard_normal(w.size))
            if i >= 1500:
                acc.append(np.mean(w * w))
        per_block = np.array(acc).reshape(15, -1).mean(axis=1)
        est, se = per_block.mean(), per_block.std(ddof=1) / np.sqrt(per_block.size)
        assert est <= bound + 3 * se

    def test_linear_in_noise(self):
        args = ([0.01, 0.02], [0.99, 0.98], 0.5, 1.0)
        a = worst_node_mse_bound(*args[:3], 1.0, args[3])[0]
        b = worst_node_mse_bound(*args[:3], 3.0, args[3])[0]
        assert b == pytest.approx(3 * a)

    def test_unstable(self):
        with pytest.raises(UnstableError):
            worst_node_mse_bound([1.0], [0.9], 1.0, 1.0, 1.0)

    def test_small_step_form(self):
        _, simple = worst_node_mse_bound([0.01, 0.02], [0.99, 0.98], 0.0, 2.0, 1.0, sigma_min=[1.0, 1.0])
        assert simple == pytest.approx(2.0 * 0.02**2 / (2 * 0.01 * 1.0))


class TestDInfinity:
    def test_identity_s(self):
        hs = [np.diag([1.0, 2.0]), np.diag([3.0, 4.0])]
        np.testing.assert_array_equal(d_infinity(np.eye(2), hs), scipy.linalg.block_diag(*hs))

    def test_identical_hessians(self):
        h = np.array([[2.0, 0.5], [0.5, 1.0]])
        s = metropolis_weights(geometric_topology(4, 0.7, 0))
        d = d_infinity(s, [h] * 4)
        for k in range(4):
            np.testing.assert_allclose(d[2 * k : 2 * k + 2, 2 * k : 2 * k + 2], h)

    def test_brute_force(self):
        r = np.random.default_rng(2)
        s = metropolis_weights(complete_graph(3))
        hs = [np.diag(r.uniform(1, 3, 2)) for _ in range(3)]
        d = d_infinity(s, hs)
        for k in range(3):
            np.testing.assert_allclose(d[2 * k : 2 * k + 2, 2 * k : 2 * k + 2], sum(s[l, k] * hs[l] for l in range(3)))
        assert not d[0:2, 2:].any()


class TestBF:
    def test_scalar(self):
        b = b_matrix(scalar_cm(0.1), np.array([[2.0]]))
        np.testing.assert_allclose(b, [[0.8]])
        np.testing.assert_allclose(f_matrix(b), [[0.64]])

    @given(st.integers(0, 10_000))
    def test_kron_identity(self, seed):
        cm, costs, w = random_instance(seed)
        d, _ = instance_matrices(cm, costs, w)
        b = b_matrix(cm, d)
        assert abs(spectral_radius(f_matrix(b)) - spectral_radius(b) ** 2) <= 1e-10

    def test_contraction_bound(self):
        for seed in range(20):
            cm, costs, w = random_instance(seed, mu_scale=0.05)
            d, _ = instance_matrices(cm, costs, w)
            smin, smax = sigma_minmax(cm.s, [c.hessian_bounds() for c in costs])
            assert spectral_radius(b_matrix(cm, d)) <= np.max(gamma_k(cm.mu, smin, smax)) + 1e-12

    def test_boundary_is_unstable(self):
        assert mean_error_dynamics_check(scalar_cm(0.1), np.array([[2.0]]))
        assert not mean_error_dynamics_check(scalar_cm(1.0), np.array([[2.0]]))

    @given(st.integers(0, 10_000))
    def test_small_step_stable(self, seed):
        cm, costs, w = random_instance(seed, mu_scale=0.1)
        d, _ = instance_matrices(cm, costs, w)
        assert mean_error_dynamics_check(cm, d)


def random_symmetric_block_diag(r, n, m):
    blocks = []
    for _ in range(n):
        x = r.normal(size=(m, m))
        blocks.append(0.5 * (x + x.T))
    return scipy.linalg.block_diag(*blocks), blocks


class TestBlockMaxNorm:
    def test_unit_blocks(self):
        v = np.tile([0.6, 0.8], 5)
        assert block_max_norm(v, 2) == pytest.approx(1.0)

    def test_singular_values(self):
        x = scipy.linalg.block_diag(np.diag([1.0, 0.5]), np.diag([-3.0, 1.0]), np.diag([2.0, 0.1]))
        assert block_max_norm(x, 2) == pytest.approx(3.0)

    def test_not_block_diagonal(self):
        x = np.eye(4)
        x[0, 3] = 1.0
        with pytest.raises(NotImplementedError):
            block_max_norm(x, 2)

    def test_indivisible(self):
        with pytest.raises(ValueError):
            block_max_norm(np.ones(5), 2)

    @given(st.integers(0, 10_000))
    def test_sampling_never_exceeds_and_equality(self, seed):
        r = np.random.default_rng(seed)
        x, blocks = random_symmetric_block_diag(r, 4, 3)
        norm = block_max_norm(x, 3)
        assert norm == pytest.approx(max(np.max(np.abs(np.linalg.eigvalsh(b))) for b in blocks))
        samples = r.normal(size=(10_000, 12))
        ratios = np.linalg.norm((samples @ x.T).reshape(-1, 4, 3), axis=2).max(1) / np.linalg.norm(
            samples.reshape(-1, 4, 3), axis=2
        ).max(1)
        assert ratios.max() <= norm * (1 + 1e-12)
        v = block_max_norm_attainer(x, 3)
        assert block_max_norm(x @ v, 3) / block_max_norm(v, 3) == pytest.approx(norm, abs=1e-6)


class TestSteadyState:
    def test_scalar_closed_form(self):
        per, net = steady_state_mse(scalar_cm(0.1), np.array([[2.0]]), np.array([[3.0]]))
        assert net == pytest.approx(3.0 / 36)
        assert per[0] == pytest.approx(3.0 / 36)

    def test_zero_noise(self):
        cm, costs, w = random_instance(1)
        d, rv = instance_matrices(cm, costs, w)
        per, net = steady_state_mse(cm, d, np.zeros_like(rv))
        assert net == 0.0 and not per.any()

    @given(st.integers(0, 10_000))
    def test_node_mean_is_network(self, seed):
        cm, costs, w = random_instance(seed)
        per, net = steady_state_mse(cm, *instance_matrices(cm, costs, w), method="kron")
        assert abs(per.mean() - net) <= 1e-12 * max(1.0, net)

    @given(st.integers(0, 10_000))
    def test_kron_matches_lyapunov(self, seed):
        cm, costs, w = random_instance(seed)
        d, rv = instance_matrices(cm, costs, w)
        pk, nk = steady_state_mse(cm, d, rv, method="kron")
        pl, nl = steady_state_mse(cm, d, rv, method="lyapunov")
        np.testing.assert_allclose(pk, pl, rtol=1e-8)
        assert nk == pytest.approx(nl, rel=1e-8)

    def test_unstable_raises(self):
        with pytest.raises(UnstableError):
            steady_state_mse(scalar_cm(1.5), np.array([[2.0]]), np.array([[1.0]]))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            steady_state_mse(scalar_cm(0.1), np.array([[2.0]]), np.array([[1.0]]), method="svd")

    @given(st.integers(0, 10_000), st.floats(1e-3, 1.0))
    def test_monotone_in_noise(self, seed, bump):
        cm, costs, w = random_instance(seed)
        d, rv = instance_matrices(cm, costs, w)
        _, base = steady_state_mse(cm, d, rv)
        i = seed % rv.shape[0]
        rv2 = rv.copy()
        rv2[i, i] += bump
        _, bumped = steady_state_mse(cm, d, rv2)
        assert bumped >= base - 1e-15

    @given(st.integers(0, 10_000))
    def test_bound_dominates_prediction(self, seed):
        cm, costs, w = random_instance(seed, mu_scale=0.05)
        rep = analyze(cm, costs, w)
        assert rep.w_inf_bound is not None
        assert rep.mse_per_node.max() <= rep.w_inf_bound


class TestRv:
    def test_noiseless_zero(self):
        costs = [QuadraticCost(LinearModelData(np.ones(2), noise_std=0.0)) for _ in range(3)]
        est, analytic = rv_from_model(costs, np.ones(2), np.eye(3), n_samples=1000, rng=0)
        assert not est.any() and not analytic.any()

    def test_identity_s_blocks(self):
        r = np.random.default_rng(0)
        var = r.uniform(0.5, 2.0, size=(2, 3))
        costs = [QuadraticCost(LinearModelData(np.zeros(3), rows=2, noise_std=0.8, regressor_var=v)) for v in var]
        batches = [rv_from_model(costs, np.zeros(3), np.eye(2), n_samples=4000, rng=b) for b in range(50)]
        analytic = batches[0][1]
        est = np.array([b[0] for b in batches])
        mean = est.mean(axis=0)
        se = est.std(axis=0, ddof=1) / np.sqrt(len(batches))
        for k in range(2):
            blk = slice(3 * k, 3 * k + 3)
            np.testing.assert_allclose(analytic[blk, blk], 4 * 0.64 * 2 * np.diag(var[k]))
            assert np.all(np.abs(mean[blk, blk] - analytic[blk, blk]) <= 3 * se[blk, blk])
        # independent nodes with S = I leave the off-diagonal blocks at zero
        assert not analytic[:3, 3:].any()

    def test_symmetric_psd(self):
        cm, costs, w = random_instance(3)
        est, _ = rv_from_model(costs, w, cm.s, n_samples=2000, rng=2)
        np.testing.assert_array_equal(est, est.T)
        assert np.linalg.eigvalsh(est).min() >= -1e-10

    def test_bad_samples(self):
        with pytest.raises(ValueError):
            rv_from_model([], np.zeros(1), np.eye(1), n_samples=0)


class TestAnalyze:
    def test_report_fields(self):
        cm, costs, w = random_instance(5)
        rep = analyze(cm, costs, w)
        assert rep.stable and rep.caveat == ""
        assert rep.f_spectral_radius == pytest.approx(rep.b_spectral_radius**2, abs=1e-10)
        flat = rep.scalars()
        assert "network_mse" in flat and "mse_per_node_0" in flat
        assert rep.s_one_norm == one_norm(cm.s)

    def test_localization_caveat(self):
        net = geometric_topology(5, 0.8, 1)
        anchors = 2 * net.positions - 1
        costs = [LocalizationCost(a, 1.0, [0.0, 0.0]) for a in anchors]
        cm = strategy_matrices("atc", averaging_weights(net), metropolis_weights(net)).with_mu(0.01)
        rep = analyze(cm, costs, np.zeros(2))
        assert "non-convex" in rep.caveat
        assert rep.w_inf_bound is None and rep.stable
