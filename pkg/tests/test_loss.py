import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qopl import (MAIN13, ConfigurationError, DgpConfig, IvDataset, LossConfig, MinimaxLoss,
                  NcDgpConfig, NumericalError, UnsupportedModeError, empirical_loss,
                  excess_loss, fit_greedy, generate_iv_dataset, generate_nc_dataset,
                  inner_maximize, loss_gradient, nc_loss)
from qopl.features import DesignMatrix, build_design_matrix
from qopl.loss import NC_BASIS1, NcLoss, QuadraticDual, residuals

BETA_TRUE = np.array([1.0, 1.0, 3.0, 2.0])
HARD = LossConfig(mode="hard")


def coordinate_ascent(w, m, sweeps=20_000, tol=1e-15):
    """Brute-force maximiser of (1/n) w'Mc - (1/2n) |Mc|^2 by exact coordinate steps."""
    n, d = m.shape
    g, gram = m.T @ w, m.T @ m
    c = np.zeros(d)
    for _ in range(sweeps):
        prev = c.copy()
        for j in range(d):
            c[j] = (g[j] - gram[j] @ c + gram[j, j] * c[j]) / gram[j, j]
        if np.max(np.abs(c - prev)) < tol:
            break
    return (w @ m @ c - 0.5 * np.sum((m @ c) ** 2)) / n


def _point_dataset(h, y):
    n = len(y)
    # x1 = 1, x2 = 0, a = 0 so that h = beta[0]
    return IvDataset.from_arrays(np.ones(n), np.zeros(n), np.zeros(n), np.zeros(n), y, 0.3), h


class TestResiduals:
    def test_saturation(self):
        d, _ = _point_dataset(None, np.array([-10.0]))
        w = residuals(d, [0.0, 0, 0, 0], 0.3).w
        assert abs(w[0] - 0.7) < 1e-4

    def test_hard_boundary_includes_equality(self):
        d, _ = _point_dataset(None, np.array([0.0]))
        assert residuals(d, [0.0, 0, 0, 0], 0.3, HARD).w[0] == pytest.approx(0.7)

    def test_smoothed_at_zero(self):
        d, _ = _point_dataset(None, np.array([0.0]))
        assert residuals(d, [0.0, 0, 0, 0], 0.3).w[0] == 0.5 - 0.3

    def test_ranges(self, iv_small):
        beta = np.array([0.5, -1, 2, 1])
        wh = residuals(iv_small, beta, 0.2, HARD).w
        assert set(np.round(wh, 12)) <= {-0.2, 0.8}
        ws = residuals(iv_small, beta, 0.2).w
        assert np.all((ws >= -0.2) & (ws <= 0.8))
        # strictly inside wherever the logistic is not saturated in floating point
        gap = np.abs(iv_small.contexts() @ beta[2:] * iv_small.a
                     + iv_small.contexts() @ beta[:2] - iv_small.y)
        inner = ws[5 * gap < 30]
        assert inner.size and np.all((inner > -0.2) & (inner < 0.8))


class TestInnerMaximize:
    def test_zero_residuals(self):
        sol = inner_maximize(np.zeros(5), np.random.default_rng(0).standard_normal((5, 2)))
        assert sol.loss_value == 0 and np.all(sol.theta_coef == 0)

    def test_hand_solved_instance(self):
        sol = inner_maximize(np.array([0.8, -0.2]), DesignMatrix(np.ones((2, 1))), ridge=0.0)
        assert sol.theta_coef[0] == pytest.approx(0.3)
        assert sol.loss_value == pytest.approx(0.045)

    def test_matches_coordinate_ascent(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(4, 21))
            d = int(rng.integers(1, 4))
            m = rng.standard_normal((n, d))
            w = rng.uniform(-0.3, 0.7, n)
            assert abs(inner_maximize(w, m).loss_value - coordinate_ascent(w, m)) < 1e-6

    def test_singular_without_ridge(self):
        m = np.ones((4, 2))
        with pytest.raises(NumericalError, match="ridge"):
            inner_maximize(np.arange(4.0), m, ridge=0.0)
        assert inner_maximize(np.arange(4.0), m, ridge=1e-6).loss_value >= 0

    def test_constant_basis_centred_residuals(self):
        w = np.array([0.3, -0.1, -0.4, 0.2])
        assert abs(inner_maximize(w, np.ones((4, 1))).loss_value) < 1e-15

    @settings(max_examples=50, deadline=None)
    @given(st.integers(3, 15), st.integers(1, 3), st.integers(0, 2 ** 31))
    def test_loss_is_half_projected_norm(self, n, d, seed):
        rng = np.random.default_rng(seed)
        m = rng.standard_normal((n, d))
        w = rng.uniform(-1, 1, n)
        proj = m @ np.linalg.lstsq(m, w, rcond=None)[0]
        val = inner_maximize(w, m, ridge=1e-12).loss_value
        assert val >= -1e-12
        assert val == pytest.approx(0.5 * proj @ proj / n, rel=1e-6, abs=1e-12)

    def test_ridge_monotone(self, iv_small):
        beta = np.array([0.2, 0.1, 1.0, 0.5])
        vals = [empirical_loss(iv_small, beta, 0.2, MAIN13, LossConfig(ridge=r))
                for r in (0.0, 1.0, 1e9)]
        assert vals[0] >= vals[1] - 1e-12 >= vals[2] - 2e-12
        assert vals[2] >= -1e-12 and vals[2] <= vals[0] + 1e-9


class TestEmpiricalLoss:
    def test_truth_scaling_large_n(self):
        d = generate_iv_dataset(DgpConfig(n=100_000, alpha=0.2, seed=2))
        assert empirical_loss(d, BETA_TRUE, 0.2, MAIN13, HARD) <= 10 * 13 / 100_000

    def test_nonnegative(self, iv_small, rng):
        for _ in range(10):
            assert empirical_loss(iv_small, rng.standard_normal(4) * 3, 0.2, MAIN13) >= -1e-12

    def test_batch_matches_single(self, iv_small, rng):
        loss = MinimaxLoss(iv_small, 0.2, MAIN13)
        betas = rng.standard_normal((700, 4))
        np.testing.assert_allclose(loss.batch_values(betas),
                                   [loss.value(b) for b in betas], rtol=1e-10, atol=1e-15)

    def test_wrong_beta_length(self, iv_small):
        with pytest.raises(ConfigurationError):
            residuals(iv_small, [1.0, 2.0], 0.2)


class TestGradient:
    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        for i in range(20):
            d = generate_iv_dataset(DgpConfig(n=200, alpha=float(rng.uniform(0.1, 0.9)),
                                              seed=100 + i))
            beta = rng.standard_normal(4) * 2
            loss = MinimaxLoss(d, d.alpha, MAIN13)
            g = loss.gradient(beta)
            fd = np.array([(loss.value(beta + e) - loss.value(beta - e)) / 2e-5
                           for e in np.eye(4) * 1e-5])
            assert np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-4

    def test_saturated(self):
        n = 50
        rng = np.random.default_rng(3)
        x1, x2, z = rng.standard_normal((3, n))
        y = np.where(rng.random(n) < 0.5, 1e6, -1e6)
        d = IvDataset.from_arrays(x1, x2, z, rng.integers(0, 2, n), y, 0.2)
        assert np.linalg.norm(loss_gradient(d, np.ones(4), 0.2, MAIN13)) < 1e-12

    def test_hard_mode_unsupported(self, iv_small):
        with pytest.raises(UnsupportedModeError):
            loss_gradient(iv_small, BETA_TRUE, 0.2, MAIN13, HARD)

    def test_stationary_after_descent(self, iv_unconfounded):
        fit = fit_greedy(iv_unconfounded)
        loss = MinimaxLoss(iv_unconfounded, 0.2, MAIN13)
        assert np.linalg.norm(loss.gradient(fit.beta.beta)) < 1e-6


class TestExcessLoss:
    def test_identity_and_clamp(self, iv_small, rng):
        assert excess_loss(iv_small, BETA_TRUE, BETA_TRUE, 0.2, MAIN13) == 0.0
        for _ in range(5):
            assert excess_loss(iv_small, rng.standard_normal(4), rng.standard_normal(4),
                               0.2, MAIN13) >= 0.0

    def test_truth_excess_shrinks_with_n(self):
        means = []
        for n in (500, 1500, 3000):
            vals = []
            for seed in range(10):
                # unconfounded assignment: the fitted minimiser is well identified
                d = generate_iv_dataset(DgpConfig(n=n, alpha=0.2, p_structured=0.0,
                                                  seed=seed))
                vals.append(excess_loss(d, BETA_TRUE, fit_greedy(d).beta.beta, 0.2, MAIN13))
            means.append(np.mean(vals))
        assert means[0] > means[1] > means[2] > 0


class TestNcLoss:
    @pytest.fixture(scope="class")
    @staticmethod
    def nc():
        return generate_nc_dataset(NcDgpConfig(n=800, alpha=0.2, seed=5))

    def test_zero_bridge_zero_l2(self, nc):
        _, l2 = nc_loss(nc, BETA_TRUE, np.zeros(4), 0.2)
        assert l2 == 0.0

    def test_zero_bridge_reduces_to_iv_loss(self, nc):
        l1, _ = nc_loss(nc, BETA_TRUE, np.zeros(4), 0.2)
        iv = MinimaxLoss(nc, 0.2, NC_BASIS1, design=build_design_matrix(nc, NC_BASIS1))
        assert l1 == pytest.approx(iv.value(BETA_TRUE), rel=1e-12)

    def test_truth_scaling(self):
        d = generate_nc_dataset(NcDgpConfig(n=100_000, alpha=0.2, kappa=0.0, seed=6))
        l1, l2 = nc_loss(d, BETA_TRUE, np.zeros(4), 0.2, config=HARD)
        assert l1 + l2 <= 10 * (14 + 6) / 100_000

    def test_joint_gradient(self, nc):
        loss = NcLoss(nc, 0.2)
        coef = np.random.default_rng(2).standard_normal(loss.dim)
        fd = np.array([(loss.value(coef + e) - loss.value(coef - e)) / 2e-5
                       for e in np.eye(loss.dim) * 1e-5])
        g = loss.gradient(coef)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4
        np.testing.assert_allclose(loss.batch_values(coef[None]), [loss.value(coef)])


def test_quadratic_dual_block_matches_columns(rng):
    m = rng.standard_normal((30, 4))
    dual = QuadraticDual(m)
    w = rng.standard_normal((30, 3))
    np.testing.assert_allclose(dual.loss(w), [dual.loss(w[:, j]) for j in range(3)])
