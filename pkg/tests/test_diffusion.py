import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from scorelab.diffusion import (FiniteMeasure, MCEstimate, dsm_loss,
                                empirical_risk, empirical_score,
                                empirical_score_field, exact_score,
                                exact_score_field, cond_expectation,
                                forward_sample, forward_samples, log_density,
                                ou_coeffs, posterior_weights, sm_loss,
                                time_grid, zero_score_field)

LN2 = math.log(2.0)


def e1(D=2):
    v = np.zeros(D)
    v[0] = 1.0
    return v


class TestOUCoeffs:
    def test_t_zero(self):
        co = ou_coeffs(0.0)
        assert co.c == 1.0 and co.sigma == 0.0

    def test_ln2(self):
        co = ou_coeffs(LN2)
        assert co.c == pytest.approx(0.5, abs=1e-15)
        assert co.sigma == pytest.approx(math.sqrt(0.75), abs=1e-15)

    def test_large_t_limits(self):
        co = ou_coeffs(50.0)
        assert co.c == pytest.approx(1.9287e-22, rel=1e-3)
        assert co.sigma == pytest.approx(1.0, abs=1e-15)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ou_coeffs(-0.1)

    @given(st.floats(1e-6, 60.0))
    @settings(max_examples=100, deadline=None)
    def test_pythagoras_to_1e14(self, t):
        co = ou_coeffs(t)
        assert abs(co.c**2 + co.sigma**2 - 1.0) <= 1e-14


class TestForwardSample:
    def test_t_zero_identity(self):
        mu = FiniteMeasure.from_points(np.random.default_rng(0).normal(size=(5, 3)))
        x0, z, xt = forward_sample(mu, 0.0, 1)
        assert np.array_equal(x0, xt)

    def test_point_mass_noise_norm(self):
        mu = FiniteMeasure.point_mass(np.zeros(16))
        _, z, xt = forward_samples(mu, 2.0, 20_000, 2)
        co = ou_coeffs(2.0)
        assert (np.linalg.norm(xt, axis=1) ** 2 / co.sigma**2).mean() == \
            pytest.approx(16, rel=0.05)

    def test_mixture_law_componentwise(self):
        # var(x_t - c_t x0) = sigma_t^2 per coordinate
        mu = FiniteMeasure.from_points(np.random.default_rng(3).normal(size=(7, 32)))
        x0, _, xt = forward_samples(mu, 1.0, 100_000, 4)
        co = ou_coeffs(1.0)
        var = (xt - co.c * x0).var(axis=0)
        assert np.abs(var / co.sigma**2 - 1).max() < 0.02

    def test_matches_euler_maruyama_moments(self):
        # 200-step EM simulation of dX = -X dt + sqrt(2) dB agrees with the
        # closed-form mixture in the first two moments within 3 MC SEs
        rng = np.random.default_rng(5)
        mu = FiniteMeasure.from_points(rng.normal(size=(4, 6)) + 1.0)
        t, n, steps = 0.7, 40_000, 200
        h = t / steps
        idx = rng.choice(mu.n, size=n, p=mu.weights)
        x = mu.support[idx].copy()
        for _ in range(steps):
            x = x * (1 - h) + math.sqrt(2 * h) * rng.standard_normal(x.shape)
        _, _, xt = forward_samples(mu, t, n, 6)
        se_mean = xt.std(axis=0) / math.sqrt(n)
        assert (np.abs(x.mean(axis=0) - xt.mean(axis=0))
                <= 3 * se_mean * 2 + 3 * x.std(axis=0) / math.sqrt(n)).all()
        v1, v2 = x.var(axis=0), xt.var(axis=0)
        se_var = np.sqrt(2 / n) * np.maximum(v1, v2)
        assert (np.abs(v1 - v2) <= 3 * 2 * se_var + h).all()


class TestPosterior:
    def test_single_point(self):
        mu = FiniteMeasure.point_mass(e1())
        assert posterior_weights(mu, 0.4, np.zeros(2)).weights[0] == 1.0

    def test_symmetry(self):
        mu = FiniteMeasure.from_points([[-1.0, 0.0], [1.0, 0.0]])
        w = posterior_weights(mu, 0.3, np.array([0.0, 5.0])).weights
        assert w == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_scalar_softmax_oracle(self):
        # support {0, e1}, x = c_t e1, t = ln 2: weights softmax(-{1/6, 0})
        mu = FiniteMeasure.from_points([[0.0, 0.0], [1.0, 0.0]])
        co = ou_coeffs(LN2)
        w = posterior_weights(mu, LN2, co.c * e1()).weights
        expo = np.array([-co.c**2 / (2 * co.sigma**2), 0.0])
        oracle = np.exp(expo) / np.exp(expo).sum()
        assert w == pytest.approx(oracle, abs=1e-12)
        assert w == pytest.approx([0.4584, 0.5416], abs=1e-4)

    def test_invariant_under_weight_rescaling(self):
        pts = np.random.default_rng(7).normal(size=(6, 3))
        w = np.array([1, 2, 3, 4, 5, 6], dtype=float)
        mu1 = FiniteMeasure(pts, w / w.sum())
        mu2 = FiniteMeasure(pts, w[::-1] / w.sum())  # different measure
        x = np.ones(3)
        p1 = posterior_weights(mu1, 0.5, x).weights
        assert p1.sum() == pytest.approx(1.0, abs=1e-10)
        assert not np.allclose(p1, posterior_weights(mu2, 0.5, x).weights)

    def test_extreme_exponents_stay_finite(self):
        mu = FiniteMeasure.from_points([[0.0, 0.0], [200.0, 0.0]])
        w = posterior_weights(mu, 1e-4, np.zeros(2)).weights
        assert np.isfinite(w).all() and w[0] == pytest.approx(1.0)


class TestExactScore:
    def test_point_mass_closed_form(self):
        mu = FiniteMeasure.point_mass(e1())
        s = exact_score(mu, LN2, np.zeros(2))
        assert s == pytest.approx([2.0 / 3.0, 0.0], abs=1e-14)

    def test_symmetric_pair_cancels(self):
        mu = FiniteMeasure.from_points([[-1.0, 0.0], [1.0, 0.0]])
        assert np.abs(exact_score(mu, 0.8, np.zeros(2))).max() < 1e-14

    def test_matches_log_density_gradient(self):
        rng = np.random.default_rng(8)
        mu = FiniteMeasure.from_points(rng.normal(size=(10, 6)))
        x = rng.normal(size=6)
        s = exact_score(mu, 0.3, x)
        h = 1e-5
        fd = np.empty(6)
        for j in range(6):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd[j] = (log_density(mu, 0.3, xp) - log_density(mu, 0.3, xm)) / (2 * h)
        assert np.abs(s - fd).max() < 1e-5 * max(1.0, np.abs(s).max())

    def test_rejects_tiny_time(self):
        mu = FiniteMeasure.point_mass(e1())
        with pytest.raises(ValueError):
            exact_score(mu, 0.0, np.zeros(2))
        with pytest.raises(ValueError):
            exact_score(mu, 1e-9, np.zeros(2))

    def test_tweedie_identity_per_evaluation(self):
        # sigma_t s(t,x) = sum_i p(y_i|t,x)(c_t y_i - x)/sigma_t, algebraically
        rng = np.random.default_rng(9)
        mu = FiniteMeasure.from_points(rng.normal(size=(8, 4)))
        for t in (0.05, 0.5, 2.0):
            x = rng.normal(size=4)
            co = ou_coeffs(t)
            w = posterior_weights(mu, t, x).weights
            rhs = (w @ (co.c * mu.support - x)) / co.sigma
            assert np.abs(co.sigma * exact_score(mu, t, x) - rhs).max() < 1e-12


class TestCondExpectation:
    def test_point_mass(self):
        mu = FiniteMeasure.point_mass(e1(4))
        assert cond_expectation(mu, 0.7, np.ones(4)) == pytest.approx(e1(4))

    def test_equidistant_pair(self):
        mu = FiniteMeasure.from_points([[0.0, 0.0], [1.0, 0.0]])
        co = ou_coeffs(0.9)
        x = np.array([co.c * 0.5, 3.0])
        assert cond_expectation(mu, 0.9, x) == pytest.approx([0.5, 0.0])

    def test_recombination_identity(self):
        rng = np.random.default_rng(10)
        mu = FiniteMeasure.from_points(rng.normal(size=(9, 5)))
        x = rng.normal(size=5)
        co = ou_coeffs(0.6)
        lhs = exact_score(mu, 0.6, x)
        rhs = (co.c * cond_expectation(mu, 0.6, x) - x) / co.sigma**2
        assert np.abs(lhs - rhs).max() < 1e-10


class TestEmpiricalScore:
    def test_single_sample(self):
        y = e1(3)
        co = ou_coeffs(0.4)
        x = np.array([0.2, -0.1, 0.5])
        assert empirical_score(y[None], 0.4, x) == pytest.approx(
            (co.c * y - x) / co.sigma**2)

    def test_equals_exact_of_uniform(self):
        pts = np.random.default_rng(11).normal(size=(6, 4))
        mu = FiniteMeasure.from_points(pts)
        x = np.ones(4)
        assert empirical_score(pts, 0.5, x) == pytest.approx(
            exact_score(mu, 0.5, x), abs=1e-14)

    def test_matches_finite_difference(self):
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(5, 4))
        mu = FiniteMeasure.from_points(pts)
        x = rng.normal(size=4)
        s = empirical_score(pts, 0.45, x)
        h = 1e-5
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd = (log_density(mu, 0.45, xp) - log_density(mu, 0.45, xm)) / (2 * h)
            assert s[j] == pytest.approx(fd, abs=1e-5 * max(1, abs(fd)))


class TestLosses:
    def test_time_grid_covers_interval(self):
        nodes, weights = time_grid(0.25, 1.0)
        assert weights.sum() == pytest.approx(0.75, abs=1e-12)
        assert nodes.min() > 0.25 and nodes.max() < 1.0

    def test_dsm_perfect_denoiser_of_point_mass(self):
        y = np.zeros(4)
        field = exact_score_field(FiniteMeasure.point_mass(y))
        est = dsm_loss(field, y, 0.3, 0.9, 400, 13)
        assert abs(est.value) <= max(3 * est.stderr, 1e-10)

    def test_dsm_zero_field_quadrature_oracle(self):
        # s_hat = 0, y = 0: integrand is D / sigma_t^2; compare with an
        # independent 1-D quadrature of the closed-form integrand
        D, a, b = 5, 0.25, 1.0
        est = dsm_loss(zero_score_field(D), np.zeros(D), a, b, 3000, 14)
        oracle = quad(lambda t: D / (-math.expm1(-2 * t)), a, b)[0]
        assert est.value == pytest.approx(oracle, rel=0.01)

    def test_empirical_risk_single_sample_reduces_to_dsm(self):
        field = zero_score_field(3)
        y = np.ones(3)
        r = empirical_risk(field, y[None, :], 0.3, 0.6, 500, 15)
        l = dsm_loss(field, y, 0.3, 0.6, 500, 16)
        assert r.value == pytest.approx(l.value, rel=5 * (r.stderr + l.stderr))

    def test_empirical_risk_duplicate_samples(self):
        field = zero_score_field(3)
        y = np.ones((2, 3))
        r2 = empirical_risk(field, y, 0.3, 0.6, 800, 17)
        r1 = empirical_risk(field, y[:1], 0.3, 0.6, 800, 18)
        assert r2.value == pytest.approx(r1.value,
                                         abs=3 * (r2.stderr + r1.stderr))

    def test_empirical_risk_linear_in_sample_mixture(self):
        # risk over the union of two sample sets is the size-weighted average
        # of the per-set risks (recomputed directly)
        rng = np.random.default_rng(19)
        ya = rng.normal(size=(3, 4))
        yb = rng.normal(size=(5, 4))
        field = exact_score_field(FiniteMeasure.from_points(ya))
        nw = (0.4, 0.8)
        ra = empirical_risk(field, ya, *nw, 3000, 20)
        rb = empirical_risk(field, yb, *nw, 3000, 21)
        rall = empirical_risk(field, np.vstack([ya, yb]), *nw, 3000, 22)
        mix = (3 * ra.value + 5 * rb.value) / 8
        tol = 3 * math.sqrt(rall.stderr**2 + ra.stderr**2 + rb.stderr**2)
        assert rall.value == pytest.approx(mix, abs=tol)

    def test_sm_loss_of_exact_score_is_zero(self):
        mu = FiniteMeasure.from_points(np.random.default_rng(23).normal(size=(4, 3)))
        est = sm_loss(exact_score_field(mu), mu, 0.2, 0.8, 400, 24)
        assert abs(est.value) < 1e-18

    def test_sm_loss_two_point_closed_form(self):
        # estimator = score of a point mass at distance eps from the truth's
        # point mass: loss integrates to (eps^2/2)(sigma_a^-2 - sigma_b^-2)
        eps, a, b = 0.3, 0.25, 1.0
        truth = FiniteMeasure.point_mass(np.zeros(4))
        shifted = FiniteMeasure.point_mass(eps * e1(4))
        est = sm_loss(exact_score_field(shifted), truth, a, b, 2000, 25)
        sa2 = -math.expm1(-2 * a)
        sb2 = -math.expm1(-2 * b)
        oracle = eps**2 / 2 * (1 / sa2 - 1 / sb2)
        assert est.value == pytest.approx(oracle, rel=0.01)

    def test_stderr_always_reported(self):
        est = dsm_loss(zero_score_field(2), np.zeros(2), 0.3, 0.5, 50, 26)
        assert isinstance(est, MCEstimate) and est.stderr > 0

    def test_empty_sample_set_rejected(self):
        with pytest.raises(ValueError):
            empirical_risk(zero_score_field(2), np.zeros((0, 2)), 0.2, 0.4, 10, 0)


class TestVincentIdentity:
    def test_loss_difference_equals_risk_difference(self):
        # SM loss differs from the denoising risk by a constant independent
        # of the estimator, so differences across estimators agree
        rng = np.random.default_rng(27)
        pts = rng.normal(size=(6, 4))
        mu = FiniteMeasure.from_points(pts)
        f1 = zero_score_field(4)
        f2 = exact_score_field(FiniteMeasure.from_points(pts[:3]))
        a, b, m = 0.3, 0.6, 4000
        sm1 = sm_loss(f1, mu, a, b, m, 28)
        sm2 = sm_loss(f2, mu, a, b, m, 29)
        r1 = empirical_risk(f1, pts, a, b, m // 4, 30)
        r2 = empirical_risk(f2, pts, a, b, m // 4, 31)
        gap = (sm1.value - sm2.value) - (r1.value - r2.value)
        se = math.sqrt(sm1.stderr**2 + sm2.stderr**2 + r1.stderr**2 + r2.stderr**2)
        assert abs(gap) <= 3 * se


class TestSerialization:
    def test_csv_roundtrip(self, tmp_path):
        mu = FiniteMeasure(np.random.default_rng(32).normal(size=(7, 3)),
                           np.full(7, 1 / 7))
        path = tmp_path / "measure.csv"
        mu.save_csv(path)
        back = FiniteMeasure.load_csv(path)
        assert np.array_equal(back.support, mu.support)
        assert np.array_equal(back.weights, mu.weights)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            FiniteMeasure(np.zeros((2, 2)), np.array([0.7, 0.4]))
        with pytest.raises(ValueError):
            FiniteMeasure(np.array([[np.nan, 0.0]]), np.array([1.0]))
