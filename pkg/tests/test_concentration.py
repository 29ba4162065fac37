import json
import math

import numpy as np
import pytest

from scorelab.concentration import (BoundReport, check_denoiser_variance,
                                    check_drift_freeze,
                                    check_inner_product_sup,
                                    check_posterior_band, check_surface_gp,
                                    check_tangent_projection,
                                    check_weight_radius, log_plus,
                                    manifold_net)
from scorelab.diffusion import FiniteMeasure
from scorelab.fit import EpsConfig, fit_surface
from scorelab.geometry import eps_net, make_manifold, sample_measure


def circle(D=8, seed=0):
    return make_manifold(("circle", 1.0), D, seed)


def circle_measure(man, n=300, seed=1):
    return sample_measure(man, None, n, seed)


class TestPlumbing:
    def test_log_plus(self):
        assert log_plus(0.5) == 0.0
        assert log_plus(math.e) == pytest.approx(1.0)

    def test_manifold_net_density_audit(self):
        man = circle()
        net = manifold_net(man, 0.1)
        assert len(net) >= 20

    def test_report_invariants_and_serialization(self, tmp_path):
        rep = BoundReport("demo", {"D": 4}, np.array([0.1, 0.7, 0.2]), 0.5,
                          np.array([False, True, False]), 0.05)
        assert rep.violation_rate == pytest.approx(1 / 3)
        assert rep.violation_threshold() > 0.05
        q = rep.quantiles()
        assert q["q50"] == pytest.approx(0.2)
        csv_path = tmp_path / "r.csv"
        rep.to_csv(csv_path)
        assert csv_path.read_text().splitlines()[0] == "trial,stat,violated"
        json_path = tmp_path / "r.json"
        rep.save_summary(json_path)
        data = json.loads(json_path.read_text())
        assert data["bound"] == "demo" and data["trials"] == 3


class TestInnerProductSup:
    def test_fixed_pair_gaussian_tail(self):
        # scalar oracle: <Z, v> ~ N(0, |v|^2), so the simple tail bound holds
        # with probability >= 1 - delta
        rng = np.random.default_rng(2)
        v = rng.normal(size=16)
        delta = 0.05
        z = rng.standard_normal((4000, 16))
        stat = np.abs(z @ v)
        bound = np.linalg.norm(v) * math.sqrt(2 * math.log(2 / delta))
        rate = (stat > bound).mean()
        assert rate <= delta + 3 * math.sqrt(delta * (1 - delta) / 4000)

    def test_violation_rate_within_threshold(self):
        rep = check_inner_product_sup(circle(), 0.1, 0.05, 600, 3)
        assert rep.violation_rate <= rep.violation_threshold()

    def test_median_statistic_flat_across_D(self):
        meds = {}
        for D in (8, 512):
            rep = check_inner_product_sup(circle(D, seed=4), 0.1, 0.05, 400, 5)
            meds[D] = np.median(rep.stats)
        assert abs(meds[512] / meds[8] - 1.0) < 0.15

    def test_eps_above_chart_radius_rejected(self):
        with pytest.raises(ValueError, match="r0"):
            check_inner_product_sup(circle(), 0.5, 0.05, 10, 0)


class TestTangentProjection:
    def test_single_point_chi_square_mean(self):
        # oracle: |proj Z|^2 over a d-dimensional subspace is chi^2_d
        man = circle(16, seed=6)
        from scorelab.geometry import tangent_projector
        y = man.embed(np.array([1.0, 0.0]))
        p = tangent_projector(man, y)
        rng = np.random.default_rng(7)
        z = rng.standard_normal((20000, 16))
        val = ((z @ p) ** 2).sum(axis=1)
        assert val.mean() == pytest.approx(1.0, rel=0.05)

    def test_violation_rate(self):
        rep = check_tangent_projection(circle(), 0.05, 600, 8)
        assert rep.violation_rate <= rep.violation_threshold()

    def test_sphere_medians_flat_across_D(self):
        meds = {}
        for D in (16, 256):
            man = make_manifold(("sphere", 2, 1.0), D, seed=9)
            rep = check_tangent_projection(man, 0.05, 300, 10, resolution=0.2)
            meds[D] = np.median(rep.stats)
        assert abs(meds[256] / meds[16] - 1.0) < 0.15


class TestPosteriorBand:
    def test_single_point_measure_trivially_in_band(self):
        man = circle()
        mu = FiniteMeasure.point_mass(man.embed(np.array([1.0, 0.0])))
        rep = check_posterior_band(man, mu, 0.05, 0.05, 200, 11,
                                   cell_volumes=np.array([1.0]))
        assert rep.violation_rate == 0.0

    def test_circle_violation_rate(self):
        man = circle()
        mu = circle_measure(man, 500, 12)
        rep = check_posterior_band(man, mu, 0.01, 0.05, 600, 13)
        assert rep.violation_rate <= rep.violation_threshold()

    def test_band_edges_ordered(self):
        # lower <= upper holds algebraically for every config
        man = circle()
        co_ratios = [0.01, 0.1, 1.0, 10.0]
        from scorelab.concentration import _band_constants
        for t in (0.01, 0.1, 1.0):
            _, _, a = _band_constants(man, t, 0.05)
            tail = 8 * math.log(1 / 0.05)
            for d2 in (0.0, 1.0, 100.0):
                lower = -a - tail - 0.75 * d2
                upper = a + tail - 0.25 * d2
                assert lower <= upper


class TestDenoiserVariance:
    def test_point_mass_statistic_zero(self):
        man = circle()
        mu = FiniteMeasure.point_mass(man.embed(np.array([1.0, 0.0])))
        rep = check_denoiser_variance(man, mu, 0.1, 200, 14)
        assert rep.extras["mean"] < 1e-20

    def test_circle_sweep_flat_and_bounded(self):
        means, controls = {}, {}
        for D in (8, 64):
            man = circle(D, seed=15)
            mu = circle_measure(man, 400, 16)
            rep = check_denoiser_variance(man, mu, 0.05, 800, 17)
            means[D] = rep.extras["mean"]
            controls[D] = rep.extras["control_noise_sq"]
            assert rep.extras["mean"] + 3 * rep.extras["stderr"] < rep.bound
        assert abs(means[64] / means[8] - 1) < 0.2
        assert controls[64] / controls[8] == pytest.approx(8.0, rel=0.1)


class TestWeightRadius:
    def test_single_net_point_degenerate(self):
        # gap is identically zero: the sandwich reduces to the additive
        # constants and can never be violated on the lower side
        man = circle()
        mu = circle_measure(man, 100, 18)
        net = eps_net(mu.support[:1], 0.5)
        rep = check_weight_radius(man, mu, net, 0.1, 0.05, 200, 19)
        assert rep.violation_rate <= rep.violation_threshold()

    def test_circle_violation_rate(self):
        man = circle()
        mu = circle_measure(man, 300, 20)
        net = eps_net(mu.support, 0.3)
        rep = check_weight_radius(man, mu, net, 0.05, 0.05, 600, 21)
        assert rep.violation_rate <= rep.violation_threshold()
        assert rep.extras["lower_le_upper"]


class TestDriftFreeze:
    def test_point_mass_statistic_vanishes(self):
        man = circle()
        mu = FiniteMeasure.point_mass(man.embed(np.array([1.0, 0.0])))
        rep = check_drift_freeze(man, mu, 0.2, [1e-5, 1e-2], 200, 22)
        assert max(rep.extras["means"]) < 1e-20

    def test_two_point_slope(self):
        man = circle(4, seed=23)
        pts = man.embed(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        mu = FiniteMeasure.from_points(pts)
        rep = check_drift_freeze(man, mu, 0.2, [1e-3, 1e-2, 1e-1], 1500, 24)
        assert 0.8 <= rep.extras["slope"] <= 1.3

    def test_continuity_at_tiny_gap(self):
        man = circle()
        mu = circle_measure(man, 100, 25)
        rep = check_drift_freeze(man, mu, 0.2, [1e-5], 300, 26)
        assert rep.extras["means"][0] < 1e-3

    def test_gap_range_enforced(self):
        man = circle()
        mu = circle_measure(man, 50, 27)
        with pytest.raises(ValueError):
            check_drift_freeze(man, mu, 0.2, [0.3], 10, 0)


class TestSurfaceGP:
    def test_exact_surface_statistic_zero(self):
        # an affine manifold is exactly representable by affine charts, so
        # every displacement (and hence the statistic) vanishes
        man = make_manifold(("poly_graph", [[2]], [[0.0]], 0.3), 6, seed=28)
        mu = sample_measure(man, None, 80, 29)
        surf = fit_surface(mu.support, 1, 2.0, EpsConfig(eps_n=0.2))
        rep = check_surface_gp(surf, man, 0.05, 200, 30, n_eval=100)
        assert np.abs(rep.stats).max() < 1e-6

    def test_circle_fit_violation_rate_and_correlation(self):
        man = circle()
        mu = circle_measure(man, 400, 31)
        surf = fit_surface(mu.support, 1, 2.0, EpsConfig(C=4.0))
        rep = check_surface_gp(surf, man, 0.05, 600, 32)
        assert rep.violation_rate <= rep.violation_threshold()
        assert rep.extras["corr_inner_vs_disp"] > 0.5
        assert rep.extras["skipped_uncovered"] < 50


class TestReproducibility:
    def test_reports_bitwise_reproducible(self):
        man = circle()
        mu = circle_measure(man, 200, 33)
        a = check_denoiser_variance(man, mu, 0.05, 150, 34)
        b = check_denoiser_variance(man, mu, 0.05, 150, 34)
        assert np.array_equal(a.stats, b.stats)
        assert a.summary() == b.summary()
