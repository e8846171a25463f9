"""Closed-form bound calculators, checked against independent re-encodings."""

import numpy as np
import pytest

from noisyfed.data import partition_iid
from noisyfed.fedavg import learning_rate
from noisyfed.theory import (TheoryParams, bcd_gap, bcd_witness, error_term_orders,
                             empirical_sigma2, sgd_error_bound, fedavg_error_bound,
                             zeta, zeta2, zeta3)


class TestZetas:
    def test_zeta_hand_value(self):
        assert zeta(0.0035, 1.0, 5, 50, 10) == pytest.approx(2.2858e-4, abs=1e-8)

    def test_zeta_full_participation_drops_sampling_term(self):
        eta, L, E, n = 0.002, 1.0, 5, 50
        expected = 8 * eta**2 * L**2 * E**2 * (2 * eta * L * E / 3)
        assert zeta(eta, L, E, n, n) == pytest.approx(expected, rel=1e-15)

    def test_zeta_vanishes_without_steps(self):
        assert zeta(0.0, 1.0, 5, 50, 10) == 0.0

    def test_zeta2_at_zero_rate(self):
        n, r = 50, 10
        assert zeta2(0.0, 1.0, 5, n, r) == pytest.approx(1 / r + (n - r) / (r * (n - 1)))

    def test_zeta3_at_zero_rate(self):
        assert zeta3(0.0, 1.0, 5, 50, 10) == pytest.approx(21.0)

    def test_small_cohorts_rejected(self):
        with pytest.raises(ValueError):
            zeta(0.1, 1.0, 5, 1, 1)


def v5a_params(**overrides):
    base = dict(n=50, r=10, E=5, K=100, gamma=18.0, L=1.0,
                eta=learning_rate(18.0, 1.0, 5, 10, 100),
                sigma2=0.0, f0=1.0, sum_U2=0.0, sum_N2=0.0)
    base.update(overrides)
    return TheoryParams(**base)


class TestTheorem2Bound:
    def test_noise_free_total_is_leading_term(self):
        report = fedavg_error_bound(v5a_params())
        assert report.term_uplink == 0.0
        assert report.term_sgd_variance == 0.0
        assert report.term_downlink == 0.0
        assert report.total == pytest.approx(144.0 / np.sqrt(1000.0), rel=1e-12)
        assert report.total == pytest.approx(4.55368, abs=1e-5)

    def test_decomposition_is_exact(self):
        report = fedavg_error_bound(v5a_params(sum_U2=7.0, sigma2=0.0))
        assert report.total - report.leading == pytest.approx(report.term_uplink, rel=1e-12)

    def test_downlink_term_is_linear_in_noise(self):
        a = fedavg_error_bound(v5a_params(sum_N2=3.0)).term_downlink
        b = fedavg_error_bound(v5a_params(sum_N2=6.0)).term_downlink
        assert b == pytest.approx(2 * a, rel=1e-12)

    def test_coefficients_match_recursion_constants(self):
        # the variance and downlink coefficients must equal the recursion
        # constants evaluated at the prescribed rate: two encodings, one value
        p = v5a_params(sigma2=1.0, sum_N2=1.0, sum_U2=1.0)
        report = fedavg_error_bound(p)
        assert report.term_sgd_variance == pytest.approx(
            4 * p.eta * p.L * zeta2(p.eta, p.L, p.E, p.n, p.r), rel=1e-12)
        assert report.term_downlink == pytest.approx(
            (4 * p.L**2 / (p.E * p.K)) * zeta3(p.eta, p.L, p.E, p.n, p.r), rel=1e-12)
        assert report.term_uplink == pytest.approx(
            4 * p.eta * p.L / (p.r * p.E * p.K), rel=1e-12)

    def test_warns_on_rate_mismatch_and_short_horizon(self):
        with pytest.warns(UserWarning):
            fedavg_error_bound(v5a_params(eta=0.01))
        with pytest.warns(UserWarning):
            fedavg_error_bound(TheoryParams(n=50, r=40, E=5, K=1, gamma=4.5, L=1.0,
                                        eta=learning_rate(4.5, 1.0, 5, 40, 1), f0=1.0))

    def test_bound_positivity_and_decomposition_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 100))
            r = int(rng.integers(1, n + 1))
            E = int(rng.integers(1, 20))
            K = int(rng.integers(1, 500))
            gamma = float(rng.uniform(4.1, 40.0))
            p = TheoryParams(n=n, r=r, E=E, K=K, gamma=gamma, L=float(rng.uniform(0.1, 4)),
                             eta=learning_rate(gamma, 1.0, E, r, K),
                             sigma2=float(rng.uniform(0, 10)), f0=float(rng.uniform(0, 10)),
                             sum_U2=float(rng.uniform(0, 10)), sum_N2=float(rng.uniform(0, 10)))
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = fedavg_error_bound(p)
            parts = [rep.leading, rep.term_uplink, rep.term_sgd_variance, rep.term_downlink]
            assert all(x >= 0 for x in parts)
            assert rep.total == pytest.approx(sum(parts), rel=1e-12)


class TestTheorem1Bound:
    def test_hand_value(self):
        rep = sgd_error_bound(eta=1.0, L=1.0, T=100, f0=1.0, f_star=0.0,
                             sigma2=1.0, sum_U2=0.0, sum_N2=0.0)
        assert rep.total == pytest.approx(1.02)

    def test_noise_free_reduces_to_optimality_gap_term(self):
        rep = sgd_error_bound(eta=0.1, L=1.0, T=50, f0=3.0, f_star=1.0,
                             sigma2=0.0, sum_U2=0.0, sum_N2=0.0)
        assert rep.total == pytest.approx(2 * 2.0 / (50 * 0.1))

    def test_coefficient_asymmetry(self):
        # halving the rate halves the uplink term and leaves downlink untouched
        a = sgd_error_bound(0.2, 1.0, 10, 1.0, 0.0, 0.0, sum_U2=5.0, sum_N2=5.0)
        b = sgd_error_bound(0.1, 1.0, 10, 1.0, 0.0, 0.0, sum_U2=5.0, sum_N2=5.0)
        assert b.term_uplink == pytest.approx(0.5 * a.term_uplink)
        assert b.term_downlink == pytest.approx(a.term_downlink)

    def test_warns_above_inverse_smoothness(self):
        with pytest.warns(UserWarning):
            sgd_error_bound(1.5, 1.0, 10, 1.0, 0.0, 0.0, 0.0, 0.0)


class TestCorollary2Orders:
    def test_exponent_arithmetic_in_r(self):
        s1, u1, d1 = error_term_orders(5, 10, 100)
        s2, u2, d2 = error_term_orders(5, 40, 100)
        assert u2 == pytest.approx(u1 / 2)
        assert s2 == pytest.approx(2 * s1)
        assert d2 == d1 == 1.0

    def test_exponent_arithmetic_in_e(self):
        _, u1, _ = error_term_orders(5, 10, 100)
        _, u2, _ = error_term_orders(10, 10, 100)
        assert u2 == pytest.approx(u1 / 4)

    def test_plug_in(self):
        _, u, _ = error_term_orders(1, 4, 4)
        assert u == pytest.approx(0.25)


class TestBcdCounterexample:
    def test_single_client_gap_is_zero(self):
        for w in (0.0, 1.0, -3.5, 100.0):
            assert bcd_gap(w, 1) == 0.0

    def test_plug_in(self):
        assert bcd_gap(2.0, 2) == pytest.approx(1.0)

    def test_witness_unbounded(self):
        for G in (1.0, 10.0, 100.0):
            w = bcd_witness(G, 2)
            assert bcd_gap(w, 2) > G * G


class TestEmpiricalSigma2:
    def _task(self, m=300, d=5, seed=0):
        from noisyfed.data import SyntheticRegressionSpec, generate_regression
        from noisyfed.model import LossModel, smoothness_constant

        ds = generate_regression(SyntheticRegressionSpec(m=m, d=d,
                                                         label_noise_variance=0.1), seed)
        model = LossModel("mse_linear", dim=d,
                          smoothness=smoothness_constant(LossModel("mse_linear", dim=d), ds.X))
        return ds, model, partition_iid(m, 3, seed)

    def test_full_batch_has_no_variance(self):
        ds, model, part = self._task()
        got = empirical_sigma2(model, ds, part, [np.zeros(5)], batch_size=100,
                               trials=3, seed=0)
        assert got < 1e-20

    def test_monte_carlo_stabilizes(self):
        ds, model, part = self._task()
        a = empirical_sigma2(model, ds, part, [np.zeros(5)], 10, trials=400, seed=1)
        b = empirical_sigma2(model, ds, part, [np.zeros(5)], 10, trials=800, seed=2)
        assert abs(a - b) / a < 0.10

    def test_scales_inversely_with_batch_size(self):
        ds, model, part = self._task()
        v5 = empirical_sigma2(model, ds, part, [np.zeros(5)], 5, trials=600, seed=3)
        v20 = empirical_sigma2(model, ds, part, [np.zeros(5)], 20, trials=600, seed=4)
        assert 3.0 < v5 / v20 < 5.5
