import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from helpers import COUNTEREXAMPLE_POLICY, counterexample
from zigzag import (LinearDemand, ModelConfig, PowerLawFit, RateTable, ReducedCosts, StateType,
                    ValidationError, check_assumption2, classify_state, closed_form_zigzag, fit_powerlaw,
                    greedy_policy, is_zigzag, m_bound, mc_estimate_rates, mean_trip_time, powerlaw_rate_table)
from zigzag.rates import DataError, InsufficientDataError, pickup_population, type_grid


def concave_table(L, M, a, b, c):
    l = np.arange(L + 1)[:, None]
    m = np.arange(M + 1)[None, :]
    return RateTable(a + b * np.sqrt(m + 1.0) + c * np.sqrt(L - l + 1.0))


class TestTripTime:
    def test_value(self):
        assert mean_trip_time() == pytest.approx(5.2140543, abs=1e-6)

    def test_against_quadrature(self):
        # difference of two uniforms on [0, 1] has density 2(1 - |u|); fold onto the positive quadrant
        val, _ = integrate.dblquad(lambda v, u: math.hypot(u, v) * 4 * (1 - u) * (1 - v), 0, 1, 0, 1,
                                   epsabs=1e-12, epsrel=1e-12)
        assert mean_trip_time(side=1.0) == pytest.approx(val, rel=1e-9)

    def test_scaling(self):
        assert mean_trip_time(20.0, 2.0) == pytest.approx(mean_trip_time())


class TestMonteCarlo:
    def test_single_pair_virtual(self):
        cfg = ModelConfig(2, 1.0, 1, mean_trip_time(), 0.0, 1.0)
        r = mc_estimate_rates(cfg, 100_000, seed=7, convention="virtual")
        # one driver, one rider: mean distance is the mean trip time
        assert r.mu[1, 1] == pytest.approx(0.096, abs=5e-4)
        assert r.pickup[1, 1] == pytest.approx(mean_trip_time(), abs=4 * r.pickup_se[1, 1])

    def test_populations(self):
        assert pickup_population(5, 2, 3) == (4, 4)
        assert pickup_population(5, 5, 0, "virtual") == (1, 1)
        assert pickup_population(5, 1, 2, "virtual") == (4, 2)
        with pytest.raises(ValidationError):
            pickup_population(5, 1, 1, "other")

    def test_deterministic_and_cellwise(self):
        cfg = ModelConfig(3, 1.0, 4, 5.0, 0.0, 1.0)
        a = mc_estimate_rates(cfg, 500, seed=3)
        b = mc_estimate_rates(cfg, 500, seed=3)
        small = mc_estimate_rates(cfg.with_M(2), 500, seed=3)
        assert a == b
        assert np.array_equal(a.mu[:, :3], small.mu)
        assert not np.array_equal(a.mu, mc_estimate_rates(cfg, 500, seed=4).mu)

    def test_more_candidates_shorter_pickup(self):
        cfg = ModelConfig(4, 1.0, 4, 5.0, 0.0, 1.0)
        r = mc_estimate_rates(cfg, 20_000, seed=11)
        # fewer busy drivers or more riders: more candidate pairs
        assert np.all(np.diff(r.pickup, axis=0) > 0)
        assert np.all(np.diff(r.pickup, axis=1) < 0)

    def test_bad_samples(self):
        with pytest.raises(ValidationError):
            mc_estimate_rates(ModelConfig(1, 1.0, 1, 1.0, 0.0, 1.0), 0, seed=0)


class TestRateTable:
    def test_validation(self):
        with pytest.raises(ValidationError):
            RateTable(np.array([[0.0, 0.0], [-1.0, 1.0]]))
        with pytest.raises(ValidationError):
            RateTable(np.array([[0.0, np.nan], [1.0, 1.0]]))

    def test_truncated(self):
        r = concave_table(3, 5, 0.1, 0.1, 0.1)
        assert r.truncated(2).mu.shape == (4, 3)


class TestClassify:
    def test_counterexample_types(self):
        _, rates, _, _ = counterexample()
        assert classify_state(rates, (2, 2)) is StateType.TYPE1
        assert classify_state(rates, (1, 1)) is StateType.TYPE2

    def test_boundary(self):
        _, rates, _, _ = counterexample()
        for l in range(4):
            assert classify_state(rates, (l, 0)) is StateType.TYPE1
        for m in range(7):
            assert classify_state(rates, (3, m)) is StateType.TYPE1

    def test_grid_matches_pointwise(self):
        r = concave_table(5, 7, 0.05, 0.02, 0.03)
        g = type_grid(r)
        for l in range(6):
            for m in range(8):
                assert g[l, m] == classify_state(r, (l, m)).value

    def test_constant_rates_give_greedy(self):
        cfg = ModelConfig(4, 1.0, 6, 1.0, 0.0, 1.0)
        pol = closed_form_zigzag(RateTable(np.full((5, 7), 0.3)))
        assert np.array_equal(pol.grid, greedy_policy(cfg).grid)


class TestAssumption:
    def test_counterexample_fails(self):
        _, rates, _, _ = counterexample()
        v = check_assumption2(rates)
        assert v
        assert all(str(x) for x in v)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 15), st.floats(0.01, 1), st.floats(0.0, 1), st.floats(0.0, 1))
    def test_concave_tables_pass_and_give_zigzag(self, L, M, a, b, c):
        r = concave_table(L, M, a, b, c)
        assert check_assumption2(r) == []
        assert is_zigzag(closed_form_zigzag(r))

    def test_counterexample_closed_form(self):
        _, rates, _, _ = counterexample()
        with pytest.warns(UserWarning):
            pol = closed_form_zigzag(rates)
        assert np.array_equal(pol.grid[:, :4], COUNTEREXAMPLE_POLICY)
        assert np.all(pol.grid[:, 4:] == pol.grid[:, 3:4])

    @given(st.floats(0.01, 100))
    def test_scale_invariance(self, k):
        r = concave_table(6, 8, 0.05, 0.04, 0.03)
        a = closed_form_zigzag(r)
        b = closed_form_zigzag(RateTable(r.mu * k))
        assert a == b


class TestBound:
    def test_example(self):
        rates = RateTable(np.full((21, 5), 0.15))
        assert m_bound(rates, ReducedCosts(0.5, 0.5, 1.0), LinearDemand(8.0, 2.0), 20) == 12

    @given(st.floats(0.01, 1), st.floats(0.1, 3))
    def test_monotone_in_cost(self, mu, c_r):
        rates = RateTable(np.full((11, 3), mu))
        curve = LinearDemand(8.0, 2.0)
        lo = m_bound(rates, ReducedCosts(0.5, c_r, 1.0), curve, 10)
        hi = m_bound(rates, ReducedCosts(0.5, c_r / 2, 1.0), curve, 10)
        assert hi >= lo >= 0


def synthetic_samples(C, a1, a2, L, M):
    rows = []
    for l in range(L + 1):
        for m in range(M + 1):
            rows.append((l, m, C * (m + 1) ** a1 * (L - l + 1) ** a2, 50))
    return np.array(rows, dtype=float)


class TestFit:
    def test_noiseless_recovery(self):
        fit = fit_powerlaw(synthetic_samples(4.0, -0.3, -0.2, 30, 20), 30)
        assert abs(fit.C - 4.0) < 1e-10
        assert abs(fit.alpha1 + 0.3) < 1e-10
        assert abs(fit.alpha2 + 0.2) < 1e-10

    def test_confidence_interval_coverage(self):
        rng = np.random.default_rng(12)
        base = synthetic_samples(4.0, -0.3, -0.2, 10, 10)
        hits = 0
        reps = 400
        for _ in range(reps):
            s = base.copy()
            s[:, 2] *= np.exp(rng.normal(0, 0.1, len(s)))
            f = fit_powerlaw(s, 10)
            hits += abs(f.alpha1 + 0.3) <= 1.96 * f.se_alpha1
        # binomial(400, 0.95) has standard deviation about 0.011
        assert 0.91 <= hits / reps <= 0.99

    def test_min_count_filter(self):
        s = synthetic_samples(4.0, -0.3, -0.2, 5, 5)
        s[:3, 3] = 2
        s[:3, 2] = 100.0
        f = fit_powerlaw(s, 5, min_count=10)
        assert f.n_samples == len(s) - 3
        assert f.alpha1 == pytest.approx(-0.3)

    def test_errors(self):
        with pytest.raises(InsufficientDataError):
            fit_powerlaw([], 5)
        with pytest.raises(InsufficientDataError):
            fit_powerlaw([(0, 0, 1.0, 50), (1, 1, 1.0, 50)], 5)
        with pytest.raises(InsufficientDataError):
            fit_powerlaw([(0, 2, 1.0, 50), (1, 2, 1.1, 50), (2, 2, 1.2, 50), (3, 2, 1.2, 50)], 5)
        bad = synthetic_samples(4.0, -0.3, -0.2, 3, 3)
        bad[0, 2] = 0.0
        with pytest.raises(DataError):
            fit_powerlaw(bad, 3)
        with pytest.raises(DataError):
            fit_powerlaw(synthetic_samples(4.0, -0.3, -0.2, 3, 3), 2)

    def test_json_round_trip(self):
        f = fit_powerlaw(synthetic_samples(4.0, -0.3, -0.2, 5, 5), 5)
        g = PowerLawFit.from_json(f.to_json())
        assert g == f
        assert set(json.loads(f.to_json())) == {"coefficients", "stderr", "n", "L"}

    def test_rate_table(self):
        fit = PowerLawFit(4.0, -0.3, -0.2, 0, 0, 0, 0, 0, 10)
        cfg = ModelConfig(10, 5.0, 4, 2.0, 0.0, 1.0)
        r = powerlaw_rate_table(fit, cfg)
        assert r.mu[3, 2] == pytest.approx(1.0 / (4.0 * 3 ** -0.3 * 8 ** -0.2 + 2.0))
        assert np.allclose(r.pickup, fit.eta(np.arange(11)[:, None], np.arange(5)[None, :]))
