import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import best_zigzag_bruteforce, counterexample
from zigzag import (ConvergenceError, LinearDemand, ModelConfig, RateTable, ReducedCosts, ValidationError,
                    ZigzagPath, dynamic_price_on_path, is_zigzag, optimize_static_price,
                    relative_value_iteration, solve_greedy_dynamic, static_objective, zigzag_dp)
from zigzag.chain import static_value_curve
from zigzag.solvers import zigzag_tables


def small_instance(L=4, M=6, seed=0):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(0.02, 0.2, 3)
    l = np.arange(L + 1)[:, None]
    m = np.arange(M + 1)[None, :]
    mu = a + b * np.sqrt(m + 1.0) + c * np.sqrt(L - l + 1.0)
    cfg = ModelConfig(L, 3.0, M, 2.0, 1.0, 2.0)
    return cfg, RateTable(mu), ReducedCosts(0.3, 0.3, 2.0), LinearDemand(3.0, 2.0)


class TestStaticPrice:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 8))
    def test_beats_dense_scan(self, seed, cutoff):
        cfg, rates, costs, curve = small_instance(seed=seed)
        path = ZigzagPath([(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 2), (4, 2), (4, 3)])
        lam, val = optimize_static_price(path, cutoff, rates, costs, curve, cfg.t0)
        grid = np.linspace(0, curve.Lambda, 20_001)
        scan = static_value_curve(path, cutoff, rates, costs, curve, cfg.t0, grid).max()
        assert val >= scan - 1e-12
        assert val == pytest.approx(static_objective(lam, path, cutoff, rates, costs, curve, cfg.t0), abs=1e-12)

    def test_bad_cutoff(self):
        cfg, rates, costs, curve = small_instance()
        with pytest.raises(ValidationError):
            optimize_static_price(ZigzagPath([(0, 0), (1, 0)]), 3, rates, costs, curve, cfg.t0)


class TestDP:
    def test_tables_invariants(self):
        cfg, rates, costs, curve = small_instance()
        tab = zigzag_tables(rates, costs, curve, cfg)
        assert np.all(tab.R[0] == 0)
        for l in range(1, cfg.L + 1):
            for m in range(cfg.M + 1):
                pl, pm = tab.parent[l, m]
                assert (pl, pm) in ((l - 1, m), (l, m - 1))
                assert tab.R[l, m] >= tab.R[pl, pm] - 1e-12
                # the stored value is realised by a prefix of the stored path
                path = tab.path(l, m)
                rl, rm = tab.realizer[l, m]
                if (rl, rm) in path.states:
                    cut = path.states.index((rl, rm)) + 1
                    v = static_objective(tab.lam[l, m], path, cut, rates, costs, curve, cfg.t0)
                    assert v == pytest.approx(tab.R[l, m], abs=1e-9)

    @pytest.mark.parametrize("pricing", ["static", "dynamic"])
    def test_result(self, pricing):
        cfg, rates, costs, curve = small_instance()
        res = zigzag_dp(rates, costs, curve, cfg, pricing=pricing)
        assert is_zigzag(res.dispatch)
        assert res.path.states[-1] == (cfg.L, cfg.M)
        assert res.method == f"zigzag-{pricing}"
        if pricing == "static":
            assert res.objective == pytest.approx(res.extras["static_objective"], abs=1e-9)
        d = res.to_dict()
        assert {"objective", "dispatch", "dispatch_overflow", "pricing", "path"} <= set(d)
        assert "wall_time" not in d and "wall_time" in res.to_dict(timing=True)

    def test_dynamic_beats_static(self):
        cfg, rates, costs, curve = small_instance(seed=4)
        sta = zigzag_dp(rates, costs, curve, cfg, pricing="static")
        dyn = zigzag_dp(rates, costs, curve, cfg, pricing="dynamic")
        assert dyn.objective >= sta.objective - 1e-9

    def test_mode_and_grid_checks(self):
        cfg, rates, costs, curve = small_instance()
        with pytest.raises(ValidationError):
            zigzag_dp(rates, costs, curve, cfg, pricing="surge")
        with pytest.raises(ValidationError):
            zigzag_dp(rates, costs, curve, cfg.with_M(9))
        bigger = zigzag_dp(RateTable(np.hstack([rates.mu, rates.mu[:, -1:]])), costs, curve, cfg)
        assert bigger.objective == pytest.approx(zigzag_dp(rates, costs, curve, cfg).objective)


class TestPathPricing:
    def test_dynamic_at_least_static(self):
        cfg, rates, costs, curve = small_instance(seed=2)
        path = ZigzagPath([(0, 0), (1, 0), (2, 0), (2, 1), (3, 1), (4, 1), (4, 2)])
        _, dyn = dynamic_price_on_path(path, rates, costs, curve, cfg.t0)
        _, sta = optimize_static_price(path, len(path), rates, costs, curve, cfg.t0)
        assert dyn >= sta - 1e-9

    def test_nonconvergence(self):
        cfg, rates, costs, curve = small_instance()
        path = ZigzagPath([(0, 0), (1, 0), (2, 0)])
        with pytest.raises(ConvergenceError):
            dynamic_price_on_path(path, rates, costs, curve, cfg.t0, max_iters=2)

    def test_brute_force_bounds_dp(self):
        cfg, rates, costs, curve = small_instance(L=3, M=3, seed=5)
        best, _ = best_zigzag_bruteforce(rates, costs, curve, cfg)
        dyn = zigzag_dp(rates, costs, curve, cfg)
        assert dyn.objective <= best + 1e-9


class TestValueIteration:
    def test_ordering(self):
        cfg, rates, costs, curve = small_instance(seed=1)
        vi = relative_value_iteration(rates, costs, curve, cfg)
        zz = zigzag_dp(rates, costs, curve, cfg)
        gr = solve_greedy_dynamic(rates, costs, curve, cfg)
        assert vi.converged
        assert vi.objective >= zz.objective - 1e-6
        assert zz.objective >= gr.objective - 1e-6
        assert vi.extras["gain"] == pytest.approx(vi.objective, abs=1e-6)

    def test_shift_invariance(self):
        cfg, rates, costs, curve = small_instance(seed=1)
        a = relative_value_iteration(rates, costs, curve, cfg)
        b = relative_value_iteration(rates, costs, curve, cfg, h0=np.full(rates.mu.shape, 17.0))
        assert a.objective == pytest.approx(b.objective, abs=1e-9)
        assert a.dispatch == b.dispatch

    def test_jacobi_matches_gauss_seidel(self):
        cfg, rates, costs, curve = small_instance(L=3, M=4, seed=3)
        a = relative_value_iteration(rates, costs, curve, cfg, sweep="jacobi")
        b = relative_value_iteration(rates, costs, curve, cfg, sweep="gauss_seidel")
        assert a.objective == pytest.approx(b.objective, abs=1e-7)

    def test_full_actions_no_worse(self):
        cfg, rates, costs, curve = small_instance(L=3, M=4, seed=3)
        a = relative_value_iteration(rates, costs, curve, cfg)
        b = relative_value_iteration(rates, costs, curve, cfg, action_mode="full")
        assert b.objective >= a.objective - 1e-7

    def test_limits(self):
        cfg, rates, costs, curve = small_instance()
        with pytest.raises(ConvergenceError):
            relative_value_iteration(rates, costs, curve, cfg, max_iters=3)
        part = relative_value_iteration(rates, costs, curve, cfg, wall_cap=0.0)
        assert part.partial and not part.converged
        with pytest.raises(ValidationError):
            relative_value_iteration(rates, costs, curve, cfg, action_mode="many")
        with pytest.raises(ValidationError):
            relative_value_iteration(rates, costs, curve, cfg, sweep="random")

    def test_counterexample_sub_optimality(self):
        cfg, rates, costs, curve = counterexample()
        vi = relative_value_iteration(rates, costs, curve, cfg)
        best, _ = best_zigzag_bruteforce(rates, costs, curve, cfg)
        assert vi.objective == pytest.approx(1.79113, abs=1e-5)
        assert best == pytest.approx(1.79055, abs=1e-5)
