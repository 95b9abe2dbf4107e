import numpy as np
import pytest

from helpers import P0, T0
from zigzag import (LinearDemand, ModelConfig, PricingPolicy, RawCosts, ValidationError,
                    ZigzagPath, greedy_policy, reduce_costs)
from zigzag.sim import (ConstantRadius, CountZigzag, SimConfig, TwoRadius, calibrate_constant_radius,
                        exogenous_streams, extend_pricing_by_row, robustness_sweep, simulate, tune_two_radius)

CFG = ModelConfig(L=10, Lambda=4.0, M=8, t0=T0, p0=P0, p_max=2.0)
CURVE = LinearDemand(4.0, 2.0)
with pytest.warns(UserWarning):
    RAW = RawCosts(0.5, 0.2, 0.2, 0.5)
SIM = SimConfig(CFG, T=600.0, seed=3, warmup=50.0)
PRICE = PricingPolicy.constant(CFG.shape, 2.0, 4.0)


def run(rule=ConstantRadius(3.0), pricing=PRICE, costs=RAW, sim=SIM, **kw):
    return simulate(sim, rule, pricing, costs, CURVE, **kw)


class TestEngine:
    def test_no_demand(self):
        res = run(pricing=PricingPolicy(np.zeros(CFG.shape)))
        assert res.report.objective == 0.0
        assert res.raw_objective == pytest.approx(-RAW.w_o_d * CFG.L)
        assert res.counts["accepted"] == 0

    def test_deterministic(self):
        a, b = run(), run()
        assert a.report == b.report
        assert np.array_equal(a.occupancy, b.occupancy)
        assert run(sim=SIM.replace(seed=4)).report != a.report

    def test_two_radius_without_spread_is_constant_radius(self):
        a = run(ConstantRadius(2.5))
        b = run(TwoRadius(2.5, 2.5, greedy_policy(CFG)))
        assert a.report == b.report
        assert a.counts == b.counts

    def test_raw_and_reduced_objectives(self):
        res = run()
        assert res.raw_objective == pytest.approx(res.report.objective - RAW.w_o_d * CFG.L, rel=1e-9)
        red = run(costs=reduce_costs(RAW, CFG.p0, CFG.t0))
        assert red.raw_objective is None
        assert red.report.objective == pytest.approx(res.report.objective, rel=1e-12)

    def test_conservation(self):
        c = run(log_events=True).counts
        assert c["arrivals"] == c["accepted"] + c["declined"] + c["blocked"]
        assert c["accepted"] == c["dispatched"] + c["queue_at_end"]
        assert c["dispatched"] == c["completed"] + c["busy_at_end"]
        assert c["completed"] <= c["picked_up"] <= c["dispatched"]

    def test_event_log_matches_counts(self):
        res = run(log_events=True)
        names = {1: "accepted", 2: "declined", 3: "blocked", 4: "dispatched", 5: "picked_up", 6: "completed"}
        ev = res.events
        assert np.all(np.diff(ev.time) >= 0)
        for code, key in names.items():
            assert int((ev.event == code).sum()) == res.counts[key]
        assert int((ev.event <= 3).sum()) == res.counts["arrivals"]

    def test_samples_per_dispatch(self):
        res = run()
        assert res.samples.n == res.counts["dispatched_after_warmup"]
        rows = res.samples.rows()
        assert np.all(rows[:, 2] > 0)

    def test_greedy_count_rule_never_mixes_idle_and_waiting(self):
        res = run(CountZigzag(greedy_policy(CFG)))
        occ = res.occupancy
        assert occ[: CFG.L, 1:].sum() == 0.0
        assert occ.sum() == pytest.approx(1.0)

    def test_decline_rate_matches_price(self):
        res = run(sim=SIM.replace(T=3000.0), pricing=PricingPolicy.constant(CFG.shape, 1.0, 4.0))
        c = res.counts
        # quoting the price for rate 1 out of 4 admits a quarter of the riders who see it
        assert c["accepted"] / (c["accepted"] + c["declined"]) == pytest.approx(0.25, abs=0.02)

    def test_exogenous_independent_of_rule(self):
        exo = exogenous_streams(SIM, CURVE)
        a = run(ConstantRadius(1.0), exo=exo)
        b = run(ConstantRadius(6.0))
        assert a.counts["arrivals"] == b.counts["arrivals"] == len(exo.arrival_t)

    def test_validation(self):
        with pytest.raises(ValidationError):
            run(pricing=PricingPolicy.constant((3, 3), 1.0))
        with pytest.raises(ValidationError):
            TwoRadius(2.0, 1.0, greedy_policy(CFG))
        with pytest.raises(ValidationError):
            ConstantRadius(-1.0)
        with pytest.raises(ValidationError):
            SimConfig(CFG, T=10.0, warmup=20.0)
        with pytest.raises(ValidationError):
            run(CountZigzag(greedy_policy(CFG.with_M(3))))


class TestExperiments:
    def test_extend_pricing_by_row(self):
        path = ZigzagPath([(0, 0), (1, 0), (1, 1), (1, 2), (2, 2)])
        p = PricingPolicy.on_path(path, [1.0, 2.0, 3.0, 4.0, 0.0], (4, 5))
        ext = extend_pricing_by_row(p, path)
        assert ext(1, 4) == 4.0
        assert ext(0, 3) == 1.0
        # terminal state stays blocked; its row neighbours inherit from it only off the path
        assert ext(2, 2) == 0.0
        assert ext(2, 4) == 0.0
        assert ext(3, 2) == 0.0

    def test_calibrate_and_tune(self):
        sim = SIM.replace(T=300.0)
        cal = calibrate_constant_radius(sim, RAW, CURVE, r_init=2.0, lam_init=2.0, step=0.5, max_rounds=3)
        assert cal.trace[0][0] == 0
        assert cal.objective == pytest.approx(max(t[3] for t in cal.trace))
        tr = tune_two_radius(sim, greedy_policy(CFG), PRICE, cal.r, RAW, CURVE, step=0.5)
        assert tr.delta >= 0
        base = simulate(sim, ConstantRadius(cal.r), PRICE, RAW, CURVE).report.objective
        assert tr.result.report.objective >= base - 1e-9

    def test_sweep_rows(self):
        pol = {"a": (ConstantRadius(2.0), PRICE), "b": (ConstantRadius(4.0), PRICE)}
        rows = robustness_sweep(SIM.replace(T=200.0), pol, [3.0, 5.0], RAW, CURVE, seeds=(0, 1))
        assert [(r[0], r[1]) for r in rows] == [(3.0, "a"), (3.0, "b"), (5.0, "a"), (5.0, "b")]
        assert all(r[3] >= 0 for r in rows)
