"""Simulation studies: pickup corpora, radius calibration, two-radius tuning, demand sweeps."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..model import DemandCurve, DispatchPolicy, PricingPolicy, ZigzagPath
from ..rates import InsufficientDataError
from .engine import ConstantRadius, SimConfig, SimResult, TwoRadius, simulate

DEFAULT_RADII = tuple(0.5 * k for k in range(1, 25))


def collect_pickup_samples(sim: SimConfig, costs, curve: DemandCurve, radii=DEFAULT_RADII,
                           lam: float = 12.0, min_count: int = 10,
                           attribution: str = "pre_dispatch") -> np.ndarray:
    """Pooled ``(l, m, avg_pickup, count)`` rows from constant-radius runs at a fixed rate.

    Run ``i`` uses seed ``sim.seed + i``. States with fewer than
    ``min_count`` samples are dropped.
    """
    pricing = PricingPolicy.constant(sim.cfg.shape, lam, curve.Lambda)
    pooled = None
    for i, r in enumerate(radii):
        res = simulate(sim.replace(seed=sim.seed + i), ConstantRadius(r), pricing, costs, curve,
                       attribution=attribution)
        pooled = res.samples if pooled is None else pooled + res.samples
    rows = pooled.rows(min_count) if pooled is not None else np.zeros((0, 4))
    if len(rows) == 0:
        raise InsufficientDataError("no state collected enough pickup samples")
    return rows


class _Evaluator:
    """Memoised objective on a fixed seed, so every probe sees the same randomness."""

    def __init__(self, sim, costs, curve, make):
        self.sim, self.costs, self.curve, self.make = sim, costs, curve, make
        self.cache: dict = {}

    def __call__(self, *args) -> float:
        key = tuple(round(float(a), 9) for a in args)
        if key not in self.cache:
            rule, pricing = self.make(*key)
            self.cache[key] = simulate(self.sim, rule, pricing, self.costs, self.curve).report.objective
        return self.cache[key]


def _line_search(f, x0: float, step: float, lo: float, hi: float) -> tuple[float, float]:
    """Walk from ``x0`` in steps of ``step`` in the improving direction while it improves."""
    best_x, best_v = x0, f(x0)
    for direction in (1.0, -1.0):
        moved = False
        x = best_x
        while True:
            nx = round(x + direction * step, 9)
            if nx < lo - 1e-12 or nx > hi + 1e-12:
                break
            v = f(nx)
            if v > best_v:
                best_x, best_v, x, moved = nx, v, nx, True
            else:
                break
        if moved:
            break
    return best_x, best_v


@dataclass
class CalibrationResult:
    r: float
    lam: float
    objective: float
    trace: list = field(default_factory=list)
    converged: bool = True


def calibrate_constant_radius(sim: SimConfig, costs, curve: DemandCurve, r_init: float = 2.0,
                              lam_init: float = 12.0, step: float = 0.2,
                              max_rounds: int = 20) -> CalibrationResult:
    """Coordinate ascent over (radius, static rate) on a common seed.

    Each round line-searches the radius with the rate fixed, then the rate
    with the radius fixed; it stops once both moved by at most ``step``.
    """
    shape = sim.cfg.shape
    f = _Evaluator(sim, costs, curve,
                   lambda r, lam: (ConstantRadius(r), PricingPolicy.constant(shape, lam, curve.Lambda)))
    r, lam = float(r_init), float(lam_init)
    trace = [(0, r, lam, f(r, lam))]
    r_max = sim.side * math.sqrt(2.0)
    converged = False
    for rnd in range(1, max_rounds + 1):
        r_new, _ = _line_search(lambda x: f(x, lam), r, step, 0.0, r_max)
        lam_new, v = _line_search(lambda x: f(r_new, x), lam, step, 0.0, curve.Lambda)
        trace.append((rnd, r_new, lam_new, v))
        done = abs(r_new - r) <= step + 1e-9 and abs(lam_new - lam) <= step + 1e-9
        r, lam = r_new, lam_new
        if done:
            converged = True
            break
    if not converged:
        warnings.warn("radius calibration hit the round limit; returning the best point seen", stacklevel=2)
        best = max(f.cache.items(), key=lambda kv: kv[1])
        r, lam = best[0]
    return CalibrationResult(r=r, lam=lam, objective=f(r, lam), trace=trace, converged=converged)


def extend_pricing_by_row(pricing: PricingPolicy, path: ZigzagPath) -> PricingPolicy:
    """Give every off-path state the rate of the nearest path state in the same row.

    Rows the path never visits take the rate of the closest path state in
    Manhattan distance. Ties go to the smaller queue length.
    """
    lam = np.array(pricing.lam, dtype=float)
    L1, M1 = lam.shape
    ls, ms = path.ls, path.ms
    # the terminal state blocks arrivals on the path; off the path it inherits its row neighbour
    along = np.array([lam[l, m] for l, m in path.states])
    if len(along) > 1:
        along[-1] = along[-2] if ls[-1] == ls[-2] else along[-1]
    on = set(path.states)
    out = lam.copy()
    for l in range(L1):
        for m in range(M1):
            if (l, m) in on:
                continue
            same = np.nonzero(ls == l)[0]
            if len(same):
                k = same[np.argmin(np.abs(ms[same] - m))]
            else:
                dist = np.abs(ls - l) + np.abs(ms - m)
                k = int(np.argmin(dist))
            out[l, m] = along[k]
    return PricingPolicy(out)


@dataclass
class TwoRadiusResult:
    delta: float
    result: SimResult
    trace: list = field(default_factory=list)


def tune_two_radius(sim: SimConfig, policy: DispatchPolicy, pricing: PricingPolicy, r_star: float, costs,
                    curve: DemandCurve, step: float = 0.2, max_delta: float | None = None) -> TwoRadiusResult:
    """Search the radius spread ``delta`` of the rule (r* - delta, r* + delta) from zero upward."""
    if max_delta is None:
        max_delta = r_star
    f = _Evaluator(sim, costs, curve,
                   lambda d: (TwoRadius(max(r_star - d, 0.0), r_star + d, policy), pricing))
    delta, _ = _line_search(f, 0.0, step, 0.0, max_delta)
    trace = sorted((k[0], v) for k, v in f.cache.items())
    rule = TwoRadius(max(r_star - delta, 0.0), r_star + delta, policy)
    return TwoRadiusResult(delta=delta, result=simulate(sim, rule, pricing, costs, curve), trace=trace)


def robustness_sweep(sim: SimConfig, policies: dict, Lambdas, costs, curve: DemandCurve,
                     seeds=(0, 1, 2, 3, 4)) -> list[tuple]:
    """Objective of fixed policies as the true arrival rate moves away from training.

    ``policies`` maps a name to ``(rule, pricing)``. Prices stay those quoted
    by the training ``curve``; only the arrival stream changes. Returns rows
    ``(Lambda, name, mean, stderr)`` sorted by rate then name.
    """
    rows = []
    for Lam in Lambdas:
        s = sim.replace(cfg=sim.cfg.with_Lambda(float(Lam)))
        for name in sorted(policies):
            rule, pricing = policies[name]
            vals = np.array([simulate(s.replace(seed=seed), rule, pricing, costs, curve).report.objective
                             for seed in seeds])
            se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
            rows.append((float(Lam), name, float(vals.mean()), se))
    return rows
