"""Shared fixtures data and small oracles for the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from zigzag import (DemandCurve, DispatchPolicy, ModelConfig, PricingPolicy, RateTable, ReducedCosts, ZigzagPath,
                    dynamic_price_on_path, mean_trip_time)

T0 = mean_trip_time()
P0 = 5.0 - 0.2 * T0


def small_config(M: int = 10) -> ModelConfig:
    return ModelConfig(L=20, Lambda=8.0, M=M, t0=T0, p0=P0, p_max=2.0)


def city_config() -> ModelConfig:
    return ModelConfig(L=100, Lambda=40.0, M=50, t0=T0, p0=P0, p_max=2.0)


# objective values per (c_d, c_r): value iteration, greedy dynamic, zigzag dynamic, zigzag static
SMALL_TABLE = {
    (0.5, 0.5): (20.54, 18.32, 20.54, 20.11),
    (0.5, 0.75): (19.67, 17.53, 19.67, 19.21),
    (0.5, 1.0): (19.05, 17.25, 19.05, 18.53),
    (0.75, 0.5): (16.36, 13.61, 16.36, 16.04),
    (0.75, 0.75): (15.57, 13.46, 15.57, 15.24),
    (0.75, 1.0): (15.02, 13.45, 15.02, 14.65),
    (1.0, 0.5): (12.44, 10.06, 12.43, 12.23),
    (1.0, 0.75): (11.74, 10.06, 11.74, 11.53),
    (1.0, 1.0): (11.26, 10.06, 11.26, 11.03),
}

# simulated objectives per (c_d, c_r): constant radius, zigzag static, zigzag dynamic
CITY_TABLE = {
    (0.5, 0.5): (114.04, 113.01, 113.49),
    (0.5, 0.75): (111.25, 110.55, 111.18),
    (0.5, 1.0): (109.45, 108.89, 109.68),
    (0.75, 0.5): (90.91, 90.67, 90.96),
    (0.75, 0.75): (89.12, 88.70, 89.01),
    (0.75, 1.0): (87.85, 87.38, 87.78),
    (1.0, 0.5): (69.68, 69.43, 69.55),
    (1.0, 0.75): (68.24, 67.92, 68.12),
    (1.0, 1.0): (67.47, 67.03, 67.20),
}

# two-radius objectives per (c_d, c_r): constant radius, two-radius static, two-radius dynamic
TWO_RADIUS_TABLE = {
    (0.5, 0.5): (114.04, 113.69, 113.85),
    (0.5, 0.75): (111.25, 111.37, 111.70),
    (0.5, 1.0): (109.45, 109.82, 110.31),
    (0.75, 0.5): (90.91, 91.21, 91.28),
    (0.75, 0.75): (89.12, 89.40, 89.65),
    (0.75, 1.0): (87.85, 88.20, 88.59),
    (1.0, 0.5): (69.68, 69.96, 70.00),
    (1.0, 0.75): (68.24, 68.58, 68.72),
    (1.0, 1.0): (67.47, 67.74, 67.97),
}

REFERENCE_FIT = (3.839, -0.274, -0.192)


@dataclass(frozen=True)
class ConstantPriceCurve(DemandCurve):
    """Every rider pays ``p_max`` per unit distance; the platform only chooses how many to admit."""

    Lambda: float
    p_max: float

    def price(self, lam):
        return self.p_max + 0.0 * np.asarray(lam, dtype=float)

    def rate(self, p):
        raise NotImplementedError("a constant price has no inverse")

    def best_rate(self, base, t0):
        base = np.asarray(base, dtype=float)
        val = self.Lambda * (base + t0 * self.p_max)
        return np.where(val > 0, self.Lambda, 0.0), np.maximum(val, 0.0)


def counterexample(M: int = 6):
    """Three drivers; per-driver completion rate 1 with at most one waiting rider, 2 otherwise."""
    mu = np.ones((4, M + 1))
    mu[:, 2:] = 2.0
    mu[0] = 0.0
    cfg = ModelConfig(L=3, Lambda=2.0, M=M, t0=1.0, p0=0.0, p_max=1.0)
    return cfg, RateTable(mu), ReducedCosts(0.1, 0.1, 0.0), ConstantPriceCurve(2.0, 1.0)


COUNTEREXAMPLE_POLICY = np.array([
    [0, 1, 1, 1],
    [0, 1, 1, 1],
    [0, 1, 0, 1],
    [0, 0, 0, 0],
])


def all_paths(L: int, M: int):
    """Every zigzag path with at least two states on the (L+1) x (M+1) grid."""
    def grow(states):
        if len(states) > 1:
            yield list(states)
        l, m = states[-1]
        if m < M:
            yield from grow(states + [(l, m + 1)])
        if l < L:
            yield from grow(states + [(l + 1, m)])
    for m1 in range(M + 1):
        yield from grow([(0, m1)])


def best_zigzag_bruteforce(rates, costs, curve, cfg):
    best, arg = -np.inf, None
    for states in all_paths(cfg.L, cfg.M):
        _, obj = dynamic_price_on_path(ZigzagPath(states), rates, costs, curve, cfg.t0)
        if obj > best:
            best, arg = obj, states
    return best, arg


def random_zigzag(rng: np.random.Generator, L: int, M: int) -> DispatchPolicy:
    """Random zigzag policy: row ``l`` dispatches right of ``tau[l]``, with ``tau`` nondecreasing in ``l``.

    ``tau = M + 1`` also blocks the cap, ``tau = M`` admits there with a dispatch.
    """
    tau = np.sort(rng.integers(0, M + 2, size=L))
    grid = np.zeros((L + 1, M + 1), dtype=np.int8)
    over = np.zeros(L + 1, dtype=np.int8)
    cols = np.arange(M + 1)
    for l in range(L):
        grid[l] = cols > tau[l]
        over[l] = 1 if tau[l] <= M else 0
    return DispatchPolicy(grid, over)


def random_instance(seed, L_max=6, M_max=12):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, L_max + 1))
    M = int(rng.integers(0, M_max + 1))
    pol = random_zigzag(rng, L, M)
    mu = rng.uniform(0.05, 1.0, size=(L + 1, M + 1))
    lam = rng.uniform(0.1, 5.0, size=(L + 1, M + 1))
    return pol, PricingPolicy(lam, 5.0), RateTable(mu)


# criterion number -> (passed, name, detail); printed in the terminal summary
ACCEPTANCE: dict = {}
