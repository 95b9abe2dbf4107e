"""Policy optimisation: zigzag DP, pricing on a path, value iteration, greedy baseline."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .chain import (ExpandedPolicy, _static_values, evaluate, expanded_stationary, objective,
                    path_stationary)
from .model import (DemandCurve, DispatchPolicy, ModelConfig, PricingPolicy, ReducedCosts,
                    ValidationError, ZigzagPath, greedy_policy, path_of_policy, policy_of_path)
from .rates import RateTable, StateType, classify_state


class ConvergenceError(RuntimeError):
    def __init__(self, msg, spans=()):
        super().__init__(msg)
        self.spans = list(spans)


@dataclass(eq=False)
class SolveResult:
    dispatch: DispatchPolicy
    pricing: PricingPolicy
    objective: float
    method: str
    iterations: int
    wall_time: float
    path: ZigzagPath | None = None
    converged: bool = True
    partial: bool = False
    extras: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "method": self.method,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "partial": self.partial,
            "path": None if self.path is None else [list(s) for s in self.path],
            "dispatch": self.dispatch.grid.tolist(),
            "dispatch_overflow": self.dispatch.overflow.tolist(),
            "pricing": self.pricing.lam.tolist(),
        }
        for k, v in self.extras.items():
            if isinstance(v, (int, float, str, bool)) or v is None:
                d[k] = v
        if timing:
            d["wall_time"] = self.wall_time
        return d


def _check_grid(rates: RateTable, cfg: ModelConfig) -> RateTable:
    if rates.L != cfg.L:
        raise ValidationError(f"rate table has L = {rates.L}, configuration has L = {cfg.L}")
    if rates.M < cfg.M:
        raise ValidationError(f"rate table has M = {rates.M} < configured M = {cfg.M}")
    return rates.truncated(cfg.M) if rates.M > cfg.M else rates


def m_bound(rates: RateTable, costs: ReducedCosts, curve: DemandCurve, L: int) -> int:
    """Queue length beyond which holding more riders never pays."""
    return max(0, math.ceil(L * rates.mu_bar * curve.p_max / costs.c_r))


def _best_static(death, cost, costs, curve, t0, n_grid=201):
    grid = np.linspace(0.0, curve.Lambda, n_grid)
    vals = _static_values(death, cost, costs.p0_eff, curve, t0, grid)
    k = int(np.argmax(vals))
    best_lam, best_val = float(grid[k]), float(vals[k])
    if len(death) == 1:
        return 0.0, best_val
    # zoom on the bracketing interval; each pass shrinks it tenfold
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    while b - a > 1e-10 * max(1.0, curve.Lambda):
        sub = np.linspace(a, b, 21)
        v = _static_values(death, cost, costs.p0_eff, curve, t0, sub)
        j = int(np.argmax(v))
        if v[j] > best_val:
            best_lam, best_val = float(sub[j]), float(v[j])
        a, b = sub[max(j - 1, 0)], sub[min(j + 1, 20)]
    return best_lam, best_val


def optimize_static_price(path: ZigzagPath, cutoff: int, rates: RateTable, costs: ReducedCosts,
                          curve: DemandCurve, t0: float, n_grid: int = 201) -> tuple[float, float]:
    """Best static rate on the path truncated at ``cutoff`` (grid scan, then repeated zoom on the best bracket)."""
    if not 1 <= cutoff <= len(path):
        raise ValidationError(f"cutoff {cutoff} outside [1, {len(path)}]")
    sub = path.prefix(cutoff)
    ls, ms = sub.ls, sub.ms
    death = ls * rates.mu[ls, ms]
    cost = -(costs.c_d * ls + costs.c_r * ms)
    return _best_static(death, cost, costs, curve, t0, n_grid)


@dataclass(eq=False)
class DPTables:
    """Best path (as parent pointers) and best static value per terminal cell.

    ``realizer[l, m]`` is the terminal cell of the truncated path and
    ``lam[l, m]`` the static rate achieving ``R[l, m]``.
    """

    R: np.ndarray
    parent: np.ndarray
    realizer: np.ndarray
    lam: np.ndarray

    def path(self, l: int, m: int) -> ZigzagPath:
        states = [(l, m)]
        while self.parent[l, m, 0] >= 0:
            l, m = (int(x) for x in self.parent[l, m])
            states.append((l, m))
        return ZigzagPath(states[::-1])


def zigzag_tables(rates: RateTable, costs: ReducedCosts, curve: DemandCurve, cfg: ModelConfig) -> DPTables:
    """Dynamic programme over terminal cells with static pricing and cutoffs."""
    rates = _check_grid(rates, cfg)
    L, M, t0 = cfg.L, cfg.M, cfg.t0
    mu = rates.mu
    R = np.zeros((L + 1, M + 1))
    parent = np.full((L + 1, M + 1, 2), -1, dtype=np.int64)
    realizer = np.zeros((L + 1, M + 1, 2), dtype=np.int64)
    lam = np.zeros((L + 1, M + 1))
    death = {}
    cost = {}

    def cell_cost(l, m):
        return -(costs.c_d * l + costs.c_r * m)

    for m in range(M + 1):
        death[(0, m)] = np.zeros(1)
        cost[(0, m)] = np.array([cell_cost(0, m)])
    # R[0, m] = 0 is the empty system: realised by blocking everything at (0, 0)
    for l in range(1, L + 1):
        parent[l, 0] = (l - 1, 0)
        death[(l, 0)] = np.append(death[(l - 1, 0)], l * mu[l, 0])
        cost[(l, 0)] = np.append(cost[(l - 1, 0)], cell_cost(l, 0))
        x, v = _best_static(death[(l, 0)], cost[(l, 0)], costs, curve, t0)
        if v > R[l - 1, 0]:
            R[l, 0], realizer[l, 0], lam[l, 0] = v, (l, 0), x
        else:
            R[l, 0], realizer[l, 0], lam[l, 0] = R[l - 1, 0], realizer[l - 1, 0], lam[l - 1, 0]

    for m in range(1, M + 1):
        for l in range(1, L + 1):
            cand = {}
            for side, (pl, pm) in (("above", (l - 1, m)), ("left", (l, m - 1))):
                d = np.append(death[(pl, pm)], l * mu[l, m])
                c = np.append(cost[(pl, pm)], cell_cost(l, m))
                x, v = _best_static(d, c, costs, curve, t0)
                if v > R[pl, pm]:
                    cand[side] = (v, (l, m), x, d, c, (pl, pm))
                else:
                    cand[side] = (R[pl, pm], tuple(realizer[pl, pm]), lam[pl, pm], d, c, (pl, pm))
            va, vl = cand["above"][0], cand["left"][0]
            if vl > va:
                keep, val_from = "left", "left"
            elif vl < va:
                keep, val_from = "above", "above"
            else:
                keep = "above" if classify_state(rates, (l - 1, m)) is StateType.TYPE1 else "left"
                val_from = keep
            v, rz, x, d, c, par = cand[keep]
            R[l, m] = cand[val_from][0]
            realizer[l, m] = rz
            lam[l, m] = x
            parent[l, m] = par
            death[(l, m)] = d
            cost[(l, m)] = c
    return DPTables(R=R, parent=parent, realizer=realizer, lam=lam)


@dataclass(eq=False)
class PathPricing:
    rates_along: np.ndarray
    h: np.ndarray
    gain: float
    iterations: int
    spans: list


def _served_length(path: ZigzagPath, rates: RateTable) -> int:
    """Length of the longest prefix whose states past the origin all have positive service."""
    death = path.ls * rates.mu[path.ls, path.ms]
    dead = np.nonzero(death[1:] <= 0)[0]
    return int(dead[0]) + 1 if len(dead) else len(path)


def _path_rvi(path: ZigzagPath, rates: RateTable, costs: ReducedCosts, curve: DemandCurve, t0: float,
              tol: float | None = None, max_iters: int = 1_000_000) -> PathPricing:
    k = _served_length(path, rates)
    if k < len(path):
        # states past an unserved one can never return to the origin; close the path before it
        res = _path_rvi(path.prefix(k), rates, costs, curve, t0, tol, max_iters)
        pad = len(path) - k
        return PathPricing(np.append(res.rates_along, np.zeros(pad)), np.append(res.h, np.full(pad, np.nan)),
                           res.gain, res.iterations, res.spans)
    ls, ms = path.ls, path.ms
    n = len(path)
    death = ls * rates.mu[ls, ms]
    cost = costs.c_d * ls + costs.c_r * ms
    M0 = float(death.max() + curve.Lambda)
    if tol is None:
        tol = 1e-9 * M0
    h = np.zeros(n)
    spans = []
    if n == 1:
        return PathPricing(np.zeros(1), h, float(-cost[0]), 0, spans)
    for it in range(1, max_iters + 1):
        base = costs.p0_eff + h[1:] - h[:-1]
        _, val = curve.best_rate(base, t0)
        diff = -cost.copy()
        diff[:-1] += val
        diff[1:] += death[1:] * (h[:-1] - h[1:])
        span = float(diff.max() - diff.min())
        h = h + diff / M0
        h -= h[0]
        if it % 64 == 0:
            spans.append(span)
        if span < tol:
            gain = float((diff.max() + diff.min()) / 2.0)
            break
    else:
        raise ConvergenceError(f"path value iteration did not converge in {max_iters} sweeps "
                               f"(last span {span:.3g})", spans)
    lam_along, _ = curve.best_rate(costs.p0_eff + h[1:] - h[:-1], t0)
    return PathPricing(np.append(lam_along, 0.0), h, gain, it, spans)


def dynamic_price_on_path(path: ZigzagPath, rates: RateTable, costs: ReducedCosts, curve: DemandCurve,
                          t0: float, tol: float | None = None,
                          max_iters: int = 1_000_000) -> tuple[PricingPolicy, float]:
    """State-dependent rates on the path by relative value iteration; returns pricing and objective."""
    res = _path_rvi(path, rates, costs, curve, t0, tol, max_iters)
    pricing = PricingPolicy.on_path(path, res.rates_along, rates.mu.shape, curve.Lambda)
    dist = path_stationary(path.prefix(_served_length(path, rates)), pricing, rates)
    return pricing, objective(dist, pricing, costs, curve, t0)


def zigzag_dp(rates: RateTable, costs: ReducedCosts, curve: DemandCurve, cfg: ModelConfig,
              pricing: str = "dynamic") -> SolveResult:
    """Best zigzag path by dynamic programming, then pricing on that path.

    With ``pricing="static"`` the result uses the best static rate with its
    cutoff on the selected path; with ``"dynamic"`` the rates come from value
    iteration restricted to the path.
    """
    if pricing not in ("static", "dynamic"):
        raise ValidationError(f"unknown pricing mode {pricing!r}")
    t_start = time.perf_counter()
    rates = _check_grid(rates, cfg)
    bound = m_bound(rates, costs, curve, cfg.L)
    if cfg.M < bound:
        warnings.warn(f"queue cap M = {cfg.M} is below the no-loss bound {bound}", stacklevel=2)
    tab = zigzag_tables(rates, costs, curve, cfg)
    path = tab.path(cfg.L, cfg.M)
    dispatch = policy_of_path(path, cfg.L, cfg.M)
    rl, rm = (int(x) for x in tab.realizer[cfg.L, cfg.M])
    static_value = float(tab.R[cfg.L, cfg.M])
    static_lam = float(tab.lam[cfg.L, cfg.M])
    extras = {"static_objective": static_value, "static_rate": static_lam,
              "cutoff_state": f"{rl},{rm}", "m_bound": bound}
    iterations = 0
    if pricing == "static":
        # cutoff path is a prefix of the selected path except for the empty system
        if (rl, rm) in path.states:
            cutoff = path.states.index((rl, rm)) + 1
            price = PricingPolicy.static_on_path(path, static_lam, cutoff, rates.mu.shape, curve.Lambda)
        else:
            price = PricingPolicy(np.zeros(rates.mu.shape))
        method = "zigzag-static"
    else:
        res = _path_rvi(path, rates, costs, curve, cfg.t0)
        price = PricingPolicy.on_path(path, res.rates_along, rates.mu.shape, curve.Lambda)
        iterations = res.iterations
        extras["gain"] = res.gain
        method = "zigzag-dynamic"
    rep = evaluate(dispatch, price, rates, costs, curve, cfg)
    return SolveResult(dispatch=dispatch, pricing=price, objective=rep.objective, method=method,
                       iterations=iterations, wall_time=time.perf_counter() - t_start, path=path,
                       extras={**extras, "tables": tab})


def solve_greedy_dynamic(rates: RateTable, costs: ReducedCosts, curve: DemandCurve,
                         cfg: ModelConfig) -> SolveResult:
    """Always-dispatch policy with rates optimised on its recurrent chain."""
    t_start = time.perf_counter()
    rates = _check_grid(rates, cfg)
    dispatch = greedy_policy(cfg)
    path = path_of_policy(dispatch)
    res = _path_rvi(path, rates, costs, curve, cfg.t0)
    price = PricingPolicy.on_path(path, res.rates_along, rates.mu.shape, curve.Lambda)
    rep = evaluate(dispatch, price, rates, costs, curve, cfg)
    return SolveResult(dispatch=dispatch, pricing=price, objective=rep.objective, method="greedy-dynamic",
                       iterations=res.iterations, wall_time=time.perf_counter() - t_start, path=path,
                       extras={"gain": res.gain})


def _action_targets(L: int, M: int, mode: str):
    """Index arrays of post-decision states for arrival and completion options."""
    l = np.repeat(np.arange(L + 1), M + 1)
    m = np.tile(np.arange(M + 1), L + 1)
    kmax = 1 if mode == "single_dispatch" else L
    arr, comp = [], []
    for k in range(kmax + 1):
        al, am = l + k, m + 1 - k
        ok = (al <= L) & (am >= 0) & (am <= M) & (k <= m + 1)
        arr.append(np.where(ok, al * (M + 1) + np.clip(am, 0, M), -1))
        cl, cm = l - 1 + k, m - k
        ok = (l >= 1) & (cm >= 0) & (cl <= L)
        comp.append(np.where(ok, np.clip(cl, 0, L) * (M + 1) + np.clip(cm, 0, M), -1))
    return np.array(arr), np.array(comp)


def relative_value_iteration(rates: RateTable, costs: ReducedCosts, curve: DemandCurve, cfg: ModelConfig,
                             action_mode: str = "single_dispatch", tol: float | None = None,
                             max_iters: int = 1_000_000, wall_cap: float = 1200.0,
                             sweep: str = "jacobi", h0=None) -> SolveResult:
    """Average-reward value iteration on the uniformised joint pricing/dispatch MDP.

    Arrival at (l, m) with ``d_a`` dispatches moves to (l + d_a, m + 1 - d_a);
    a completion with ``d_c`` dispatches moves to (l - 1 + d_c, m - d_c).
    ``single_dispatch`` restricts both to {0, 1}. Stops when the span of the
    per-sweep change, in reward-rate units, is below ``tol``.
    """
    if action_mode not in ("single_dispatch", "full"):
        raise ValidationError(f"unknown action mode {action_mode!r}")
    if sweep not in ("jacobi", "gauss_seidel"):
        raise ValidationError(f"unknown sweep {sweep!r}")
    t_start = time.perf_counter()
    rates = _check_grid(rates, cfg)
    L, M, t0 = cfg.L, cfg.M, cfg.t0
    if action_mode == "full" and L * M * L > 1e7:
        warnings.warn("full action space is large; value iteration will be slow", stacklevel=2)
    n = (L + 1) * (M + 1)
    l = np.repeat(np.arange(L + 1), M + 1)
    m = np.tile(np.arange(M + 1), L + 1)
    serv = l * rates.mu.reshape(-1)
    cost = costs.c_d * l + costs.c_r * m
    M0 = float(serv.max() + curve.Lambda)
    if tol is None:
        tol = 1e-9 * M0
    arr, comp = _action_targets(L, M, action_mode)
    arr_ok, comp_ok = arr >= 0, comp >= 0
    arr_i, comp_i = np.where(arr_ok, arr, 0), np.where(comp_ok, comp, 0)
    any_arr = arr_ok.any(axis=0)
    h = np.zeros(n) if h0 is None else np.array(h0, dtype=float).reshape(-1).copy()
    spans = []
    converged = False
    partial = False
    it = 0

    def bellman_all(h):
        ha = np.where(arr_ok, h[arr_i], -np.inf).max(axis=0)
        base = np.where(any_arr, costs.p0_eff + ha - h, -np.inf)
        _, val = curve.best_rate(np.where(any_arr, base, 0.0), t0)
        val = np.where(any_arr, val, 0.0)
        hc = np.where(comp_ok, h[comp_i], -np.inf).max(axis=0)
        cterm = np.where(l >= 1, serv * (np.where(l >= 1, hc, 0.0) - h), 0.0)
        return val + cterm - cost

    if sweep == "jacobi":
        while it < max_iters:
            it += 1
            diff = bellman_all(h)
            span = float(diff.max() - diff.min())
            h = h + diff / M0
            h -= h[0]
            if it % 64 == 0:
                spans.append(span)
                if time.perf_counter() - t_start > wall_cap:
                    partial = True
                    break
            if span < tol:
                converged = True
                break
    else:
        arr_lists = [arr_i[arr_ok[:, s], s] for s in range(n)]
        comp_lists = [comp_i[comp_ok[:, s], s] for s in range(n)]
        def bellman_at(s):
            tot = -cost[s]
            if len(arr_lists[s]):
                base = costs.p0_eff + h[arr_lists[s]].max() - h[s]
                tot += float(curve.best_rate(base, t0)[1])
            if l[s] >= 1:
                tot += serv[s] * (h[comp_lists[s]].max() - h[s])
            return tot

        while it < max_iters:
            it += 1
            # in-place updates relative to the reference state's increment keep h[0] fixed
            g = bellman_at(0)
            for s in range(n):
                h[s] = h[s] + (bellman_at(s) - g) / M0
            diff = bellman_all(h)
            span = float(diff.max() - diff.min())
            if it % 64 == 0:
                spans.append(span)
                if time.perf_counter() - t_start > wall_cap:
                    partial = True
                    break
            if span < tol:
                converged = True
                break
    if not converged and not partial:
        raise ConvergenceError(f"value iteration did not converge in {max_iters} sweeps "
                               f"(last span {span:.3g})", spans)
    diff = bellman_all(h)
    gain = float((diff.max() + diff.min()) / 2.0)

    # greedy-in-h policy
    ha_all = np.where(arr_ok, h[arr_i], -np.inf)
    da = np.argmax(ha_all, axis=0)
    base = costs.p0_eff + ha_all.max(axis=0) - h
    lam, _ = curve.best_rate(np.where(any_arr, base, 0.0), t0)
    lam = np.where(any_arr, lam, 0.0)
    hc_all = np.where(comp_ok, h[comp_i], -np.inf)
    dc = np.where(l >= 1, np.argmax(hc_all, axis=0), 0)
    shape = (L + 1, M + 1)
    expanded = ExpandedPolicy(lam.reshape(shape), da.reshape(shape), dc.reshape(shape))
    dist = expanded_stationary(expanded, rates)
    pricing = PricingPolicy(expanded.lam, curve.Lambda)
    obj = objective(dist, pricing, costs, curve, t0)
    dispatch = dispatch_from_values(h.reshape(shape), expanded)
    return SolveResult(dispatch=dispatch, pricing=pricing, objective=obj,
                       method=f"vi-{action_mode}", iterations=it, wall_time=time.perf_counter() - t_start,
                       converged=converged, partial=partial,
                       extras={"gain": gain, "h": h.reshape(shape), "expanded": expanded,
                               "stationary": dist, "spans": spans, "M0": M0})


def dispatch_from_values(h: np.ndarray, expanded: ExpandedPolicy) -> DispatchPolicy:
    """Single-step dispatch map implied by relative values.

    A pre-decision state (l, m) dispatches when ``h[l+1, m-1] > h[l, m]``,
    which is the one-dispatch comparison made after both arrivals and
    completions. At the cap, arrivals are admitted with a dispatch when the
    policy prices them in.
    """
    L, M = h.shape[0] - 1, h.shape[1] - 1
    grid = np.zeros(h.shape, dtype=np.int8)
    grid[:L, 1:] = h[1:, :M] > h[:L, 1:]
    overflow = ((expanded.d_a[:, M] >= 1) & (expanded.lam[:, M] > 0)).astype(np.int8)
    overflow[L] = 0
    return DispatchPolicy(grid, overflow)
