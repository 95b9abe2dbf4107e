"""Exact stationary analysis and objective evaluation of (dispatch, pricing) pairs."""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .model import (DemandCurve, DispatchPolicy, ModelConfig, PricingPolicy, ReducedCosts,
                    State, StructuralError, ValidationError, ZigzagPath, apply_dispatch_closure)
from .rates import RateTable


class NumericalError(RuntimeError):
    pass


class StationaryDistribution:
    """Probabilities over a support of distinct states.

    ``blocked[i]`` marks support states at which arrivals are not admitted,
    so their effective arrival rate is zero whatever the pricing grid says.
    """

    __slots__ = ("support", "probs", "blocked", "_index")

    def __init__(self, support, probs, blocked=None):
        support = tuple((int(l), int(m)) for l, m in support)
        probs = np.array(probs, dtype=float)
        if len(set(support)) != len(support) or len(support) != len(probs):
            raise ValidationError("support states must be distinct and match probs")
        if np.any(probs < -1e-15) or abs(probs.sum() - 1.0) > 1e-12:
            raise NumericalError(f"invalid distribution (sum={probs.sum()!r}, min={probs.min()!r})")
        probs = np.maximum(probs, 0.0)
        blocked = np.zeros(len(support), bool) if blocked is None else np.array(blocked, bool)
        for name, v in (("support", support), ("probs", probs), ("blocked", blocked)):
            if isinstance(v, np.ndarray):
                v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(support)})

    def __setattr__(self, name, value):
        raise AttributeError("StationaryDistribution is immutable")

    def __len__(self):
        return len(self.support)

    def prob(self, s: State) -> float:
        i = self._index.get((int(s[0]), int(s[1])))
        return 0.0 if i is None else float(self.probs[i])

    @property
    def ls(self) -> np.ndarray:
        return np.array([s[0] for s in self.support], dtype=np.int64)

    @property
    def ms(self) -> np.ndarray:
        return np.array([s[1] for s in self.support], dtype=np.int64)

    def as_grid(self, shape) -> np.ndarray:
        g = np.zeros(shape)
        g[self.ls, self.ms] = self.probs
        return g

    def effective_rates(self, pricing: PricingPolicy) -> np.ndarray:
        lam = pricing.lam[self.ls, self.ms]
        return np.where(self.blocked, 0.0, lam)

    def mean_l(self) -> float:
        return float(self.probs @ self.ls)

    def mean_m(self) -> float:
        return float(self.probs @ self.ms)


def _logsumexp_normalise(logw: np.ndarray) -> np.ndarray:
    top = logw.max()
    w = np.exp(logw - top)
    return w / w.sum()


def path_log_weights(lam_along: np.ndarray, death: np.ndarray) -> np.ndarray:
    """Unnormalised log stationary weights of a birth-death chain on a path.

    ``lam_along[i]`` is the birth rate out of index ``i`` (the last entry is
    ignored) and ``death[i]`` the death rate out of index ``i`` (the first is
    ignored). Detailed balance gives ``pi[i+1] / pi[i] = lam[i] / death[i+1]``.
    """
    n = len(death)
    logw = np.zeros(n)
    if n == 1:
        return logw
    birth = np.asarray(lam_along[: n - 1], dtype=float)
    d = np.asarray(death[1:], dtype=float)
    need = birth > 0
    if np.any(need & (d <= 0)):
        i = int(np.nonzero(need & (d <= 0))[0][0])
        raise StructuralError(f"zero completion rate at path index {i + 1} with positive inflow")
    with np.errstate(divide="ignore"):
        step = np.where(need, np.log(np.where(need, birth, 1.0)) - np.log(np.where(need, d, 1.0)), -np.inf)
    logw[1:] = np.cumsum(step)
    return logw


def _path_death(path: ZigzagPath, rates: RateTable) -> np.ndarray:
    ls, ms = path.ls, path.ms
    return ls * rates.mu[ls, ms]


def path_stationary(path: ZigzagPath, pricing: PricingPolicy, rates: RateTable) -> StationaryDistribution:
    """Product-form stationary law of the birth-death chain along ``path``.

    The terminal state blocks arrivals.
    """
    ls, ms = path.ls, path.ms
    lam = pricing.lam[ls, ms]
    probs = _logsumexp_normalise(path_log_weights(lam, _path_death(path, rates)))
    blocked = np.zeros(len(path), bool)
    blocked[-1] = True
    return StationaryDistribution(path.states, probs, blocked)


def arrival_target(policy: DispatchPolicy, s: State) -> State | None:
    """Post-closure state after an arrival at ``s``; None if the arrival is blocked."""
    l, m = s
    if m == policy.M and policy.overflow[l] == 0:
        return None
    return apply_dispatch_closure(policy, (l, m + 1))


def completion_target(policy: DispatchPolicy, s: State) -> State:
    l, m = s
    return apply_dispatch_closure(policy, (l - 1, m))


def _transitions(policy: DispatchPolicy, pricing: PricingPolicy, rates: RateTable, s: State):
    l, m = s
    out = []
    lam = pricing.lam[l, m]
    if lam > 0:
        t = arrival_target(policy, s)
        if t is not None:
            out.append((t, float(lam)))
    if l > 0:
        out.append((completion_target(policy, s), float(l * rates.mu[l, m])))
    return out


def generator_stationary(policy: DispatchPolicy, pricing: PricingPolicy, rates: RateTable,
                         cfg: ModelConfig | None = None, dense_limit: int = 5000) -> StationaryDistribution:
    """Stationary law by solving ``pi Q = 0`` on the recurrent class.

    States are the post-closure states reachable from ``closure((0, 0))``.
    """
    if cfg is not None and (cfg.L, cfg.M) != (policy.L, policy.M):
        raise ValidationError("policy grid does not match the configuration")
    start = apply_dispatch_closure(policy, (0, 0))
    return _solve_reachable(start, lambda s: _transitions(policy, pricing, rates, s),
                            lambda s: arrival_target(policy, s) is None, dense_limit)


def _solve_reachable(start: State, moves, is_blocked, dense_limit: int = 5000) -> StationaryDistribution:
    index = {start: 0}
    order = [start]
    edges = []
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for t, r in moves(s):
            if t == s:
                continue
            if t not in index:
                index[t] = len(order)
                order.append(t)
                queue.append(t)
            edges.append((index[s], index[t], r))
    n = len(order)
    if edges:
        src, dst, rate = map(np.array, zip(*edges))
    else:
        src = dst = np.zeros(0, int)
        rate = np.zeros(0)
    A = sp.coo_matrix((rate, (src, dst)), shape=(n, n)).tocsr()
    ncomp, labels = connected_components(A, directed=True, connection="strong")
    # closed classes have no edge leaving the class
    leaves = np.zeros(ncomp, bool)
    if len(src):
        leaves[labels[src][labels[src] != labels[dst]]] = True
    closed = [c for c in range(ncomp) if not leaves[c]]
    if len(closed) > 1:
        warnings.warn(f"chain is reducible with {len(closed)} closed classes; using the first found",
                      stacklevel=3)
    cls = min(closed, key=lambda c: np.nonzero(labels == c)[0][0])
    members = np.nonzero(labels == cls)[0]
    k = len(members)
    if k == 1:
        probs = np.ones(1)
    elif k <= dense_limit:
        sub = A[members][:, members].toarray()
        Q = sub - np.diag(sub.sum(axis=1))
        Aeq = Q.T.copy()
        Aeq[-1, :] = 1.0
        b = np.zeros(k)
        b[-1] = 1.0
        try:
            probs = np.linalg.solve(Aeq, b)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"singular generator solve (cond={np.linalg.cond(Aeq):.3g})") from e
    else:
        sub = A[members][:, members].tocsr()
        Q = sub - sp.diags(np.asarray(sub.sum(axis=1)).ravel())
        probs = _power_stationary(sp.csr_matrix(Q))
    probs = np.maximum(probs, 0.0)
    probs = probs / probs.sum()
    support = [order[i] for i in members]
    blocked = [is_blocked(s) for s in support]
    return StationaryDistribution(support, probs, blocked)


def _power_stationary(Q: sp.csr_matrix, tol: float = 1e-12, max_iter: int = 10_000_000) -> np.ndarray:
    k = Q.shape[0]
    rate = float(-Q.diagonal().min()) * 1.01
    P = sp.identity(k, format="csr") + Q / rate
    PT = P.T.tocsr()
    pi = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        nxt = PT @ pi
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise NumericalError("power iteration did not reach the residual tolerance")


def objective(dist: StationaryDistribution, pricing: PricingPolicy, costs: ReducedCosts,
              curve: DemandCurve, t0: float) -> float:
    """Long-run reward rate: fare income minus driver and rider penalties."""
    lam = dist.effective_rates(pricing)
    fare = costs.p0_eff + curve.price(lam) * t0
    per_state = lam * fare - costs.c_d * dist.ls - costs.c_r * dist.ms
    return float(dist.probs @ per_state)


def static_value_curve(path: ZigzagPath, cutoff: int, rates: RateTable, costs: ReducedCosts,
                       curve: DemandCurve, t0: float, lam_grid) -> np.ndarray:
    """Static-pricing objective on the truncated path for an array of rates."""
    lam_grid = np.atleast_1d(np.asarray(lam_grid, dtype=float))
    sub = path.prefix(cutoff)
    ls, ms = sub.ls, sub.ms
    death = ls * rates.mu[ls, ms]
    cost = -(costs.c_d * ls + costs.c_r * ms)
    return _static_values(death, cost, costs.p0_eff, curve, t0, lam_grid)


def _static_values(death, cost, p0_eff, curve, t0, lam_grid) -> np.ndarray:
    n = len(death)
    if n == 1:
        return np.full(lam_grid.shape, float(cost[0]))
    if np.any(death[1:] <= 0):
        raise StructuralError("zero completion rate past the path origin")
    with np.errstate(divide="ignore"):
        S = np.concatenate([[0.0], np.cumsum(np.log(death[1:]))])
        loglam = np.log(lam_grid)
    idx = np.arange(n)
    with np.errstate(invalid="ignore"):
        logw = idx[None, :] * loglam[:, None] - S[None, :]
    logw[:, 0] = 0.0
    logw[lam_grid == 0, 1:] = -np.inf
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    z = w.sum(axis=1)
    reward = lam_grid * (p0_eff + curve.price(lam_grid) * t0)
    busy = 1.0 - w[:, -1] / z
    return reward * busy + (w @ cost) / z


def static_objective(lam_bar: float, path: ZigzagPath, cutoff: int, rates: RateTable,
                     costs: ReducedCosts, curve: DemandCurve, t0: float) -> float:
    """Objective with rate ``lam_bar`` before ``cutoff`` and arrivals blocked from there on."""
    if not 0 <= lam_bar <= curve.Lambda:
        raise ValidationError(f"static rate {lam_bar} outside [0, {curve.Lambda}]")
    if not 1 <= cutoff <= len(path):
        raise ValidationError(f"cutoff {cutoff} outside [1, {len(path)}]")
    return float(static_value_curve(path, cutoff, rates, costs, curve, t0, [lam_bar])[0])


@dataclass(frozen=True)
class EvalReport:
    objective: float
    revenue_rate: float
    avg_price: float
    avg_price_arrival: float
    avg_pickup_time: float
    avg_queue_time: float
    throughput: float
    arrival_rate: float
    mean_busy: float
    mean_queue: float
    base_fare_credit: float

    def penalty_rate(self, costs: ReducedCosts) -> float:
        return costs.c_d * self.mean_busy + costs.c_r * self.mean_queue

    def as_row(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


REPORT_FIELDS = tuple(f.name for f in fields(EvalReport))


def metrics(dist: StationaryDistribution, pricing: PricingPolicy, policy: DispatchPolicy,
            rates: RateTable, costs: ReducedCosts, curve: DemandCurve, cfg: ModelConfig) -> EvalReport:
    """Revenue, price, pickup, queue and throughput statistics in steady state.

    Pickup time per dispatch is ``1 / mu - t0`` at the post-dispatch state,
    averaged over dispatches in steady state. ``avg_price`` weights states
    by their stationary probability among states that admit riders;
    ``avg_price_arrival`` weights by the arrival flow instead.
    """
    t0 = cfg.t0
    p = dist.probs
    lam = dist.effective_rates(pricing)
    ls, ms = dist.ls, dist.ms
    fare_raw = cfg.p0 + curve.price(lam) * t0
    arrival_rate = float(p @ lam)
    revenue = float(p @ (lam * fare_raw))
    throughput = float(p @ (ls * rates.mu[ls, ms]))
    open_ = lam > 0
    w_open = p[open_].sum()
    avg_price = float(p[open_] @ fare_raw[open_] / w_open) if w_open > 0 else math.nan
    avg_price_arr = revenue / arrival_rate if arrival_rate > 0 else math.nan
    # dispatch flow: walk each closure chain from every recurrent state
    disp_w = 0.0
    disp_pick = 0.0
    for i, s in enumerate(dist.support):
        if p[i] == 0:
            continue
        events = []
        if lam[i] > 0:
            events.append(((s[0], s[1] + 1), lam[i]))
        if s[0] > 0:
            events.append(((s[0] - 1, s[1]), s[0] * rates.mu[s]))
        for (l, m), r in events:
            while policy.phi(l, m) == 1:
                l, m = l + 1, m - 1
                disp_w += p[i] * r
                disp_pick += p[i] * r * (1.0 / rates.mu[l, m] - t0)
    E_l, E_m = dist.mean_l(), dist.mean_m()
    avg_pickup = disp_pick / disp_w if disp_w > 0 else math.nan
    avg_queue = E_m / arrival_rate if arrival_rate > 0 else math.nan
    credit = (costs.p0_eff - cfg.p0) * arrival_rate
    obj = revenue + credit - costs.c_d * E_l - costs.c_r * E_m
    return EvalReport(objective=obj, revenue_rate=revenue, avg_price=avg_price,
                      avg_price_arrival=avg_price_arr, avg_pickup_time=avg_pickup,
                      avg_queue_time=avg_queue, throughput=throughput, arrival_rate=arrival_rate,
                      mean_busy=E_l, mean_queue=E_m, base_fare_credit=credit)


def evaluate(policy: DispatchPolicy, pricing: PricingPolicy, rates: RateTable, costs: ReducedCosts,
             curve: DemandCurve, cfg: ModelConfig) -> EvalReport:
    """Generator-based stationary law followed by ``metrics``."""
    dist = generator_stationary(policy, pricing, rates, cfg)
    return metrics(dist, pricing, policy, rates, costs, curve, cfg)


@dataclass(frozen=True, eq=False)
class ExpandedPolicy:
    """Per-state rate and dispatch counts after arrivals (``d_a``) and completions (``d_c``)."""

    lam: np.ndarray
    d_a: np.ndarray
    d_c: np.ndarray

    def arrival_target(self, s: State) -> State | None:
        l, m = s
        k = int(self.d_a[l, m])
        t = (l + k, m + 1 - k)
        L, M = self.lam.shape[0] - 1, self.lam.shape[1] - 1
        return t if t[0] <= L and 0 <= t[1] <= M else None


def expanded_stationary(policy: ExpandedPolicy, rates: RateTable,
                        start: State = (0, 0)) -> StationaryDistribution:
    """Stationary law under explicit dispatch counts, on the class reached from ``start``."""

    def moves(s):
        l, m = s
        out = []
        if policy.lam[l, m] > 0:
            t = policy.arrival_target(s)
            if t is not None:
                out.append((t, float(policy.lam[l, m])))
        if l > 0:
            k = int(policy.d_c[l, m])
            out.append(((l - 1 + k, m - k), float(l * rates.mu[l, m])))
        return out

    return _solve_reachable(start, moves, lambda s: policy.arrival_target(s) is None)
