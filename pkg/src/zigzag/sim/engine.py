"""Event-driven spatial simulator on a square region.

Exogenous randomness (arrival times, origins, destinations, willingness to
pay, initial driver positions) is drawn up front from independent Philox
streams keyed by ``(seed, stream_id)``; the event loop itself is
deterministic and compiled with numba.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from ..chain import EvalReport
from ..model import (DemandCurve, DispatchPolicy, ModelConfig, PricingPolicy, RawCosts, ReducedCosts,
                     ValidationError, reduce_costs)

RULE_COUNT, RULE_RADIUS, RULE_TWO_RADIUS = 0, 1, 2

EV_ARRIVAL, EV_DECLINE, EV_BLOCK, EV_DISPATCH, EV_PICKUP, EV_COMPLETE = 1, 2, 3, 4, 5, 6
EVENT_NAMES = {EV_ARRIVAL: "arrival", EV_DECLINE: "decline", EV_BLOCK: "block",
               EV_DISPATCH: "dispatch", EV_PICKUP: "pickup", EV_COMPLETE: "complete"}

ATTRIBUTION = {"pre_event": 0, "pre_dispatch": 1, "post_dispatch": 2}

STREAM_ARRIVALS, STREAM_ORIGINS, STREAM_DESTINATIONS, STREAM_WTP, STREAM_DRIVERS = range(5)


@dataclass(frozen=True)
class SimConfig:
    cfg: ModelConfig
    T: float = 20_000.0
    seed: int = 0
    warmup: float = 1_000.0
    side: float = 10.0
    speed: float = 1.0

    def __post_init__(self):
        if not self.T > self.warmup >= 0:
            raise ValidationError(f"need T > warmup >= 0, got T={self.T}, warmup={self.warmup}")
        if not self.side > 0 or not self.speed > 0:
            raise ValidationError("side and speed must be positive")

    def replace(self, **kw) -> "SimConfig":
        d = dict(cfg=self.cfg, T=self.T, seed=self.seed, warmup=self.warmup, side=self.side,
                 speed=self.speed)
        d.update(kw)
        return SimConfig(**d)


@dataclass(frozen=True)
class ConstantRadius:
    r: float

    def __post_init__(self):
        if not self.r >= 0:
            raise ValidationError("radius must be nonnegative")


@dataclass(frozen=True, eq=False)
class CountZigzag:
    policy: DispatchPolicy


@dataclass(frozen=True, eq=False)
class TwoRadius:
    r0: float
    r1: float
    policy: DispatchPolicy

    def __post_init__(self):
        if not 0 <= self.r0 <= self.r1:
            raise ValidationError("two-radius rule needs 0 <= r0 <= r1")


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


@dataclass(frozen=True, eq=False)
class Exogenous:
    arrival_t: np.ndarray
    origin: np.ndarray
    dest: np.ndarray
    wtp: np.ndarray
    drivers: np.ndarray


def exogenous_streams(sim: SimConfig, curve: DemandCurve) -> Exogenous:
    """All randomness of one replication; independent of the dispatch rule and pricing."""
    cfg = sim.cfg
    g = _stream(sim.seed, STREAM_ARRIVALS)
    n = int(g.poisson(cfg.Lambda * sim.T))
    t = np.sort(g.uniform(0.0, sim.T, n))
    origin = _stream(sim.seed, STREAM_ORIGINS).uniform(0.0, sim.side, (n, 2))
    dest = _stream(sim.seed, STREAM_DESTINATIONS).uniform(0.0, sim.side, (n, 2))
    u = _stream(sim.seed, STREAM_WTP).uniform(0.0, 1.0, n)
    wtp = np.asarray(curve.price(curve.Lambda * u), dtype=float)
    drivers = _stream(sim.seed, STREAM_DRIVERS).uniform(0.0, sim.side, (cfg.L, 2))
    return Exogenous(t, origin, dest, wtp, drivers)


@numba.njit(cache=True)
def _kernel(arr_t, ox, oy, dx, dy, wtp, drv_x0, drv_y0, price, phi, rule, r0, r1,
            L, M, T, warmup, speed, log_cap, attr):
    n_arr = arr_t.shape[0]
    px = drv_x0.copy()
    py = drv_y0.copy()
    status = np.zeros(L, np.int8)
    next_t = np.full(L, np.inf)
    next_seq = np.zeros(L, np.int64)
    rider_of = np.full(L, -1, np.int64)
    idle = np.arange(L)
    n_idle = L
    queue = np.empty(M + 2, np.int64)
    qlen = 0
    l = 0
    n_pick = 0
    n_trip = 0
    seq = 1
    arr_seq = 0
    t = 0.0
    occ = np.zeros((L + 1, M + 2))
    samp_cnt = np.zeros((L + 1, M + 2))
    samp_sum = np.zeros((L + 1, M + 2))
    # integrals and sums over [warmup, T]
    i_pick = 0.0
    i_trip = 0.0
    rev = 0.0
    fare_nom = 0.0
    n_acc_w = 0
    n_disp_w = 0
    n_comp_w = 0
    pick_w = 0.0
    wait_w = 0.0
    # whole-run counters
    c = np.zeros(8, np.int64)  # arrivals, accepted, declined, blocked, dispatched, completed, pickups
    cap = max(log_cap, 1)
    lg_t = np.empty(cap)
    lg_e = np.empty(cap, np.int8)
    lg_l = np.empty(cap, np.int64)
    lg_m = np.empty(cap, np.int64)
    lg_x = np.empty(cap)
    n_log = 0
    ia = 0
    while True:
        j = -1
        tj = np.inf
        sj = 0
        for d in range(L):
            if next_t[d] < tj or (next_t[d] == tj and next_t[d] < np.inf and next_seq[d] < sj):
                j = d
                tj = next_t[d]
                sj = next_seq[d]
        ta = arr_t[ia] if ia < n_arr else np.inf
        is_arr = ta < tj or (ta == tj and ta < np.inf and arr_seq < sj)
        tn = ta if is_arr else tj
        tend = min(tn, T)
        a = max(t, warmup)
        if tend > a:
            dt = tend - a
            occ[l, qlen] += dt
            i_pick += n_pick * dt
            i_trip += n_trip * dt
        if tn >= T:
            break
        t = tn
        after = t >= warmup
        trig_l = l
        trig_m = qlen
        check = False
        if is_arr:
            k = ia
            ia += 1
            arr_seq = seq
            seq += 1
            c[0] += 1
            m = qlen
            admit = m < M or (rule == 0 and m == M and phi[l, M + 1] == 1)
            p1 = price[l, min(m, M)]
            if admit and p1 < np.inf:
                if wtp[k] >= p1:
                    queue[qlen] = k
                    qlen += 1
                    c[1] += 1
                    trip = math.sqrt((ox[k] - dx[k]) ** 2 + (oy[k] - dy[k]) ** 2)
                    if after:
                        rev += p1 * trip
                        fare_nom += p1
                        n_acc_w += 1
                    check = True
                    code = 1
                else:
                    c[2] += 1
                    code = 2
            else:
                c[3] += 1
                code = 3
            if n_log < log_cap:
                lg_t[n_log] = t
                lg_e[n_log] = code
                lg_l[n_log] = l
                lg_m[n_log] = qlen
                lg_x[n_log] = wtp[k]
                n_log += 1
        else:
            d = j
            r = rider_of[d]
            if status[d] == 1:
                status[d] = 2
                n_pick -= 1
                n_trip += 1
                px[d] = ox[r]
                py[d] = oy[r]
                trip = math.sqrt((ox[r] - dx[r]) ** 2 + (oy[r] - dy[r]) ** 2)
                next_t[d] = t + trip / speed
                next_seq[d] = seq
                seq += 1
                c[6] += 1
                code = 5
                extra = trip
            else:
                status[d] = 0
                n_trip -= 1
                l -= 1
                px[d] = dx[r]
                py[d] = dy[r]
                next_t[d] = np.inf
                rider_of[d] = -1
                idle[n_idle] = d
                n_idle += 1
                c[5] += 1
                if after:
                    n_comp_w += 1
                check = True
                code = 6
                extra = float(d)
            if n_log < log_cap:
                lg_t[n_log] = t
                lg_e[n_log] = code
                lg_l[n_log] = l
                lg_m[n_log] = qlen
                lg_x[n_log] = extra
                n_log += 1
        if not check:
            continue
        while qlen > 0 and n_idle > 0:
            if rule == 0 and phi[l, qlen] == 0:
                break
            best = np.inf
            bq = -1
            bi = -1
            for qi in range(qlen):
                rr = queue[qi]
                for ii in range(n_idle):
                    dd = idle[ii]
                    d2 = (px[dd] - ox[rr]) ** 2 + (py[dd] - oy[rr]) ** 2
                    if d2 < best:
                        best = d2
                        bq = qi
                        bi = ii
            dist = math.sqrt(best)
            if rule == 1 and dist > r0:
                break
            if rule == 2:
                rad = r1 if phi[l, qlen] == 1 else r0
                if dist > rad:
                    break
            if attr == 1:
                trig_l = l
                trig_m = qlen
            rr = queue[bq]
            qlen -= 1
            queue[bq] = queue[qlen]
            dd = idle[bi]
            n_idle -= 1
            idle[bi] = idle[n_idle]
            status[dd] = 1
            rider_of[dd] = rr
            next_t[dd] = t + dist / speed
            next_seq[dd] = seq
            seq += 1
            l += 1
            n_pick += 1
            c[4] += 1
            if attr == 2:
                trig_l = l
                trig_m = qlen
            if after:
                n_disp_w += 1
                pick_w += dist / speed
                wait_w += t - arr_t[rr]
                samp_cnt[trig_l, trig_m] += 1.0
                samp_sum[trig_l, trig_m] += dist / speed
            trig_l = l
            trig_m = qlen
            if n_log < log_cap:
                lg_t[n_log] = t
                lg_e[n_log] = 4
                lg_l[n_log] = l
                lg_m[n_log] = qlen
                lg_x[n_log] = dist
                n_log += 1
    sums = np.array([i_pick, i_trip, rev, fare_nom, pick_w, wait_w])
    cnts = np.array([n_acc_w, n_disp_w, n_comp_w, qlen, n_pick + n_trip])
    return (occ, sums, cnts, c, samp_cnt, samp_sum,
            lg_t[:n_log], lg_e[:n_log], lg_l[:n_log], lg_m[:n_log], lg_x[:n_log])


@dataclass(eq=False)
class PickupSamples:
    """Per-state pickup-time sums and counts, shape (L + 1, M + 2)."""

    count: np.ndarray
    total: np.ndarray

    def __add__(self, other: "PickupSamples") -> "PickupSamples":
        return PickupSamples(self.count + other.count, self.total + other.total)

    def rows(self, min_count: int = 1) -> np.ndarray:
        """Array of ``(l, m, avg_pickup, count)`` for states with enough samples."""
        l, m = np.nonzero(self.count >= max(min_count, 1))
        cnt = self.count[l, m]
        return np.column_stack([l, m, self.total[l, m] / cnt, cnt])

    @property
    def n(self) -> int:
        return int(self.count.sum())


@dataclass(eq=False)
class SimResult:
    report: EvalReport
    raw_objective: float | None
    nominal_objective: float
    counts: dict
    occupancy: np.ndarray
    samples: PickupSamples
    events: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def _price_grid(pricing: PricingPolicy, curve: DemandCurve) -> np.ndarray:
    lam = np.asarray(pricing.lam, dtype=float)
    out = np.full(lam.shape, np.inf)
    pos = lam > 0
    out[pos] = curve.price(np.minimum(lam[pos], curve.Lambda))
    return out


def _rule_args(rule, L: int, M: int):
    phi = np.zeros((L + 1, M + 2), dtype=np.int8)
    if isinstance(rule, ConstantRadius):
        return RULE_RADIUS, float(rule.r), float(rule.r), phi
    if isinstance(rule, (CountZigzag, TwoRadius)):
        pol = rule.policy
        if (pol.L, pol.M) != (L, M):
            raise ValidationError("dispatch policy grid does not match the configuration")
        phi = pol.extended().astype(np.int8)
        if isinstance(rule, CountZigzag):
            return RULE_COUNT, 0.0, 0.0, phi
        return RULE_TWO_RADIUS, float(rule.r0), float(rule.r1), phi
    raise ValidationError(f"unknown dispatch rule {rule!r}")


def simulate(sim: SimConfig, rule, pricing: PricingPolicy, costs: ReducedCosts | RawCosts,
             curve: DemandCurve, log_events: bool = False, exo: Exogenous | None = None,
             attribution: str = "pre_dispatch") -> SimResult:
    """Run one replication and return time-averaged metrics after warmup.

    Prices are quoted from ``curve`` at the pre-arrival state; riders join
    when their willingness to pay covers the quote. ``costs`` may be raw
    weights (then the raw objective is also reported) or reduced ones.
    """
    cfg = sim.cfg
    L, M = cfg.L, cfg.M
    if pricing.lam.shape != (L + 1, M + 1):
        raise ValidationError(f"pricing grid shape {pricing.lam.shape} != {(L + 1, M + 1)}")
    if isinstance(costs, RawCosts):
        raw = costs
        red = reduce_costs(raw, cfg.p0, cfg.t0)
    else:
        raw = None
        red = costs
    kind, r0, r1, phi = _rule_args(rule, L, M)
    if exo is None:
        exo = exogenous_streams(sim, curve)
    price = _price_grid(pricing, curve)
    n = len(exo.arrival_t)
    log_cap = 4 * n + 4 if log_events else 0
    (occ, sums, cnts, c, s_cnt, s_sum, lg_t, lg_e, lg_l, lg_m, lg_x) = _kernel(
        exo.arrival_t, exo.origin[:, 0].copy(), exo.origin[:, 1].copy(), exo.dest[:, 0].copy(),
        exo.dest[:, 1].copy(), exo.wtp, exo.drivers[:, 0].copy(), exo.drivers[:, 1].copy(),
        price, phi, kind, r0, r1, L, M, float(sim.T), float(sim.warmup), float(sim.speed), log_cap, ATTRIBUTION[attribution])
    i_pick, i_trip, rev_dist, fare_p1, pick_w, wait_w = sums
    n_acc_w, n_disp_w, n_comp_w, q_end, busy_end = (int(x) for x in cnts)
    span = sim.T - sim.warmup
    occ_frac = occ / span
    ls = np.arange(L + 1)[:, None]
    ms = np.arange(M + 2)[None, :]
    E_l = float((occ_frac * ls).sum())
    E_m = float((occ_frac * ms).sum())
    E_pick = i_pick / span
    E_trip = i_trip / span
    revenue = (cfg.p0 * n_acc_w + rev_dist) / span
    accepted_rate = n_acc_w / span
    w_p = raw.w_p_r if raw is not None else (red.p0_eff - cfg.p0) / cfg.t0
    credit = w_p * E_trip
    obj = revenue + credit - red.c_d * E_l - red.c_r * E_m
    nominal = revenue + (red.p0_eff - cfg.p0) * accepted_rate - red.c_d * E_l - red.c_r * E_m
    raw_obj = None
    if raw is not None:
        raw_obj = (revenue - raw.w_s_d * (E_pick + E_trip) - raw.w_o_d * (L - (E_pick + E_trip))
                   - raw.w_p_r * E_pick - raw.w_q_r * E_m)
    # time-weighted quoted fare over states that admit riders
    open_ = np.zeros((L + 1, M + 2), bool)
    open_[:, : M + 1] = np.isfinite(price)
    fare = np.zeros((L + 1, M + 2))
    fare[:, : M + 1] = np.where(np.isfinite(price), cfg.p0 + np.where(np.isfinite(price), price, 0) * cfg.t0, 0)
    w_open = occ_frac[open_].sum()
    avg_price = float((occ_frac * fare)[open_].sum() / w_open) if w_open > 0 else math.nan
    avg_price_arr = cfg.p0 + cfg.t0 * fare_p1 / n_acc_w if n_acc_w else math.nan
    report = EvalReport(
        objective=float(obj), revenue_rate=float(revenue), avg_price=avg_price,
        avg_price_arrival=float(avg_price_arr),
        avg_pickup_time=pick_w / n_disp_w if n_disp_w else math.nan,
        avg_queue_time=E_m / accepted_rate if accepted_rate > 0 else math.nan,
        throughput=n_comp_w / span, arrival_rate=accepted_rate, mean_busy=E_l, mean_queue=E_m,
        base_fare_credit=float(credit))
    counts = {"arrivals": int(c[0]), "accepted": int(c[1]), "declined": int(c[2]), "blocked": int(c[3]),
              "dispatched": int(c[4]), "completed": int(c[5]), "picked_up": int(c[6]),
              "queue_at_end": q_end, "busy_at_end": busy_end, "dispatched_after_warmup": n_disp_w}
    events = None
    if log_events:
        events = np.rec.fromarrays([lg_t, lg_e, lg_l, lg_m, lg_x], names="time,event,l,m,extra")
    return SimResult(report=report, raw_objective=None if raw_obj is None else float(raw_obj),
                     nominal_objective=float(nominal), counts=counts, occupancy=occ_frac,
                     samples=PickupSamples(s_cnt, s_sum), events=events,
                     extras={"mean_wait_dispatched": wait_w / n_disp_w if n_disp_w else math.nan,
                             "mean_pickup_riders": E_pick, "mean_on_trip": E_trip})
