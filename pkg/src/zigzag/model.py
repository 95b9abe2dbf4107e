"""State space, demand curve, costs and policy representations.

A state ``(l, m)`` counts ``l`` drivers in service (picking up or on trip)
and ``m`` riders waiting in the match queue. Grids are indexed ``[l, m]``
with shape ``(L + 1, M + 1)``.

Dispatch policies carry one extra column ``overflow`` that gives the
action for the pre-dispatch state ``(l, M + 1)``: an arrival at the queue
cap is admitted only if it immediately triggers a dispatch, otherwise it is
blocked. With ``overflow`` all zero this is the plain "block at the cap"
convention.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class StructuralError(ValueError):
    """A policy or path does not have the required structure."""


State = tuple[int, int]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelConfig:
    L: int
    Lambda: float
    M: int
    t0: float
    p0: float
    p_max: float

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValidationError(f"L must be an integer >= 1, got {self.L}")
        if int(self.M) != self.M or self.M < 0:
            raise ValidationError(f"M must be an integer >= 0, got {self.M}")
        if not self.Lambda > 0:
            raise ValidationError(f"Lambda must be positive, got {self.Lambda}")
        if not self.t0 > 0:
            raise ValidationError(f"t0 must be positive, got {self.t0}")
        if not self.p_max > 0:
            raise ValidationError(f"p_max must be positive, got {self.p_max}")
        if not self.p0 >= 0:
            raise ValidationError(f"p0 must be nonnegative, got {self.p0}")
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "M", int(self.M))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.L + 1, self.M + 1)

    def with_M(self, M: int) -> "ModelConfig":
        return ModelConfig(self.L, self.Lambda, M, self.t0, self.p0, self.p_max)

    def with_Lambda(self, Lambda: float) -> "ModelConfig":
        return ModelConfig(self.L, Lambda, self.M, self.t0, self.p0, self.p_max)


@dataclass(frozen=True)
class RawCosts:
    w_s_d: float
    w_o_d: float
    w_p_r: float
    w_q_r: float

    def __post_init__(self):
        for name in ("w_s_d", "w_o_d", "w_p_r", "w_q_r"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.w_s_d < self.w_o_d:
            warnings.warn("w_s_d < w_o_d: idle drivers cost more than busy ones", stacklevel=3)
        if self.w_p_r < self.w_q_r:
            warnings.warn("w_p_r < w_q_r: pickup wait cheaper than queue wait", stacklevel=3)


@dataclass(frozen=True)
class ReducedCosts:
    c_d: float
    c_r: float
    p0_eff: float

    def __post_init__(self):
        if not self.c_d > 0:
            raise ValidationError(f"c_d must be positive, got {self.c_d}")
        if not self.c_r > 0:
            raise ValidationError(f"c_r must be positive, got {self.c_r}")


def reduce_costs(raw: RawCosts, p0: float, t0: float) -> ReducedCosts:
    """Fold the four waiting-cost rates into two penalties and a base fare.

    The idle-driver cost becomes a constant ``w_o_d * L`` and the pickup
    penalty moves into the base fare, since the on-trip time per rider is
    ``t0`` on average.
    """
    c_d = raw.w_s_d + raw.w_p_r - raw.w_o_d
    if not c_d > 0:
        raise ValidationError(
            f"reduced driver penalty c_d = w_s_d + w_p_r - w_o_d = {c_d} is not positive; "
            "the cost reduction does not apply")
    return ReducedCosts(c_d=c_d, c_r=raw.w_q_r, p0_eff=p0 + raw.w_p_r * t0)


class DemandCurve:
    """Inverse demand ``lambda -> p1(lambda)`` on ``[0, Lambda]``.

    Subclasses implement ``price``, ``rate`` and may override ``best_rate``
    with an exact solution. The default ``best_rate`` uses a grid scan
    followed by golden-section refinement.
    """

    Lambda: float
    p_max: float

    def price(self, lam):
        raise NotImplementedError

    def rate(self, p):
        raise NotImplementedError

    def wtp(self, u):
        """Willingness to pay for uniform draws ``u`` in [0, 1)."""
        return self.price(self.Lambda * np.asarray(u, dtype=float))

    def best_rate(self, base, t0: float):
        """Maximise ``lam * (base + t0 * p1(lam))`` over ``lam`` in [0, Lambda].

        ``base`` may be an array; returns ``(lam, value)`` arrays. The value
        at ``lam = 0`` is 0, so the result is never negative.
        """
        base = np.asarray(base, dtype=float)
        flat = base.reshape(-1)
        grid = np.linspace(0.0, self.Lambda, 65)
        f = lambda lam, b: lam * (b + t0 * self.price(lam))
        vals = f(grid[None, :], flat[:, None])
        k = np.argmax(vals, axis=1)
        lo = grid[np.maximum(k - 1, 0)]
        hi = grid[np.minimum(k + 1, len(grid) - 1)]
        lam, val = _golden_max(lambda x: f(x, flat), lo, hi)
        better = val > vals[np.arange(len(flat)), k]
        lam = np.where(better, lam, grid[k])
        val = np.where(better, val, vals[np.arange(len(flat)), k])
        lam = np.where(val > 0, lam, 0.0)
        val = np.maximum(val, 0.0)
        return lam.reshape(base.shape), val.reshape(base.shape)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f, lo, hi, iters: int = 90):
    """Vectorised golden-section maximisation of ``f`` on ``[lo, hi]``."""
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    for _ in range(iters):
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        left = f(c) >= f(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    x = (a + b) / 2.0
    return x, f(x)


@dataclass(frozen=True)
class LinearDemand(DemandCurve):
    """p1(lam) = p_max * (1 - lam / Lambda); willingness to pay ~ U[0, p_max]."""

    Lambda: float
    p_max: float

    def __post_init__(self):
        if not self.Lambda > 0 or not self.p_max > 0:
            raise ValidationError("Lambda and p_max must be positive")

    def _check_rate(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0) or np.any(lam > self.Lambda * (1 + 1e-12)):
            raise ValidationError(f"rate outside [0, {self.Lambda}]")
        return lam

    def price(self, lam):
        lam = self._check_rate(lam)
        out = self.p_max * (1.0 - lam / self.Lambda)
        return float(out) if out.ndim == 0 else out

    def rate(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p < 0) or np.any(p > self.p_max * (1 + 1e-12)):
            raise ValidationError(f"price outside [0, {self.p_max}]")
        out = self.Lambda * (1.0 - p / self.p_max)
        return float(out) if out.ndim == 0 else out

    def best_rate(self, base, t0: float):
        # lam * (base + t0 p_max) - t0 p_max lam^2 / Lambda is a concave quadratic
        base = np.asarray(base, dtype=float)
        a = base + self.p_max * t0
        lam = np.clip(a * self.Lambda / (2.0 * self.p_max * t0), 0.0, self.Lambda)
        val = lam * (a - self.p_max * t0 * lam / self.Lambda)
        return lam, val


def price_of_rate(curve: DemandCurve, lam):
    return curve.price(lam)


def rate_of_price(curve: DemandCurve, p):
    return curve.rate(p)


class DispatchPolicy:
    """Binary hold (0) / dispatch (1) map over states.

    ``grid`` has shape ``(L + 1, M + 1)``; ``overflow[l]`` is the action at
    the pre-dispatch state ``(l, M + 1)`` reached by an arrival at the cap.
    """

    __slots__ = ("grid", "overflow")

    def __init__(self, grid, overflow=None):
        g = np.asarray(grid)
        if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise ValidationError(f"policy grid must be 2-D, got shape {g.shape}")
        if not np.isin(g, (0, 1)).all():
            raise ValidationError("policy grid entries must be 0 or 1")
        g = g.astype(np.int8)
        if overflow is None:
            o = np.zeros(g.shape[0], dtype=np.int8)
        else:
            o = np.asarray(overflow).astype(np.int8)
            if o.shape != (g.shape[0],) or not np.isin(o, (0, 1)).all():
                raise ValidationError("overflow must be a 0/1 vector of length L + 1")
        if g[:, 0].any():
            raise ValidationError("dispatch at m = 0 is impossible (no rider)")
        if g[-1].any() or o[-1]:
            raise ValidationError("dispatch at l = L is impossible (no idle driver)")
        object.__setattr__(self, "grid", _frozen(g))
        object.__setattr__(self, "overflow", _frozen(o))

    def __setattr__(self, name, value):
        raise AttributeError("DispatchPolicy is immutable")

    @property
    def L(self) -> int:
        return self.grid.shape[0] - 1

    @property
    def M(self) -> int:
        return self.grid.shape[1] - 1

    def phi(self, l: int, m: int) -> int:
        if m == self.M + 1:
            return int(self.overflow[l])
        return int(self.grid[l, m])

    def extended(self) -> np.ndarray:
        """Grid with the overflow column appended, shape (L + 1, M + 2)."""
        return np.column_stack([self.grid, self.overflow])

    def __eq__(self, other):
        return (isinstance(other, DispatchPolicy)
                and np.array_equal(self.grid, other.grid)
                and np.array_equal(self.overflow, other.overflow))

    def __hash__(self):
        return hash((self.grid.tobytes(), self.overflow.tobytes(), self.grid.shape))

    def __repr__(self):
        return f"DispatchPolicy(L={self.L}, M={self.M}, dispatch_states={int(self.grid.sum())})"


class ZigzagPath:
    """Monotone staircase of states starting in row ``l = 0``."""

    __slots__ = ("states",)

    def __init__(self, states: Sequence[State]):
        st = tuple((int(l), int(m)) for l, m in states)
        if not st:
            raise StructuralError("a path needs at least one state")
        if st[0][0] != 0:
            raise StructuralError(f"path must start in row l = 0, got {st[0]}")
        for (l0, m0), (l1, m1) in zip(st, st[1:]):
            if l1 < l0 or m1 < m0 or (l1 + m1) - (l0 + m0) != 1:
                raise StructuralError(f"invalid step {(l0, m0)} -> {(l1, m1)}")
        object.__setattr__(self, "states", st)

    def __setattr__(self, name, value):
        raise AttributeError("ZigzagPath is immutable")

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def __eq__(self, other):
        return isinstance(other, ZigzagPath) and self.states == other.states

    def __hash__(self):
        return hash(self.states)

    def __repr__(self):
        return f"ZigzagPath({list(self.states)})"

    @property
    def ls(self) -> np.ndarray:
        return np.array([s[0] for s in self.states], dtype=np.int64)

    @property
    def ms(self) -> np.ndarray:
        return np.array([s[1] for s in self.states], dtype=np.int64)

    @property
    def terminal(self) -> State:
        return self.states[-1]

    def prefix(self, n: int) -> "ZigzagPath":
        if not 1 <= n <= len(self.states):
            raise ValidationError(f"prefix length {n} outside [1, {len(self.states)}]")
        return ZigzagPath(self.states[:n])


class PricingPolicy:
    """Effective arrival rate ``lam[l, m]`` in ``[0, Lambda]`` per state.

    An arrival admitted at the cap state ``(l, M)`` uses ``lam[l, M]``.
    """

    __slots__ = ("lam",)

    def __init__(self, lam, Lambda: float | None = None):
        a = np.asarray(lam, dtype=float)
        if a.ndim != 2:
            raise ValidationError("pricing grid must be 2-D")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValidationError("pricing rates must be finite and nonnegative")
        if Lambda is not None and np.any(a > Lambda * (1 + 1e-12)):
            raise ValidationError(f"pricing rates exceed Lambda = {Lambda}")
        object.__setattr__(self, "lam", _frozen(a))

    def __setattr__(self, name, value):
        raise AttributeError("PricingPolicy is immutable")

    @classmethod
    def constant(cls, shape, lam_bar: float, Lambda: float | None = None) -> "PricingPolicy":
        return cls(np.full(shape, float(lam_bar)), Lambda)

    @classmethod
    def on_path(cls, path: ZigzagPath, rates_along, shape, Lambda: float | None = None,
                fill: float = 0.0) -> "PricingPolicy":
        """Place ``rates_along[i]`` at path state ``i``; other states get ``fill``."""
        a = np.full(shape, float(fill))
        for (l, m), r in zip(path.states, rates_along):
            a[l, m] = r
        return cls(a, Lambda)

    @classmethod
    def static_on_path(cls, path: ZigzagPath, lam_bar: float, cutoff: int, shape,
                       Lambda: float | None = None) -> "PricingPolicy":
        """Static rate on the first ``cutoff - 1`` path states, zero elsewhere."""
        along = [lam_bar if i < cutoff - 1 else 0.0 for i in range(len(path))]
        return cls.on_path(path, along, shape, Lambda)

    def __call__(self, l: int, m: int) -> float:
        return float(self.lam[l, m])

    def __eq__(self, other):
        return isinstance(other, PricingPolicy) and np.array_equal(self.lam, other.lam)

    def __hash__(self):
        return hash(self.lam.tobytes())

    def __repr__(self):
        return f"PricingPolicy(shape={self.lam.shape}, max={self.lam.max():.4g})"


class ZigzagCheck(NamedTuple):
    ok: bool
    axis: str | None = None
    index: int | None = None

    def __bool__(self):
        return self.ok


def _is_01(v: np.ndarray) -> bool:
    # 0...0 1...1
    return not np.any(np.diff(v.astype(np.int8)) < 0)


def is_zigzag(policy: DispatchPolicy) -> ZigzagCheck:
    """Rows read 0..0 1..1 in m and columns read 1..1 0..0 in l.

    The overflow column counts as column ``M + 1``.
    """
    ext = policy.extended()
    for l in range(ext.shape[0]):
        if not _is_01(ext[l]):
            return ZigzagCheck(False, "row", l)
    for m in range(ext.shape[1]):
        if not _is_01(ext[::-1, m]):
            return ZigzagCheck(False, "col", m)
    return ZigzagCheck(True)


def apply_dispatch_closure(policy: DispatchPolicy, s: State) -> State:
    """Dispatch while the policy says so; each step moves (l, m) -> (l+1, m-1)."""
    l, m = int(s[0]), int(s[1])
    while policy.phi(l, m) == 1:
        l, m = l + 1, m - 1
    return (l, m)


def path_of_policy(policy: DispatchPolicy) -> ZigzagPath:
    """Trace the recurrent boundary of a zigzag policy.

    The origin is ``(0, m1)`` with ``m1`` the first column whose successor in
    row 0 dispatches (``M`` if none). From each state the path steps right
    when an arrival is held and down when it triggers a dispatch. It stops at
    ``(L, M)`` or at a cap state whose arrivals are blocked.
    """
    chk = is_zigzag(policy)
    if not chk:
        raise StructuralError(f"policy is not zigzag (first violation: {chk.axis} {chk.index})")
    L, M = policy.L, policy.M
    m1 = M
    for m in range(M + 1):
        if policy.phi(0, m + 1) == 1:
            m1 = m
            break
    states = [(0, m1)]
    l, m = 0, m1
    while True:
        if m < M:
            if policy.phi(l, m + 1) == 0:
                m += 1
            else:
                l += 1
        elif l < L and policy.overflow[l] == 1:
            l += 1
        else:
            break
        states.append((l, m))
    return ZigzagPath(states)


def policy_of_path(path: ZigzagPath, L: int, M: int) -> DispatchPolicy:
    """Zigzag policy whose recurrent boundary is ``path``.

    In each row touched by the path, states right of the path dispatch and
    the rest hold; untouched rows hold everywhere. Arrivals at the cap are
    admitted with a dispatch exactly where the path leaves column ``M``
    downward, or where the row's threshold lies left of the cap.
    """
    ls, ms = path.ls, path.ms
    if ls.max() > L or ms.max() > M:
        raise ValidationError(f"path leaves the ({L}+1)x({M}+1) grid")
    grid = np.zeros((L + 1, M + 1), dtype=np.int8)
    overflow = np.zeros(L + 1, dtype=np.int8)
    down_at_cap = {path[i][0] for i in range(len(path) - 1)
                   if path[i][1] == M and path[i + 1][0] == path[i][0] + 1}
    cols = np.arange(M + 1)
    for l in range(int(ls.max()) + 1):
        if l == L:
            break
        tau = int(ms[ls == l].max())
        grid[l] = cols > tau
        if tau < M or l in down_at_cap:
            overflow[l] = 1
    return DispatchPolicy(grid, overflow)


def greedy_policy(cfg: ModelConfig) -> DispatchPolicy:
    """Dispatch whenever an idle driver and a waiting rider coexist."""
    grid = np.zeros(cfg.shape, dtype=np.int8)
    grid[: cfg.L, 1:] = 1
    overflow = np.ones(cfg.L + 1, dtype=np.int8)
    overflow[cfg.L] = 0
    return DispatchPolicy(grid, overflow)
