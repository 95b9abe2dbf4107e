"""Service-rate tables: estimation, power-law calibration and structural audits."""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple

import numpy as np
import scipy.linalg

from .model import DispatchPolicy, ModelConfig, State, ValidationError


class InsufficientDataError(ValueError):
    pass


class DataError(ValueError):
    pass


class RateTable:
    """Per-driver completion rates ``mu[l, m]`` on the (L + 1) x (M + 1) grid."""

    __slots__ = ("mu", "pickup", "pickup_se")

    def __init__(self, mu, pickup=None, pickup_se=None):
        mu = np.array(mu, dtype=float)
        if mu.ndim != 2:
            raise ValidationError("rate table must be 2-D")
        if not np.all(np.isfinite(mu)) or np.any(mu < 0):
            raise ValidationError("rates must be finite and nonnegative")
        if mu.shape[0] > 1 and np.any(mu[1:] <= 0):
            raise ValidationError("rates must be positive for l >= 1")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        for name, v in (("pickup", pickup), ("pickup_se", pickup_se)):
            if v is not None:
                v = np.array(v, dtype=float)
                v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __setattr__(self, name, value):
        raise AttributeError("RateTable is immutable")

    @property
    def L(self) -> int:
        return self.mu.shape[0] - 1

    @property
    def M(self) -> int:
        return self.mu.shape[1] - 1

    @property
    def mu_bar(self) -> float:
        return float(self.mu.max())

    def truncated(self, M: int) -> "RateTable":
        if M > self.M:
            raise ValidationError(f"cannot truncate a table with M = {self.M} to M = {M}")
        cut = lambda a: None if a is None else a[:, : M + 1]
        return RateTable(self.mu[:, : M + 1], cut(self.pickup), cut(self.pickup_se))

    def __eq__(self, other):
        return isinstance(other, RateTable) and np.array_equal(self.mu, other.mu)

    def __repr__(self):
        return f"RateTable(L={self.L}, M={self.M}, mu_bar={self.mu_bar:.4g})"


def mean_trip_time(side: float = 10.0, speed: float = 1.0) -> float:
    """Mean distance between two uniform points in a square, over speed."""
    k = (2.0 + math.sqrt(2.0) + 5.0 * math.log(1.0 + math.sqrt(2.0))) / 15.0
    return k * side / speed


def _cell_rng(seed: int, l: int, m: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, l, m])))


def nearest_pair_distances(rng: np.random.Generator, n_drivers: int, n_riders: int,
                           n_samples: int, side: float = 10.0, chunk: int = 1 << 20) -> np.ndarray:
    """Closest driver-rider distance for ``n_samples`` uniform configurations."""
    out = np.empty(n_samples)
    per = max(1, chunk // (n_drivers * n_riders))
    done = 0
    while done < n_samples:
        k = min(per, n_samples - done)
        d = rng.uniform(0.0, side, size=(k, n_drivers, 1, 2))
        r = rng.uniform(0.0, side, size=(k, 1, n_riders, 2))
        d2 = ((d - r) ** 2).sum(axis=-1)
        out[done: done + k] = np.sqrt(d2.reshape(k, -1).min(axis=1))
        done += k
    return out


PICKUP_CONVENTIONS = ("plus_one", "virtual")


def pickup_population(L: int, l: int, m: int, convention: str = "plus_one") -> tuple[int, int]:
    """Idle drivers and waiting riders sampled for the pickup at state (l, m).

    ``plus_one`` counts the pair being matched: a dispatch that lands in
    (l, m) was chosen among ``L - l + 1`` idle drivers and ``m + 1`` riders.
    ``virtual`` samples ``L - l`` drivers and ``m`` riders, with one virtual
    driver or rider where the count would be zero.
    """
    if convention == "plus_one":
        return L - l + 1, m + 1
    if convention == "virtual":
        return max(L - l, 1), max(m, 1)
    raise ValidationError(f"unknown pickup convention {convention!r}")


def mc_estimate_rates(cfg: ModelConfig, samples_per_state: int, seed: int,
                      side: float = 10.0, speed: float = 1.0,
                      convention: str = "plus_one") -> RateTable:
    """Monte-Carlo rates ``mu = 1 / (mean nearest-pair pickup + t0)``.

    Drivers and riders are placed uniformly in the square with counts from
    ``pickup_population``. Each cell has its own sub-stream keyed by
    ``(seed, l, m)``, so cells can be computed in any order.
    """
    if samples_per_state < 1:
        raise ValidationError("samples_per_state must be >= 1")
    pickup_population(1, 0, 0, convention)
    L, M = cfg.L, cfg.M
    pickup = np.empty((L + 1, M + 1))
    se = np.empty((L + 1, M + 1))
    for l in range(L + 1):
        for m in range(M + 1):
            rng = _cell_rng(seed, l, m)
            nd, nr = pickup_population(L, l, m, convention)
            dist = nearest_pair_distances(rng, nd, nr, samples_per_state, side)
            pickup[l, m] = dist.mean() / speed
            se[l, m] = dist.std(ddof=1) / speed / math.sqrt(samples_per_state) if samples_per_state > 1 else np.nan
    return RateTable(1.0 / (pickup + cfg.t0), pickup, se)


class StateType(enum.Enum):
    TYPE1 = 1
    TYPE2 = 2


def classify_state(rates: RateTable, s: State) -> StateType:
    """Type 1 if completions at ``s`` outpace those after one more dispatch."""
    l, m = s
    mu = rates.mu
    if l == rates.L or m == 0 or l * mu[l, m] > (l + 1) * mu[l + 1, m - 1]:
        return StateType.TYPE1
    return StateType.TYPE2


def type_grid(rates: RateTable) -> np.ndarray:
    """1 for Type-1 states, 2 for Type-2 states."""
    mu = rates.mu
    L, M = rates.L, rates.M
    g = np.ones(mu.shape, dtype=np.int8)
    l = np.arange(L)[:, None]
    here = l * mu[:L, 1:]
    there = (l + 1) * mu[1:, :M]
    g[:L, 1:] = np.where(here > there, 1, 2)
    return g


class Violation(NamedTuple):
    condition: str
    l: int
    m: int
    amount: float

    def __str__(self):
        return f"{self.condition} at (l={self.l}, m={self.m}) by {self.amount:.3g}"


def check_assumption2(rates: RateTable, slack: float = 1e-9) -> list[Violation]:
    """Audit the concavity-type conditions on the service-rate table.

    With ``A(l, m) = l (mu[l, m+1] - mu[l, m])`` and
    ``B(l, m) = (l+1) mu[l+1, m] - l mu[l, m]`` the table passes when ``A``
    is non-increasing in m and non-decreasing in l, and ``B`` is
    non-increasing in l and non-decreasing in m. Each violated inequality is
    reported at the lower-index cell. Tolerance is ``slack * mu_bar``.
    """
    mu = rates.mu
    tol = slack * rates.mu_bar
    l = np.arange(mu.shape[0])[:, None]
    A = l * (mu[:, 1:] - mu[:, :-1])
    B = (l[:-1] + 1) * mu[1:] - l[:-1] * mu[:-1]
    out: list[Violation] = []
    checks = (
        ("A increases in m", A[:, 1:] - A[:, :-1]),
        ("A decreases in l", A[:-1] - A[1:]),
        ("B increases in l", B[1:] - B[:-1]),
        ("B decreases in m", B[:, :-1] - B[:, 1:]),
    )
    for name, d in checks:
        for i, j in zip(*np.nonzero(d > tol)):
            out.append(Violation(name, int(i), int(j), float(d[i, j])))
    return out


def violation_fraction(rates: RateTable, slack: float = 1e-9) -> float:
    """Share of tested inequalities that fail (soft audit for noisy tables)."""
    L, M = rates.L, rates.M
    total = (L + 1) * max(M - 1, 0) + L * M + max(L - 1, 0) * (M + 1) + L * M
    return len(check_assumption2(rates, slack)) / total if total else 0.0


def closed_form_zigzag(rates: RateTable) -> DispatchPolicy:
    """Hold at Type-1 states and dispatch at Type-2 states.

    The admission with dispatch at the cap repeats the action of column M.
    """
    if check_assumption2(rates):
        warnings.warn("rate table fails the structural assumption; closed-form policy may be suboptimal",
                      stacklevel=2)
    g = (type_grid(rates) == 2).astype(np.int8)
    return DispatchPolicy(g, g[:, -1].copy())


@dataclass(frozen=True)
class PowerLawFit:
    """eta(l, m) = C (m + 1)^alpha1 (L - l + 1)^alpha2."""

    C: float
    alpha1: float
    alpha2: float
    se_C: float
    se_alpha1: float
    se_alpha2: float
    se_logC: float
    n_samples: int
    L: int

    def __post_init__(self):
        if not self.C > 0:
            raise ValidationError("C must be positive")

    def eta(self, l, m):
        l = np.asarray(l, dtype=float)
        m = np.asarray(m, dtype=float)
        return self.C * (m + 1.0) ** self.alpha1 * (self.L - l + 1.0) ** self.alpha2

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps({
            "coefficients": {"C": d["C"], "alpha1": d["alpha1"], "alpha2": d["alpha2"]},
            "stderr": {"C": d["se_C"], "alpha1": d["se_alpha1"], "alpha2": d["se_alpha2"],
                       "logC": d["se_logC"]},
            "n": d["n_samples"],
            "L": d["L"],
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PowerLawFit":
        d = json.loads(text)
        c, s = d["coefficients"], d["stderr"]
        return cls(c["C"], c["alpha1"], c["alpha2"], s["C"], s["alpha1"], s["alpha2"],
                   s["logC"], int(d["n"]), int(d["L"]))


def fit_powerlaw(samples: Iterable, L: int, min_count: int = 10) -> PowerLawFit:
    """OLS of ``log eta`` on ``log(m + 1)`` and ``log(L - l + 1)``.

    ``samples`` rows are ``(l, m, avg_pickup, count)``. Rows with fewer than
    ``min_count`` observations are dropped; rows are weighted equally.
    """
    arr = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples, dtype=float)
    if arr.size == 0:
        raise InsufficientDataError("no samples")
    arr = arr.reshape(-1, 4)
    arr = arr[arr[:, 3] >= min_count]
    if len(arr) < 3:
        raise InsufficientDataError(f"need at least 3 usable samples, have {len(arr)}")
    if np.any(arr[:, 2] <= 0):
        raise DataError("pickup times must be positive")
    if np.any(arr[:, 0] > L) or np.any(arr[:, 0] < 0) or np.any(arr[:, 1] < 0):
        raise DataError("sample state outside the grid")
    X = np.column_stack([np.ones(len(arr)), np.log(arr[:, 1] + 1.0), np.log(L - arr[:, 0] + 1.0)])
    y = np.log(arr[:, 2])
    beta, _, rank, _ = scipy.linalg.lstsq(X, y, lapack_driver="gelsy")
    if rank < 3:
        raise InsufficientDataError("design matrix is rank deficient")
    resid = y - X @ beta
    dof = len(y) - 3
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * scipy.linalg.pinvh(X.T @ X)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    C = math.exp(beta[0])
    return PowerLawFit(C=C, alpha1=float(beta[1]), alpha2=float(beta[2]),
                       se_C=C * float(se[0]), se_alpha1=float(se[1]), se_alpha2=float(se[2]),
                       se_logC=float(se[0]), n_samples=len(arr), L=int(L))


def powerlaw_rate_table(fit: PowerLawFit, cfg: ModelConfig) -> RateTable:
    """mu(l, m) = 1 / (eta(l, m) + t0) over the configured grid."""
    l = np.arange(cfg.L + 1)[:, None]
    m = np.arange(cfg.M + 1)[None, :]
    eta = fit.C * (m + 1.0) ** fit.alpha1 * (cfg.L - l + 1.0) ** fit.alpha2
    return RateTable(1.0 / (eta + cfg.t0), pickup=eta)
