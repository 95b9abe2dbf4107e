"""Config loading, CSV/JSON artifacts and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .model import (DispatchPolicy, LinearDemand, ModelConfig, PricingPolicy, RawCosts, ReducedCosts,
                    ValidationError, ZigzagPath, reduce_costs)
from .rates import RateTable, mean_trip_time

MODEL_KEYS = ("L", "Lambda", "M", "t0", "p0", "p_max")
RAW_KEYS = ("w_s_d", "w_o_d", "w_p_r", "w_q_r")
REDUCED_KEYS = ("c_d", "c_r", "p0_eff")
MANIFEST_PREFIX = "# manifest: "


@dataclass(frozen=True)
class Config:
    model: ModelConfig
    costs: ReducedCosts
    raw: RawCosts | None
    source: dict

    @property
    def curve(self) -> LinearDemand:
        return LinearDemand(self.model.Lambda, self.model.p_max)

    def with_costs(self, c_d: float | None = None, c_r: float | None = None) -> "Config":
        """Override reduced costs; raw weights no longer apply once overridden."""
        if c_d is None and c_r is None:
            return self
        c = ReducedCosts(self.costs.c_d if c_d is None else c_d, self.costs.c_r if c_r is None else c_r,
                         self.costs.p0_eff)
        return Config(self.model, c, None, {**self.source, "c_d": c.c_d, "c_r": c.c_r})


def parse_config(d: dict) -> Config:
    """Build a configuration from a mapping with exactly the documented keys.

    ``t0: auto`` uses the mean trip time in the default square.
    """
    if not isinstance(d, dict):
        raise ValidationError("configuration must be a mapping")
    unknown = set(d) - set(MODEL_KEYS) - set(RAW_KEYS) - set(REDUCED_KEYS)
    if unknown:
        raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
    missing = [k for k in MODEL_KEYS if k not in d]
    if missing:
        raise ValidationError(f"missing configuration keys: {missing}")
    t0 = d["t0"]
    if t0 is None or t0 == "auto":
        t0 = mean_trip_time()
    try:
        model = ModelConfig(L=int(d["L"]), Lambda=float(d["Lambda"]), M=int(d["M"]), t0=float(t0),
                            p0=float(d["p0"]), p_max=float(d["p_max"]))
    except (TypeError, ValueError) as e:
        raise ValidationError(f"bad configuration value: {e}") from e
    has_raw = [k in d for k in RAW_KEYS]
    has_red = [k in d for k in REDUCED_KEYS]
    if any(has_raw) and any(has_red):
        raise ValidationError("give either raw weights or reduced costs, not both")
    if all(has_raw):
        raw = RawCosts(*(float(d[k]) for k in RAW_KEYS))
        return Config(model, reduce_costs(raw, model.p0, model.t0), raw, dict(d))
    if has_red[0] and has_red[1]:
        p0_eff = float(d.get("p0_eff", model.p0))
        return Config(model, ReducedCosts(float(d["c_d"]), float(d["c_r"]), p0_eff), None, dict(d))
    raise ValidationError("configuration needs all of w_s_d, w_o_d, w_p_r, w_q_r or c_d, c_r")


def load_config(path) -> Config:
    """Read a YAML or JSON configuration file."""
    text = Path(path).read_text()
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ValidationError(f"cannot parse configuration {path}: {e}") from e
    return parse_config(d)


def content_hash(*parts) -> str:
    """Short sha256 over canonical JSON of ``parts`` (bytes are hashed as-is)."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, (bytes, bytearray)):
            h.update(bytes(p))
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, header, rows, manifest: str | None = None) -> Path:
    """Write a CSV whose first line records the manifest hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    if manifest is not None:
        buf.write(f"{MANIFEST_PREFIX}{manifest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[list[str], list[list[str]], str | None]:
    """Return ``(header, rows, manifest)``; comment lines are skipped."""
    manifest = None
    lines = []
    for line in Path(path).read_text().splitlines():
        if line.startswith(MANIFEST_PREFIX):
            manifest = line[len(MANIFEST_PREFIX):].strip()
        elif line.startswith("#") or not line.strip():
            continue
        else:
            lines.append(line)
    if not lines:
        raise ValidationError(f"{path} has no header")
    rows = list(csv.reader(lines))
    return rows[0], rows[1:], manifest


def write_json(path, obj, manifest: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if manifest is not None:
        obj = {"manifest": manifest, **obj}
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


# grids: one row per l, one column per m

def write_grid(path, grid, manifest: str | None = None, extra_col: tuple[str, np.ndarray] | None = None) -> Path:
    g = np.asarray(grid)
    header = ["l"] + [str(m) for m in range(g.shape[1])]
    cols = [g]
    if extra_col is not None:
        header.append(extra_col[0])
        cols.append(np.asarray(extra_col[1]).reshape(-1, 1))
    data = np.hstack(cols)
    return write_csv(path, header, ([l, *row] for l, row in enumerate(data.tolist())), manifest)


def read_grid(path, extra: str | None = None):
    header, rows, _ = read_csv(path)
    if not header or header[0] != "l":
        raise ValidationError(f"{path}: grid files start with an 'l' column")
    try:
        vals = np.array([[float(x) for x in r[1:]] for r in rows], dtype=float)
        ls = [int(r[0]) for r in rows]
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e
    if ls != list(range(len(rows))):
        raise ValidationError(f"{path}: rows must list l = 0, 1, ... in order")
    if extra is not None:
        if header[-1] != extra:
            raise ValidationError(f"{path}: expected a trailing {extra!r} column")
        return vals[:, :-1], vals[:, -1]
    return vals


def write_rates(path, rates: RateTable, manifest: str | None = None) -> Path:
    return write_grid(path, rates.mu, manifest)


def read_rates(path) -> RateTable:
    return RateTable(read_grid(path))


def write_policy(path, policy: DispatchPolicy, manifest: str | None = None) -> Path:
    return write_grid(path, policy.grid, manifest, ("overflow", policy.overflow))


def read_policy(path) -> DispatchPolicy:
    grid, over = read_grid(path, extra="overflow")
    return DispatchPolicy(grid.astype(int), over.astype(int))


def write_pricing(path, pricing: PricingPolicy, manifest: str | None = None) -> Path:
    return write_grid(path, pricing.lam, manifest)


def read_pricing(path, Lambda: float | None = None) -> PricingPolicy:
    return PricingPolicy(read_grid(path), Lambda)


def write_path(path, zz: ZigzagPath, manifest: str | None = None) -> Path:
    return write_csv(path, ["l", "m"], zz.states, manifest)


def read_path(path) -> ZigzagPath:
    header, rows, _ = read_csv(path)
    if header != ["l", "m"]:
        raise ValidationError(f"{path}: expected columns l,m")
    return ZigzagPath([(int(a), int(b)) for a, b in rows])


CORPUS_HEADER = ["l", "m", "avg_pickup", "count"]


def write_corpus(path, rows, manifest: str | None = None) -> Path:
    return write_csv(path, CORPUS_HEADER, ((int(l), int(m), float(a), int(c)) for l, m, a, c in rows), manifest)


def read_corpus(path) -> np.ndarray:
    header, rows, _ = read_csv(path)
    if header != CORPUS_HEADER:
        raise ValidationError(f"{path}: expected columns {','.join(CORPUS_HEADER)}")
    return np.array([[float(x) for x in r] for r in rows], dtype=float).reshape(-1, 4)


EVENT_HEADER = ["time", "event", "l", "m", "extra"]


def write_events(path, events, manifest: str | None = None) -> Path:
    from .sim.engine import EVENT_NAMES
    rows = ((float(e.time), EVENT_NAMES[int(e.event)], int(e.l), int(e.m), float(e.extra)) for e in events)
    return write_csv(path, EVENT_HEADER, rows, manifest)


SWEEP_HEADER = ["Lambda", "policy", "objective", "stderr"]


def write_sweep(path, rows, manifest: str | None = None) -> Path:
    return write_csv(path, SWEEP_HEADER, rows, manifest)
