"""Command-line pipelines: rate estimation, solving, simulation, calibration, fitting, sweeps.

Every command writes into ``<out>/<command>-<hash>/`` where the hash covers the
command, its inputs and flags, so reruns land in the same place and produce
byte-identical files. Wall-clock timings go to ``timings.json`` beside them
and are the only nondeterministic output.

Exit codes: 0 success, 2 validation error, 3 solver non-convergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import io as zio
from .chain import REPORT_FIELDS, NumericalError, evaluate
from .model import PricingPolicy, StructuralError, ValidationError, ZigzagPath
from .rates import (DataError, InsufficientDataError, check_assumption2, fit_powerlaw, mc_estimate_rates,
                    powerlaw_rate_table)
from .solvers import ConvergenceError, relative_value_iteration, solve_greedy_dynamic, zigzag_dp

log = logging.getLogger("zigzag")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4
COST_GRID = (0.5, 0.75, 1.0)
DEFAULT_LAMBDAS = tuple(range(20, 61, 4))


class Run:
    """Output directory keyed by the manifest hash of one invocation."""

    def __init__(self, out: str, command: str, inputs: dict, files=()):
        blobs = [Path(f).read_bytes() for f in files if f is not None]
        self.hash = zio.content_hash(command, inputs, *blobs)
        self.dir = Path(out) / f"{command}-{self.hash}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = {"command": command, "hash": self.hash, "inputs": inputs,
                         "files": [str(f) for f in files if f is not None], "out": str(self.dir)}
        self.timings: dict = {}
        self._t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        return self.dir / name

    def finish(self):
        zio.write_json(self.path("manifest.json"), self.manifest)
        self.timings["total"] = time.perf_counter() - self._t0
        self.path("timings.json").write_text(json.dumps(self.timings, indent=2, sort_keys=True) + "\n")
        print(self.dir)


def _config(args) -> zio.Config:
    cfg = zio.load_config(args.config)
    return cfg.with_costs(getattr(args, "cd", None), getattr(args, "cr", None))


def _report_row(c_d, c_r, method, rep) -> list:
    return [c_d, c_r, method] + [getattr(rep, f) for f in REPORT_FIELDS]


REPORT_HEADER = ["c_d", "c_r", "method", *REPORT_FIELDS]


# ---------------------------------------------------------------- commands

def cmd_estimate_rates(args) -> int:
    conf = _config(args)
    run = Run(args.out, "estimate-rates", {"config": conf.source, "samples": args.samples, "seed": args.seed,
                                           "convention": args.convention})
    t = time.perf_counter()
    rates = mc_estimate_rates(conf.model, args.samples, args.seed, convention=args.convention)
    run.timings["estimate"] = time.perf_counter() - t
    zio.write_rates(run.path("rates.csv"), rates, run.hash)
    zio.write_grid(run.path("pickup.csv"), rates.pickup, run.hash)
    viol = check_assumption2(rates)
    zio.write_csv(run.path("audit.csv"), ["condition", "l", "m", "amount"], viol, run.hash)
    log.info("%d soft violations of the rate-table conditions", len(viol))
    run.finish()
    return EXIT_OK


def _solve(method, pricing, rates, conf, wall_cap, action_mode="single_dispatch"):
    if method == "zigzag":
        return zigzag_dp(rates, conf.costs, conf.curve, conf.model, pricing=pricing)
    if method == "vi":
        return relative_value_iteration(rates, conf.costs, conf.curve, conf.model, action_mode=action_mode,
                                        wall_cap=wall_cap)
    if method == "greedy":
        return solve_greedy_dynamic(rates, conf.costs, conf.curve, conf.model)
    raise ValidationError(f"unknown method {method!r}")


def _write_solution(run, res, conf, prefix=""):
    zio.write_json(run.path(f"{prefix}result.json"), res.to_dict(), run.hash)
    zio.write_policy(run.path(f"{prefix}policy.csv"), res.dispatch, run.hash)
    zio.write_pricing(run.path(f"{prefix}pricing.csv"), res.pricing, run.hash)
    if res.path is not None:
        zio.write_path(run.path(f"{prefix}path.csv"), res.path, run.hash)


def cmd_solve(args) -> int:
    conf = _config(args)
    inputs = {"config": conf.source, "method": args.method, "pricing": args.pricing,
              "action_mode": args.action_mode, "wall_cap": args.wall_cap}
    run = Run(args.out, "solve", inputs, [args.rates])
    rates = zio.read_rates(args.rates)
    res = _solve(args.method, args.pricing, rates, conf, args.wall_cap, args.action_mode)
    run.timings["solve"] = res.wall_time
    _write_solution(run, res, conf)
    zio.write_csv(run.path("row.csv"), ["c_d", "c_r", "method", "objective", "iterations", "partial"],
                  [[conf.costs.c_d, conf.costs.c_r, res.method, f"{res.objective:.2f}", res.iterations,
                    res.partial]], run.hash)
    if args.method != "vi":
        rep = evaluate(res.dispatch, res.pricing, rates.truncated(conf.model.M), conf.costs, conf.curve,
                       conf.model)
        zio.write_csv(run.path("report.csv"), REPORT_HEADER,
                      [_report_row(conf.costs.c_d, conf.costs.c_r, res.method, rep)], run.hash)
    if res.partial:
        log.warning("wall-clock cap reached; result is partial")
    run.finish()
    return EXIT_OK


COMPARE_COLUMNS = ("vi", "greedy_dynamic", "zigzag_dynamic", "zigzag_static")


def cmd_compare(args) -> int:
    """Objective of all four methods on a grid of (c_d, c_r)."""
    base = zio.load_config(args.config)
    cds, crs = args.cd or COST_GRID, args.cr or COST_GRID
    run = Run(args.out, "compare", {"config": base.source, "cd": list(cds), "cr": list(crs),
                                    "wall_cap": args.wall_cap}, [args.rates])
    rates = zio.read_rates(args.rates)
    table, full = [], []
    for cd in sorted(cds):
        for cr in sorted(crs):
            conf = base.with_costs(cd, cr)
            t = time.perf_counter()
            res = {
                "vi": _solve("vi", None, rates, conf, args.wall_cap),
                "greedy_dynamic": _solve("greedy", None, rates, conf, args.wall_cap),
                "zigzag_dynamic": _solve("zigzag", "dynamic", rates, conf, args.wall_cap),
                "zigzag_static": _solve("zigzag", "static", rates, conf, args.wall_cap),
            }
            run.timings[f"{cd},{cr}"] = time.perf_counter() - t
            table.append([cd, cr] + [f"{res[k].objective:.2f}" for k in COMPARE_COLUMNS]
                         + ["partial" if res["vi"].partial else "ok"])
            for k in COMPARE_COLUMNS:
                full.append([cd, cr, k, res[k].objective, res[k].iterations, res[k].partial])
    zio.write_csv(run.path("table.csv"), ["c_d", "c_r", *COMPARE_COLUMNS, "vi_status"], table, run.hash)
    zio.write_csv(run.path("objectives.csv"), ["c_d", "c_r", "method", "objective", "iterations", "partial"],
                  full, run.hash)
    run.finish()
    return EXIT_OK


def _sim_inputs(args, conf):
    from .sim import SimConfig
    cfg = conf.model
    if args.Lambda is not None:
        cfg = cfg.with_Lambda(args.Lambda)
    return SimConfig(cfg, T=args.T, seed=args.seed, warmup=args.warmup)


def _sim_costs(conf):
    return conf.raw if conf.raw is not None else conf.costs


def _load_solution(path, conf):
    d = json.loads(Path(path).read_text())
    from .model import DispatchPolicy
    policy = DispatchPolicy(np.array(d["dispatch"], dtype=int), np.array(d["dispatch_overflow"], dtype=int))
    pricing = PricingPolicy(np.array(d["pricing"], dtype=float), conf.curve.Lambda)
    zz = ZigzagPath([tuple(s) for s in d["path"]]) if d.get("path") else None
    return policy, pricing, zz


def _make_rule(args, conf):
    from .sim import ConstantRadius, CountZigzag, TwoRadius, extend_pricing_by_row
    shape = conf.model.shape
    radii = args.radius or []
    if args.rule == "radius":
        if len(radii) != 1:
            raise ValidationError("--rule radius needs exactly one --radius")
        if args.solution is not None:
            _, pricing, _ = _load_solution(args.solution, conf)
        elif args.lam is not None:
            pricing = PricingPolicy.constant(shape, args.lam, conf.curve.Lambda)
        else:
            raise ValidationError("--rule radius needs --lam or --solution")
        return ConstantRadius(radii[0]), pricing
    if args.solution is None:
        raise ValidationError(f"--rule {args.rule} needs --solution")
    policy, pricing, zz = _load_solution(args.solution, conf)
    if zz is not None:
        pricing = extend_pricing_by_row(pricing, zz)
    if args.rule == "count":
        return CountZigzag(policy), pricing
    if len(radii) != 2:
        raise ValidationError("--rule two-radius needs --radius r0 r1")
    return TwoRadius(radii[0], radii[1], policy), pricing


SIM_HEADER = ["seed", "rule", *REPORT_FIELDS, "raw_objective", "nominal_objective"]


def cmd_simulate(args) -> int:
    from .sim import simulate
    conf = _config(args)
    inputs = {"config": conf.source, "rule": args.rule, "radius": args.radius, "lam": args.lam, "T": args.T,
              "seed": args.seed, "seeds": args.seeds, "warmup": args.warmup, "Lambda": args.Lambda,
              "events": args.events}
    run = Run(args.out, "simulate", inputs, [args.solution])
    sim = _sim_inputs(args, conf)
    rule, pricing = _make_rule(args, conf)
    rows = []
    for k in range(args.seeds):
        s = sim.replace(seed=sim.seed + k)
        t = time.perf_counter()
        res = simulate(s, rule, pricing, _sim_costs(conf), conf.curve, log_events=args.events and k == 0)
        run.timings[f"seed {s.seed}"] = time.perf_counter() - t
        rep = res.report
        rows.append([s.seed, args.rule] + [getattr(rep, f) for f in REPORT_FIELDS]
                    + [res.raw_objective if res.raw_objective is not None else float("nan"),
                       res.nominal_objective])
        if res.events is not None:
            zio.write_events(run.path("events.csv"), res.events, run.hash)
    zio.write_csv(run.path("runs.csv"), SIM_HEADER, rows, run.hash)
    obj = np.array([r[2] for r in rows])
    se = float(obj.std(ddof=1) / np.sqrt(len(obj))) if len(obj) > 1 else float("nan")
    zio.write_json(run.path("summary.json"), {"objective_mean": float(obj.mean()), "objective_stderr": se,
                                              "n_seeds": len(obj)}, run.hash)
    run.finish()
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .sim import calibrate_constant_radius
    conf = _config(args)
    inputs = {"config": conf.source, "T": args.T, "seed": args.seed, "warmup": args.warmup,
              "r_init": args.r_init, "lam_init": args.lam_init, "step": args.step}
    run = Run(args.out, "calibrate", inputs)
    sim = _sim_inputs(args, conf)
    t = time.perf_counter()
    cal = calibrate_constant_radius(sim, _sim_costs(conf), conf.curve, args.r_init, args.lam_init, args.step)
    run.timings["calibrate"] = time.perf_counter() - t
    zio.write_json(run.path("calibration.json"), {"radius": cal.r, "lam": cal.lam, "objective": cal.objective,
                                                  "converged": cal.converged}, run.hash)
    zio.write_csv(run.path("trace.csv"), ["round", "radius", "lam", "objective"], cal.trace, run.hash)
    run.finish()
    return EXIT_OK


def cmd_fit(args) -> int:
    from .sim import collect_pickup_samples
    conf = _config(args)
    inputs = {"config": conf.source, "T": args.T, "seed": args.seed, "warmup": args.warmup, "lam": args.lam,
              "min_count": args.min_count, "corpus": args.corpus}
    run = Run(args.out, "fit", inputs, [args.corpus])
    if args.corpus is not None:
        rows = zio.read_corpus(args.corpus)
    else:
        sim = _sim_inputs(args, conf)
        t = time.perf_counter()
        rows = collect_pickup_samples(sim, _sim_costs(conf), conf.curve, lam=args.lam, min_count=args.min_count)
        run.timings["corpus"] = time.perf_counter() - t
        zio.write_corpus(run.path("corpus.csv"), rows, run.hash)
    fit = fit_powerlaw(rows, conf.model.L, args.min_count)
    d = json.loads(fit.to_json())
    zio.write_json(run.path("fit.json"), d, run.hash)
    rates = powerlaw_rate_table(fit, conf.model)
    zio.write_rates(run.path("rates.csv"), rates, run.hash)
    zio.write_csv(run.path("audit.csv"), ["condition", "l", "m", "amount"], check_assumption2(rates), run.hash)
    run.finish()
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sim import ConstantRadius, CountZigzag, SimConfig, extend_pricing_by_row, robustness_sweep
    conf = _config(args)
    if args.radius is None or len(args.radius) != 1 or args.lam is None:
        raise ValidationError("sweep needs the calibrated --radius and --lam of the constant-radius policy")
    lambdas = args.Lambdas or DEFAULT_LAMBDAS
    inputs = {"config": conf.source, "T": args.T, "seeds": args.seeds, "seed": args.seed,
              "warmup": args.warmup, "radius": args.radius, "lam": args.lam, "Lambdas": list(lambdas)}
    run = Run(args.out, "sweep", inputs, [args.rates])
    rates = zio.read_rates(args.rates)
    t = time.perf_counter()
    dyn = zigzag_dp(rates, conf.costs, conf.curve, conf.model, pricing="dynamic")
    sta = zigzag_dp(rates, conf.costs, conf.curve, conf.model, pricing="static")
    run.timings["solve"] = time.perf_counter() - t
    shape = conf.model.shape
    policies = {
        "constant_radius": (ConstantRadius(args.radius[0]), PricingPolicy.constant(shape, args.lam, conf.curve.Lambda)),
        "zigzag_dynamic": (CountZigzag(dyn.dispatch), extend_pricing_by_row(dyn.pricing, dyn.path)),
        "zigzag_static": (CountZigzag(sta.dispatch), extend_pricing_by_row(sta.pricing, sta.path)),
    }
    sim = SimConfig(conf.model, T=args.T, seed=args.seed, warmup=args.warmup)
    seeds = tuple(args.seed + k for k in range(args.seeds))
    t = time.perf_counter()
    rows = robustness_sweep(sim, policies, lambdas, _sim_costs(conf), conf.curve, seeds)
    run.timings["sweep"] = time.perf_counter() - t
    zio.write_sweep(run.path("sweep.csv"), rows, run.hash)
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zigzag", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, costs=True):
        sp.add_argument("--config", required=True, help="YAML or JSON model configuration")
        sp.add_argument("--out", default="runs", help="root of the run directories")
        if costs:
            sp.add_argument("--cd", type=float, help="override the reduced driver penalty")
            sp.add_argument("--cr", type=float, help="override the reduced rider penalty")

    def sim_flags(sp, T=20_000.0):
        sp.add_argument("--T", type=float, default=T, help="simulation horizon")
        sp.add_argument("--warmup", type=float, default=1_000.0)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--Lambda", type=float, help="true arrival rate, if it differs from the config")

    sp = sub.add_parser("estimate-rates", help="Monte-Carlo service-rate table")
    common(sp, costs=False)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--convention", choices=("plus_one", "virtual"), default="plus_one",
                    help="driver/rider counts used for the pickup draw")
    sp.set_defaults(func=cmd_estimate_rates)

    sp = sub.add_parser("solve", help="optimise dispatch and pricing on a rate table")
    common(sp)
    sp.add_argument("--rates", required=True)
    sp.add_argument("--method", choices=("zigzag", "vi", "greedy"), default="zigzag")
    sp.add_argument("--pricing", choices=("static", "dynamic"), default="dynamic")
    sp.add_argument("--action-mode", choices=("single_dispatch", "full"), default="single_dispatch")
    sp.add_argument("--wall-cap", type=float, default=1200.0, help="seconds before value iteration stops")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("compare", help="all four methods over a (c_d, c_r) grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default="runs")
    sp.add_argument("--rates", required=True)
    sp.add_argument("--cd", type=float, nargs="+")
    sp.add_argument("--cr", type=float, nargs="+")
    sp.add_argument("--wall-cap", type=float, default=1200.0)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("simulate", help="spatial simulation of one dispatch rule")
    common(sp)
    sim_flags(sp)
    sp.add_argument("--rule", choices=("radius", "count", "two-radius"), required=True)
    sp.add_argument("--radius", type=float, nargs="+")
    sp.add_argument("--lam", type=float, help="constant effective rate for the radius rule")
    sp.add_argument("--solution", help="result.json from solve")
    sp.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    sp.add_argument("--events", action="store_true", help="write the event log of the first seed")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="tune the constant-radius rule and its static rate")
    common(sp)
    sim_flags(sp)
    sp.add_argument("--r-init", type=float, default=2.0)
    sp.add_argument("--lam-init", type=float, default=12.0)
    sp.add_argument("--step", type=float, default=0.2)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("fit", help="pickup-time corpus and power-law rate table")
    common(sp)
    sim_flags(sp)
    sp.add_argument("--lam", type=float, default=12.0)
    sp.add_argument("--min-count", type=int, default=10)
    sp.add_argument("--corpus", help="existing l,m,avg_pickup,count file instead of simulating")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("sweep", help="robustness of fixed policies to the true arrival rate")
    common(sp)
    sim_flags(sp)
    sp.add_argument("--rates", required=True)
    sp.add_argument("--radius", type=float, nargs=1)
    sp.add_argument("--lam", type=float)
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--Lambdas", type=float, nargs="+")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return args.func(args)
    except ConvergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValidationError, StructuralError, DataError, InsufficientDataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
