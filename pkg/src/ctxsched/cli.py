"""ctxsched command line: penalty-curve, solve, simulate, sweep, scale.

Every CSV gets a ``.meta.json`` sidecar holding the resolved configuration, so a
run can be replayed from its outputs alone. Failures print one JSON object on
stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, load_config
from .lagrangian import write_trajectory_csv
from .mdp import write_solution_csv
from .policies import POLICIES
from .simulator import simulate, write_metrics_csv, write_trace_csv


def _version() -> str:
    try:
        return version("ctxsched")
    except PackageNotFoundError:
        return "unknown"


def _f(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_meta(csv_path: Path, command: str, cfg, extra=None) -> None:
    doc = {"command": command, "version": _version(), "config": cfg.resolved()}
    if extra:
        doc.update(extra)
    with open(csv_path.with_suffix(".meta.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr, flush=True)


def cmd_penalty_curve(args, cfg) -> list[Path]:
    states = [json.loads(s) if s.startswith("[") else s for s in args.state] if args.state else None
    res = ex.penalty_curve(cfg, states, args.delta_max)
    path = args.out / "penalty_curve.csv"
    rows = [[d + 1] + [_f(v) for v in res.values[d]] for d in range(res.values.shape[0])]
    _write_csv(path, ["delta"] + res.labels, rows)
    _write_meta(path, "penalty-curve", cfg, {"states": res.labels, "state_ids": res.states,
                                             "stationary_penalty": res.stationary_penalty,
                                             "delta_max": int(res.values.shape[0])})
    return [path]


def _summary_rows(report):
    return [[c.name, c.count, _f(report.lambda_star), _f(c.solution.avg_cost), _f(c.rate),
             c.solution.iterations, _f(c.solution.residual)] for c in report.classes]


def cmd_solve(args, cfg) -> list[Path]:
    report = ex.solve(cfg, lam=args.lam)
    out = []
    path = args.out / "solve_summary.csv"
    _write_csv(path, ["class", "count", "lambda", "avg_cost", "transmit_rate", "iterations", "residual"],
               _summary_rows(report))
    extra = {"lambda_star": report.lambda_star, "dual_value": report.dual_value,
             "bound_per_arm": report.bound_per_arm, "converged": report.converged,
             "N": len(report.fleet.arms), "M": report.fleet.M,
             "rounds": report.dual.rounds if report.dual else 0}
    out.append(path)
    for c in report.classes:
        p = args.out / f"solution_{c.name}.csv"
        write_solution_csv(c.solution, c.gains, next(a for n, a, _ in report.fleet.classes if n == c.name).source, p)
        out.append(p)
    if report.dual is not None:
        p = args.out / "dual_trajectory.csv"
        write_trajectory_csv(report.dual, p)
        out.append(p)
    for p in out:
        _write_meta(p, "solve", cfg, extra)
    if not report.converged:
        _log(args, f"warning: dual ascent did not converge in {report.dual.rounds} rounds; using the best price seen")
    return out


def cmd_simulate(args, cfg) -> list[Path]:
    policies = [args.policy] if args.policy else list(cfg.policies)
    report = ex.solve(cfg, lam=args.lam) if "netgain" in policies else None
    fleet = report.fleet if report else cfg.fleet()
    gains = report.gains() if report else None
    runs, summary = [], []
    for pol in policies:
        s, ms = ex.run_replications(cfg, fleet, pol, gains)
        runs += ms
        summary.append([pol, len(fleet.arms), fleet.M, len(ms), _f(s.mean), _f(s.ci_low), _f(s.ci_high)])
        _log(args, f"{pol}: {s.mean:.6g} [{s.ci_low:.6g}, {s.ci_high:.6g}]")
    runs_path = args.out / "simulate_runs.csv"
    write_metrics_csv(runs, runs_path, per_arm=args.per_arm)
    sum_path = args.out / "simulate_summary.csv"
    _write_csv(sum_path, ["policy", "N", "M", "reps", "mean", "ci_low", "ci_high"], summary)
    extra = {"lambda_star": report.lambda_star if report else None,
             "bound_per_arm": report.bound_per_arm if report else None}
    for p in (runs_path, sum_path):
        _write_meta(p, "simulate", cfg, extra)
    out = [runs_path, sum_path]
    if args.trace:
        for pol in policies:
            m = simulate(ex.fleet_config(cfg, fleet, pol, int(cfg.seed), gains, record_trace=True))
            p = args.out / f"trace_{pol}.csv"
            write_trace_csv(m, p)
            _write_meta(p, "simulate", cfg, {"policy": pol, "seed": int(cfg.seed)})
            out.append(p)
    return out


def cmd_sweep(args, cfg) -> list[Path]:
    policies = [args.policy] if args.policy else None

    def progress(pt):
        _log(args, f"N={pt.N} {pt.policy}: {pt.summary.mean:.6g} (bound {pt.bound_per_arm:.6g})")

    points = ex.sweep(cfg, policies=policies, progress=progress)
    path = args.out / "sweep.csv"
    rows = [[p.N, p.M, p.policy, len(p.summary.values), _f(p.summary.mean), _f(p.summary.ci_low),
             _f(p.summary.ci_high), _f(p.lambda_star), _f(p.bound_per_arm), int(p.converged)] for p in points]
    _write_csv(path, ["N", "M", "policy", "reps", "mean", "ci_low", "ci_high", "lambda_star", "bound_per_arm",
                      "dual_converged"], rows)
    _write_meta(path, "sweep", cfg)
    return [path]


def cmd_scale(args, cfg) -> list[Path]:
    def progress(pt):
        _log(args, f"gamma={pt.gamma}: {pt.summary.mean:.6g} gap ratio {pt.gap_ratio:.4g}")

    rep = ex.scale(cfg, progress=progress)
    path = args.out / "scale.csv"
    rows = []
    for p in rep.points:
        lo, hi = p.gap_ci
        rows.append([p.gamma, p.N, p.M, len(p.summary.values), _f(p.summary.mean), _f(p.summary.ci_low),
                     _f(p.summary.ci_high), _f(p.bound_per_arm), _f(p.gap_ratio), _f(lo), _f(hi)])
    _write_csv(path, ["gamma", "N", "M", "reps", "mean", "ci_low", "ci_high", "bound_per_arm", "gap_ratio",
                      "gap_ci_low", "gap_ci_high"], rows)
    _write_meta(path, "scale", cfg, {"lambda_star": rep.lambda_star, "non_increasing": rep.non_increasing()})
    return [path]


COMMANDS = {
    "penalty-curve": (cmd_penalty_curve, "penalty q(delta, x) against AoI for chosen observations"),
    "solve": (cmd_solve, "dual ascent for the channel price, per-arm value and gain tables"),
    "simulate": (cmd_simulate, "replicated fleet simulation for one or more policies"),
    "sweep": (cmd_sweep, "normalized average penalty against fleet size for every policy"),
    "scale": (cmd_scale, "net-gain cost against the relaxed bound as the fleet and channels grow"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxsched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="experiment JSON (defaults built in)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="base seed; replication r uses seed + r")
        p.add_argument("--horizon", type=int, help="slots per simulation")
        p.add_argument("--reps", type=int, help="replications per point")
        p.add_argument("--policy", choices=POLICIES, help="restrict to one policy")
        p.add_argument("--delta-max", type=int, help="AoI truncation for every arm class")
        p.add_argument("-q", "--quiet", action="store_true", help="no progress on stderr")
        if name in ("solve", "simulate", "scale"):
            p.add_argument("--n", type=int, help="fleet size (fills the 'fill' group)")
        if name in ("solve", "simulate"):
            p.add_argument("--lambda", dest="lam", type=float, help="use this price instead of dual ascent")
        if name == "penalty-curve":
            p.add_argument("--state", action="append",
                           help="observation to plot, as a label like '(2,3),down' or JSON like '[[2,3],\"down\"]'")
        if name == "simulate":
            p.add_argument("--trace", action="store_true", help="also write a per-slot trace of the first run")
            p.add_argument("--per-arm", action="store_true", help="per-arm penalty columns in the runs CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        overrides = {"seed": args.seed, "horizon": args.horizon, "reps": args.reps, "delta_max": args.delta_max,
                     "N": getattr(args, "n", None)}
        if args.command in ("simulate", "sweep", "scale") and args.reps is not None and args.reps < 2:
            raise ConfigError("--reps must be at least 2")
        cfg = load_config(args.config, overrides)
        args.out.mkdir(parents=True, exist_ok=True)
        for p in fn(args, cfg):
            _log(args, f"wrote {p}")
    except Exception as exc:  # reported as JSON for scripted callers
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
