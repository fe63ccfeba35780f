"""Studies run by the command line: penalty curves, dual solve, N sweep, gamma scaling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, Fleet
from .lagrangian import DualResult, offline_dual_ascent
from .mdp import evaluate_policy, gain_table, greedy_policy, relative_value_iteration
from .penalty import build_penalty_table
from .simulator import FleetConfig, ReplicateSummary, SimMetrics, simulate, summarize

GAP_EPS = 1e-9


def resolve_state(source, desc) -> int:
    """Accepts a state value (lists allowed), its printed label, or an integer position."""
    try:
        return source.index(desc)
    except KeyError:
        pass
    if isinstance(desc, str):
        for i in range(source.n_states):
            if source.state_label(i) == desc.replace(" ", ""):
                return i
    raise KeyError(f"unknown state {desc!r} in source {source.name!r}")


@dataclass
class CurveResult:
    states: list  # state indices
    labels: list
    values: np.ndarray  # (delta_max, len(states))
    stationary_penalty: float


def penalty_curve(cfg: ExperimentConfig, states=None, delta_max: int | None = None) -> CurveResult:
    spec = cfg.penalty_curve
    g = cfg.group(spec.get("group", cfg.groups[-1].name))
    table = cfg.table(g)
    D = delta_max or spec.get("delta_max") or table.delta_max
    if D != table.delta_max:
        table = build_penalty_table(g.source, cfg.loss, delta_max=int(D))
    idx = [resolve_state(g.source, s) for s in (states if states is not None else spec["states"])]
    return CurveResult(idx, [g.source.state_label(i) for i in idx], table.q[:, idx].copy(), table.stationary_penalty)


@dataclass
class ClassSolution:
    name: str
    count: int
    solution: object  # RviSolution
    gains: object  # GainTable
    rate: float


@dataclass
class SolveReport:
    fleet: Fleet
    lambda_star: float
    dual_value: float
    classes: list
    dual: DualResult | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.dual is None or self.dual.converged

    @property
    def bound_per_arm(self) -> float:
        return self.dual_value / len(self.fleet.arms)

    def gains(self, gamma: int = 1) -> list:
        out = []
        for c in self.classes:
            out += [c.gains] * (c.count * gamma)
        return out


def solve(cfg: ExperimentConfig, N: int | None = None, lam: float | None = None) -> SolveReport:
    """Price the channel budget (dual ascent unless ``lam`` is given) and solve every arm class there."""
    fleet = cfg.fleet(N)
    d = cfg.dual
    result = None
    if lam is None:
        result = offline_dual_ascent(fleet.arms, fleet.M, beta=float(d["beta"]), max_rounds=int(d["max_rounds"]),
                                     window=int(d["window"]), range_tol=float(d["range_tol"]), mode=d["mode"],
                                     seed=int(cfg.seed))
        lam = result.lambda_star
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    classes = []
    total = -lam * fleet.M
    for name, arm, members in fleet.classes:
        if result is not None:
            sol, gains = result.solutions[members[0]], result.gains[members[0]]
        else:
            sol = relative_value_iteration(arm.source, arm.table, lam)
            gains = gain_table(sol, arm.source, arm.table)
        rate = evaluate_policy(arm.source, arm.table, greedy_policy(gains)).rate
        classes.append(ClassSolution(name, len(members), sol, gains, rate))
        total += len(members) * sol.avg_cost
    return SolveReport(fleet, float(lam), float(total), classes, result)


def fleet_config(cfg: ExperimentConfig, fleet: Fleet, policy: str, seed: int, gains=None,
                 horizon: int | None = None, record_trace: bool = False) -> FleetConfig:
    return FleetConfig(fleet.arms, fleet.M, int(horizon or cfg.horizon), seed=seed, policy=policy,
                       warmup=cfg.warmup, buffer=int(cfg.buffer), gains=gains if policy == "netgain" else None,
                       record_trace=record_trace)


def run_replications(cfg: ExperimentConfig, fleet: Fleet, policy: str, gains=None, reps: int | None = None,
                     seed: int | None = None, horizon: int | None = None) -> tuple[ReplicateSummary, list]:
    reps = int(reps or cfg.reps)
    seed = int(cfg.seed if seed is None else seed)
    runs: list[SimMetrics] = []
    for r in range(reps):
        runs.append(simulate(fleet_config(cfg, fleet, policy, seed + r, gains, horizon)))
    return summarize([m.normalized_avg_penalty for m in runs]), runs


@dataclass
class SweepPoint:
    N: int
    M: int
    policy: str
    summary: ReplicateSummary
    lambda_star: float
    bound_per_arm: float
    converged: bool


def sweep(cfg: ExperimentConfig, n_values=None, policies=None, reps=None, horizon=None, progress=None) -> list:
    points = []
    for N in (n_values or cfg.n_sweep):
        report = solve(cfg, int(N))
        for policy in (policies or cfg.policies):
            summary, _ = run_replications(cfg, report.fleet, policy, report.gains(), reps, horizon=horizon)
            points.append(SweepPoint(int(N), report.fleet.M, policy, summary, report.lambda_star,
                                     report.bound_per_arm, report.converged))
            if progress:
                progress(points[-1])
    return points


@dataclass
class ScalePoint:
    gamma: int
    N: int
    M: int
    summary: ReplicateSummary
    bound_per_arm: float

    def gap(self, value: float) -> float:
        return (value - self.bound_per_arm) / max(self.bound_per_arm, GAP_EPS)

    @property
    def gap_ratio(self) -> float:
        return self.gap(self.summary.mean)

    @property
    def gap_ci(self) -> tuple[float, float]:
        return self.gap(self.summary.ci_low), self.gap(self.summary.ci_high)


@dataclass
class ScalingReport:
    lambda_star: float
    points: list

    def non_increasing(self) -> bool:
        """Each gap ratio's interval reaches down to or below the previous one's upper end."""
        return all(b.gap_ci[0] <= a.gap_ci[1] for a, b in zip(self.points, self.points[1:]))


def scale(cfg: ExperimentConfig, gammas=None, reps=None, horizon=None, N: int | None = None,
          progress=None) -> ScalingReport:
    """Replicate every arm class and the channels by gamma; the per-arm bound does not change."""
    base = solve(cfg, N)
    points = []
    for gamma in (gammas or cfg.gammas):
        fleet = cfg.fleet(N, int(gamma))
        summary, _ = run_replications(cfg, fleet, "netgain", base.gains(int(gamma)), reps, horizon=horizon)
        points.append(ScalePoint(int(gamma), len(fleet.arms), fleet.M, summary, base.bound_per_arm))
        if progress:
            progress(points[-1])
    return ScalingReport(base.lambda_star, points)
