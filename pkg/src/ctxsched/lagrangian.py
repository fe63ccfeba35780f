"""Lagrangian relaxation of the channel budget: dual function, subgradient ascent, lower bound."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field

import numpy as np

from .mdp import (Arm, GainTable, PolicyStats, RviSolution, evaluate_policy, gain_table, greedy_policy,
                  relative_value_iteration)


def group_arms(arms) -> list[tuple[Arm, list[int]]]:
    """Arms sharing a source and penalty table object form one class."""
    groups: dict[tuple[int, int], tuple[Arm, list[int]]] = {}
    for i, arm in enumerate(arms):
        key = (id(arm.source), id(arm.table))
        if key not in groups:
            groups[key] = (arm, [])
        groups[key][1].append(i)
    return list(groups.values())


class PriceOracle:
    """Optimal per-arm policy as a function of the transmission price.

    The set of prices at which a fixed policy is optimal is an interval, so a
    query lying between two solved prices with the same greedy policy reuses
    that policy without solving. Otherwise RVI runs warm-started from the
    nearest solved price.
    """

    def __init__(self, arm: Arm, tol: float = 1e-9, max_iter: int = 200_000):
        self.arm = arm
        self.tol = tol
        self.max_iter = max_iter
        self._lams: list[float] = []
        self._keys: list[bytes] = []
        self._h: dict[float, np.ndarray] = {}
        self.stats: dict[bytes, PolicyStats] = {}
        self.solves = 0

    def solve(self, lam: float) -> RviSolution:
        h0 = None
        if self._lams:
            i = bisect.bisect_left(self._lams, lam)
            near = [j for j in (i - 1, i) if 0 <= j < len(self._lams)]
            j = min(near, key=lambda k: abs(self._lams[k] - lam))
            h0 = self._h[self._lams[j]]
        sol = relative_value_iteration(self.arm.source, self.arm.table, lam, self.tol, self.max_iter, h0=h0)
        self.solves += 1
        return sol

    def policy_at(self, lam: float) -> tuple[bytes, PolicyStats]:
        i = bisect.bisect_left(self._lams, lam)
        if i < len(self._lams) and self._lams[i] == lam:
            key = self._keys[i]
            return key, self.stats[key]
        if 0 < i < len(self._lams) and self._keys[i - 1] == self._keys[i]:
            key = self._keys[i]
            return key, self.stats[key]
        sol = self.solve(lam)
        policy = greedy_policy(gain_table(sol, self.arm.source, self.arm.table))
        key = np.packbits(policy).tobytes()
        if key not in self.stats:
            self.stats[key] = evaluate_policy(self.arm.source, self.arm.table, policy)
        self._lams.insert(i, lam)
        self._keys.insert(i, key)
        self._h[lam] = sol.h
        return key, self.stats[key]


def subgradient_step(lam: float, beta: float, t: int, scheduled: float, M: int) -> float:
    """Projected diminishing-step update of the channel price."""
    return max(lam + beta / t * (scheduled - M), 0.0)


def dual_value(arms, lam: float, M: int, tol: float = 1e-9) -> float:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    total = 0.0
    for arm, members in group_arms(arms):
        total += len(members) * relative_value_iteration(arm.source, arm.table, lam, tol).avg_cost
    return total - lam * M


@dataclass
class DualResult:
    lambda_star: float
    trajectory: list  # (round, lambda, subgradient, dual value at lambda)
    dual_value: float
    per_arm_costs: list
    converged: bool
    solutions: list = field(default_factory=list, repr=False)  # RviSolution per arm at lambda_star
    gains: list = field(default_factory=list, repr=False)  # GainTable per arm at lambda_star

    @property
    def rounds(self) -> int:
        return len(self.trajectory)


def offline_dual_ascent(arms, M: int, beta: float = 1.0, max_rounds: int = 20_000, window: int = 200,
                        range_tol: float = 1e-3, mode: str = "expected", seed: int = 0,
                        tol: float = 1e-9) -> DualResult:
    """Subgradient ascent on the dual, lambda(t+1) = max(lambda(t) + beta/t (sum mu - M), 0).

    ``mode="sampled"`` draws each arm's action at a state taken from the
    stationary occupancy of its current price-optimal policy (seeded);
    ``mode="expected"`` uses the exact transmission rate instead. Converged
    when the last ``window`` prices span at most ``range_tol``; otherwise the
    best dual value seen is returned with ``converged=False``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if mode not in ("expected", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    groups = group_arms(arms)
    oracles = [PriceOracle(arm, tol) for arm, _ in groups]
    rng = np.random.default_rng(seed)
    lam = 0.0
    traj = []
    recent: list[float] = []
    converged = False
    for t in range(1, max_rounds + 1):
        scheduled = 0.0
        dual = -lam * M
        for oracle, (_arm, members) in zip(oracles, groups):
            _key, st = oracle.policy_at(lam)
            dual += len(members) * st.total(lam)
            if mode == "expected":
                scheduled += len(members) * st.rate
            else:
                scheduled += _sample_actions(st, len(members), rng)
        sub = scheduled - M
        traj.append((t, lam, float(sub), float(dual)))
        recent.append(lam)
        if len(recent) > window:
            recent.pop(0)
        if len(recent) == window and max(recent) - min(recent) <= range_tol:
            converged = True
            break
        lam = subgradient_step(lam, beta, t, scheduled, M)
    if converged:
        lam_star = traj[-1][1]
    else:
        lam_star = max(traj, key=lambda r: r[3])[1]
    sols: list[RviSolution | None] = [None] * len(arms)
    gains: list[GainTable | None] = [None] * len(arms)
    total = -lam_star * M
    for oracle, (arm, members) in zip(oracles, groups):
        sol = oracle.solve(lam_star)
        gt = gain_table(sol, arm.source, arm.table)
        total += len(members) * sol.avg_cost
        for i in members:
            sols[i] = sol
            gains[i] = gt
    return DualResult(lam_star, traj, float(total), [s.avg_cost for s in sols], converged, sols, gains)


def _sample_actions(st: PolicyStats, count: int, rng: np.random.Generator) -> int:
    # a state drawn from the occupancy transmits with probability equal to the
    # transmission rate of the recurrent class it falls in
    weights = np.array([c[0] for c in st.classes])
    rates = np.array([c[2] for c in st.classes])
    cls = rng.choice(len(weights), size=count, p=weights / weights.sum())
    return int((rng.random(count) < rates[cls]).sum())


def relaxed_lower_bound(result: DualResult, strict: bool = True) -> float:
    """Dual value at the returned price; a lower bound on any feasible scheduler's total cost."""
    if strict and not result.converged:
        raise ValueError("dual ascent did not converge; pass strict=False to use the best price seen")
    return result.dual_value


def write_trajectory_csv(result: DualResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "lambda", "subgradient", "dual_value"])
        for t, lam, sub, dual in result.trajectory:
            w.writerow([t, repr(float(lam)), repr(float(sub)), repr(float(dual))])
