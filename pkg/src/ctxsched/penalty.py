"""Loss matrices, L-entropy and the age/observation penalty table q(delta, x)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .markov import MarkovSource, stationary_distribution, step_distribution


@dataclass(frozen=True)
class LossMatrix:
    """L(y, a): rows are true danger labels, columns are estimator outputs."""

    labels: tuple
    entries: np.ndarray
    actions: tuple | None = None

    def __post_init__(self):
        L = np.array(self.entries, dtype=float)
        labels = tuple(self.labels)
        actions = tuple(self.actions) if self.actions is not None else labels
        if L.shape != (len(labels), len(actions)):
            raise ValueError(f"loss must be {len(labels)}x{len(actions)}, got {L.shape}")
        if not actions:
            raise ValueError("action set is empty")
        if L.min() < 0:
            raise ValueError("losses must be non-negative")
        L.setflags(write=False)
        object.__setattr__(self, "entries", L)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "actions", actions)

    @classmethod
    def zero_one(cls, labels) -> "LossMatrix":
        n = len(labels)
        return cls(tuple(labels), 1.0 - np.eye(n))

    def to_dict(self) -> dict:
        doc = {"labels": list(self.labels), "loss": self.entries.tolist()}
        if self.actions != self.labels:
            doc["actions"] = list(self.actions)
        return doc


SAFETY_LOSS = LossMatrix(
    ("safe", "cautious", "dangerous"),
    [[0, 10, 10],
     [50, 0, 20],
     [200, 50, 0]],
)


def loss_from_dict(doc: dict) -> LossMatrix:
    return LossMatrix(tuple(doc["labels"]), np.asarray(doc["loss"], float), doc.get("actions"))


def load_loss(path) -> LossMatrix:
    with open(path) as fh:
        return loss_from_dict(json.load(fh))


def l_entropy(dist, loss: LossMatrix) -> tuple[float, int]:
    """Minimum expected loss over actions, and the first action attaining it."""
    expected = np.asarray(dist, float) @ loss.entries
    a = int(np.argmin(expected))
    return float(expected[a]), a


@dataclass(frozen=True)
class Estimator:
    """``optimal`` picks the L-entropy minimiser; ``fixed`` reads a (delta, x) table."""

    kind: str = "optimal"
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("optimal", "fixed"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "fixed":
            if self.table is None:
                raise ValueError("fixed estimator needs a table")
            object.__setattr__(self, "table", np.asarray(self.table, dtype=np.int64))

    @classmethod
    def constant(cls, action: int, delta_max: int, n_states: int) -> "Estimator":
        return cls("fixed", np.full((delta_max, n_states), action, dtype=np.int64))

    def action(self, delta: int, x: int) -> int:
        if self.kind != "fixed":
            raise ValueError("optimal estimator actions come from optimal_estimator()")
        if delta > self.table.shape[0]:
            raise IndexError(f"estimator table stops at delta={self.table.shape[0]}")
        return int(self.table[delta - 1, x])


OPTIMAL = Estimator()


@dataclass(frozen=True, eq=False)
class PenaltyTable:
    """q[d - 1, x] is the penalty at AoI d with last delivered observation x.

    ``cost`` is what schedulers pay per slot: q itself except that the last
    row, which stands for every AoI >= delta_max, holds the long-run penalty
    of the estimator once the observation carries no information.
    """

    q: np.ndarray
    actions: np.ndarray
    loss: LossMatrix
    estimator: Estimator
    stationary_penalty: float
    labels: tuple = field(default=())
    cost: np.ndarray = field(default=None, repr=False)

    @property
    def delta_max(self) -> int:
        return self.q.shape[0]

    def __call__(self, delta: int, x: int) -> float:
        return float(self.q[min(delta, self.delta_max) - 1, x])


def label_distribution(source: MarkovSource, loss: LossMatrix, x, delta: int) -> np.ndarray:
    """Law of the danger label ``delta`` slots after observing ``x``."""
    return step_distribution(source, x, delta) @ source.danger_onehot(loss.labels)


def conditional_penalty(source: MarkovSource, loss: LossMatrix, est: Estimator, delta: int, x) -> float:
    if delta < 1:
        raise ValueError("delta must be >= 1")
    i = source.index(x)
    dist = label_distribution(source, loss, i, delta)
    if est.kind == "optimal":
        return l_entropy(dist, loss)[0]
    return float(dist @ loss.entries[:, est.action(delta, i)])


def mixing_delta_max(source: MarkovSource, tv_tol: float = 1e-3, cap: int = 500) -> int:
    """Smallest delta whose worst-row total variation to stationarity is <= tv_tol.

    The worst-row distance is non-increasing in delta, so a doubling search
    followed by bisection over matrix powers finds it.
    """
    pi = stationary_distribution(source, average=True)
    P = source.transition

    def tv(d):
        return 0.5 * np.abs(np.linalg.matrix_power(P, d) - pi).sum(axis=1).max()

    if tv(1) <= tv_tol:
        return 1
    hi = 2
    while hi < cap and tv(hi) > tv_tol:
        hi *= 2
    hi = min(hi, cap)
    if tv(hi) > tv_tol:
        return cap
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tv(mid) <= tv_tol:
            hi = mid
        else:
            lo = mid
    return hi


def default_delta_max(source: MarkovSource, tv_tol: float = 1e-3, cap: int = 500) -> int:
    """Mixing rule for chains that mix; the cycle length for 0/1 (permutation) chains.

    A permutation chain never approaches its stationary law, so the mixing
    rule would only return the cap. Its penalties cycle with the chain; the
    state count bounds every cycle length and serves as the horizon.
    """
    P = source.transition
    if np.isin(P, (0.0, 1.0)).all():
        return source.n_states
    return mixing_delta_max(source, tv_tol, cap)


def expected_losses(source: MarkovSource, loss: LossMatrix, delta_max: int) -> np.ndarray:
    """(delta_max, n_states, n_actions) expected loss of every action."""
    csr = source.csr
    dist = kernels.propagate(csr.indptr, csr.indices, csr.data, source.danger_onehot(loss.labels), delta_max)
    return dist @ loss.entries


def build_penalty_table(source: MarkovSource, loss: LossMatrix, est: Estimator | None = None,
                        delta_max: int | None = None) -> PenaltyTable:
    est = est or OPTIMAL
    if delta_max is None:
        delta_max = default_delta_max(source)
    if delta_max < 1:
        raise ValueError("delta_max must be >= 1")
    exp_loss = expected_losses(source, loss, delta_max)
    if est.kind == "optimal":
        actions = np.argmin(exp_loss, axis=2)
    else:
        if est.table.shape[0] < delta_max:
            raise IndexError(f"estimator table stops at delta={est.table.shape[0]}")
        actions = est.table[:delta_max]
    q = np.take_along_axis(exp_loss, actions[:, :, None], axis=2)[:, :, 0]
    law = stationary_distribution(source, average=True) @ source.danger_onehot(loss.labels)
    stationary = l_entropy(law, loss)[0]
    cost = q.copy()
    if est.kind == "optimal":
        cost[-1] = stationary
    else:
        cost[-1] = (law @ loss.entries)[actions[-1]]
    q.setflags(write=False)
    cost.setflags(write=False)
    return PenaltyTable(q, actions, loss, est, stationary, loss.labels, cost)


def optimal_estimator(source: MarkovSource, loss: LossMatrix, delta_max: int) -> Estimator:
    actions = np.argmin(expected_losses(source, loss, delta_max), axis=2)
    return Estimator("fixed", actions)


@dataclass
class MonotonicityReport:
    checked: int
    violations: list  # (delta, state index, q(delta+1, x), averaged one-step penalty)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_information_monotonicity(table: PenaltyTable, source: MarkovSource,
                                    tol: float = 1e-9) -> MonotonicityReport:
    """Check q(d+1, x) >= sum_x' P^d(x'|x) q(1, x') for every d < delta_max.

    The bound is only guaranteed for the optimal estimator, so other tables
    are refused.
    """
    if table.estimator.kind != "optimal":
        raise ValueError("information monotonicity only holds for the optimal estimator")
    D = table.delta_max
    if D < 2:
        return MonotonicityReport(0, [])
    csr = source.csr
    avg = kernels.expected_reset_value(csr.indptr, csr.indices, csr.data, np.ascontiguousarray(table.q[0]), D - 1)
    lhs = table.q[1:]
    bad = np.argwhere(lhs < avg - tol)
    violations = [(int(d) + 1, int(x), float(lhs[d, x]), float(avg[d, x])) for d, x in bad]
    return MonotonicityReport(int(lhs.size), violations)


def write_penalty_csv(table: PenaltyTable, source: MarkovSource, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "state_id", "state_label", "q"])
        for d in range(table.delta_max):
            for x in range(source.n_states):
                w.writerow([d + 1, x, source.state_label(x), repr(float(table.q[d, x]))])
