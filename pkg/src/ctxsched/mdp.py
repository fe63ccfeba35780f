"""Per-arm average-cost MDP under a transmission price.

Arm state is (delta, x): AoI and last delivered observation, delta clamped at
the penalty table's horizon D so that h(D + 1, x) reads h(D, x). A successful
transmission at AoI delta delivers a state drawn from P^delta(x, .) and resets
the AoI to 1.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import kernels
from .markov import MarkovSource
from .penalty import PenaltyTable


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Arm:
    source: MarkovSource
    table: PenaltyTable

    @property
    def p(self) -> float:
        return self.source.success_prob

    @property
    def shape(self) -> tuple[int, int]:
        return self.table.q.shape


@dataclass(frozen=True)
class RviSolution:
    h: np.ndarray
    avg_cost: float
    lam: float
    residual: float
    iterations: int
    converged: bool = True


@dataclass(frozen=True)
class GainTable:
    alpha: np.ndarray
    lam: float

    def __call__(self, delta: int, x: int) -> float:
        return float(self.alpha[min(delta, self.alpha.shape[0]) - 1, x])


def _next_index(D: int) -> np.ndarray:
    return np.minimum(np.arange(1, D + 1), D - 1)


def reset_expectation(source: MarkovSource, h1: np.ndarray, depth: int) -> np.ndarray:
    """e[d - 1, x] = E[h1(X') | X' ~ P^d(x, .)]."""
    csr = source.csr
    return kernels.expected_reset_value(csr.indptr, csr.indices, csr.data, np.ascontiguousarray(h1, float), depth)


def bellman_backup(h, table: PenaltyTable, source: MarkovSource, lam: float):
    """One relative value iteration step, written out with dense numpy.

    Returns the renormalised values and the average-cost estimate (the
    reference-state value before renormalisation).
    """
    q = table.cost
    D, n = q.shape
    p = source.success_prob
    P = source.transition
    e = np.empty((D, n))
    v = np.asarray(h[0], float)
    for d in range(D):
        v = P @ v
        e[d] = v
    hn = h[_next_index(D)]
    q0 = q + hn
    q1 = q + (1 - p) * hn + p * e + lam
    th = np.minimum(q0, q1)
    g = th[0, 0]
    return th - g, float(g)


def relative_value_iteration(source: MarkovSource, table: PenaltyTable, lam: float, tol: float = 1e-9,
                             max_iter: int = 200_000, h0=None, damping: float = 0.95,
                             strict: bool = True) -> RviSolution:
    """Relative value iteration with span-seminorm stopping.

    Reference state is (delta=1, first source state). ``damping`` < 1 applies
    the aperiodicity transform h <- h + damping (Th - h); the fixed point and
    average cost are unchanged, and it stops the oscillation that a periodic
    optimal chain causes with plain iteration.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.ascontiguousarray(table.cost, float)
    h_init = np.zeros_like(q) if h0 is None else np.array(h0, float)
    csr = source.csr
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    h, g, span, it, ok = kernels.rvi(csr.indptr, csr.indices, csr.data, q, float(source.success_prob),
                                     float(lam), h_init, float(tol), int(max_iter), float(damping))
    if not ok and strict:
        raise ConvergenceError(f"RVI stopped after {it} iterations with span residual {span:.3g}", span)
    return RviSolution(h, float(g), float(lam), float(span), int(it), bool(ok))


def action_values(sol: RviSolution, source: MarkovSource, table: PenaltyTable):
    """Relative action values for staying idle and for transmitting (without the average-cost term)."""
    q = table.cost
    D = q.shape[0]
    p = source.success_prob
    hn = sol.h[_next_index(D)]
    e = reset_expectation(source, sol.h[0], D)
    return q + hn, q + (1 - p) * hn + p * e + sol.lam


def gain_table(sol: RviSolution, source: MarkovSource, table: PenaltyTable) -> GainTable:
    D = table.q.shape[0]
    p = source.success_prob
    e = reset_expectation(source, sol.h[0], D)
    alpha = p * (sol.h[_next_index(D)] - e) - sol.lam
    return GainTable(alpha, sol.lam)


def greedy_policy(gains: GainTable) -> np.ndarray:
    """Transmit exactly where the gain is strictly positive."""
    return gains.alpha > 0


@dataclass(frozen=True)
class PolicyStats:
    """Long-run behaviour of a fixed policy started at (1, start)."""

    cost: float  # average penalty, price excluded
    rate: float  # transmissions per slot
    classes: tuple = field(default=())  # (weight, cost, rate) per recurrent class reached

    def total(self, lam: float) -> float:
        return self.cost + lam * self.rate


def _closed_classes(A: np.ndarray) -> list[np.ndarray]:
    ncomp, comp = connected_components(csr_matrix(A > 0), directed=True, connection="strong")
    out = []
    for c in range(ncomp):
        members = np.flatnonzero(comp == c)
        mask = np.ones(A.shape[0], bool)
        mask[members] = False
        if not (A[np.ix_(members, np.flatnonzero(mask))] > 0).any():
            out.append(members)
    return out


def _class_stationary(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    lhs = np.vstack([A.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    pi = np.maximum(pi, 0)
    return pi / pi.sum()


def evaluate_policy(source: MarkovSource, table: PenaltyTable, policy, start: int = 0) -> PolicyStats:
    """Exact average penalty and transmission rate of ``policy`` by renewal-reward.

    Deliveries split time into cycles; the delivered states form a Markov
    chain. Idling forever in the clamped state (D, x) is an absorbing sink.
    """
    q = np.ascontiguousarray(table.cost, float)
    pol = np.ascontiguousarray(policy, dtype=np.bool_)
    csr = source.csr
    M, length, cost, tx, sink = kernels.renewal(csr.indptr, csr.indices, csr.data, q, pol,
                                                 float(source.success_prob))
    n = q.shape[1]
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = M
    A[np.arange(n), n + np.arange(n)] = sink
    A[n + np.arange(n), n + np.arange(n)] = 1.0
    length = np.concatenate([length, np.ones(n)])
    cost = np.concatenate([cost, q[-1]])
    tx = np.concatenate([tx, np.zeros(n)])

    classes = _closed_classes(A)
    in_class = np.full(2 * n, -1)
    for k, members in enumerate(classes):
        in_class[members] = k
    if in_class[start] >= 0:
        weights = np.zeros(len(classes))
        weights[in_class[start]] = 1.0
    else:
        trans = np.flatnonzero(in_class < 0)
        pos = {s: i for i, s in enumerate(trans)}
        T = A[np.ix_(trans, trans)]
        R = np.stack([A[np.ix_(trans, members)].sum(axis=1) for members in classes], axis=1)
        absorb = np.linalg.solve(np.eye(len(trans)) - T, R)
        weights = absorb[pos[start]]
    out = []
    for w, members in zip(weights, classes):
        if w <= 1e-15:
            continue
        pi = _class_stationary(A[np.ix_(members, members)])
        span = pi @ length[members]
        out.append((float(w), float(pi @ cost[members] / span), float(pi @ tx[members] / span)))
    total_w = sum(c[0] for c in out)
    avg_cost = sum(w * c for w, c, _ in out) / total_w
    rate = sum(w * r for w, _, r in out) / total_w
    return PolicyStats(float(avg_cost), float(rate), tuple(out))


def brute_force_average_cost(source: MarkovSource, table: PenaltyTable, lam: float, max_states: int = 12) -> float:
    """Optimal average cost by enumerating every deterministic stationary policy.

    Each policy's gain vector is the limiting matrix of its chain applied to
    the per-slot cost; the limiting matrix comes from repeated squaring of the
    lazy chain (rows renormalised after every squaring). The minimum is taken state-wise and read at (1, first state).
    """
    q = table.cost
    D, n = q.shape
    S = D * n
    if S > max_states:
        raise ValueError(f"{S} arm states is too many to enumerate (limit {max_states})")
    p = source.success_prob
    nxt = _next_index(D)
    powers = [np.linalg.matrix_power(source.transition, d + 1) for d in range(D)]
    passive = np.zeros((S, S))
    active = np.zeros((S, S))
    for d in range(D):
        for x in range(n):
            s = d * n + x
            passive[s, nxt[d] * n + x] = 1.0
            active[s, nxt[d] * n + x] += 1 - p
            active[s, :n] += p * powers[d][x]
    cost = q.reshape(-1)
    best = np.full(S, np.inf)
    policies = np.array(list(itertools.product((0.0, 1.0), repeat=S)))
    for mu in np.array_split(policies, max(1, len(policies) // 512)):
        T = np.where(mu[:, :, None] > 0, active, passive)
        lazy = 0.5 * (T + np.eye(S))
        for _ in range(64):
            lazy = lazy @ lazy
            # keep rows stochastic; rounding would otherwise compound over 2^64 steps
            lazy /= lazy.sum(axis=2, keepdims=True)
        gain = np.einsum("kij,kj->ki", lazy, cost + lam * mu)
        best = np.minimum(best, gain.min(axis=0))
    return float(best[0])


def write_solution_csv(sol: RviSolution, gains: GainTable, source: MarkovSource, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "state_id", "h", "alpha", "lambda"])
        D, n = sol.h.shape
        for d in range(D):
            for x in range(n):
                w.writerow([d + 1, x, repr(float(sol.h[d, x])), repr(float(gains.alpha[d, x])), repr(sol.lam)])
