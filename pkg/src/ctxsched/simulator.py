"""Slotted fleet simulation over Bernoulli erasure channels.

Slot order: every source moves one step, the policy picks arms from the
observable (AoI, last delivered state) pairs, each transmission succeeds with
the arm's probability (delivering the state the source is in now), AoI resets
to 1 on delivery and grows by one otherwise, then each arm pays its penalty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .mdp import Arm, GainTable
from .policies import POLICIES

CHUNK = 4096


@dataclass
class FleetConfig:
    arms: list  # Arm per sensor
    M: int
    horizon: int
    seed: int = 0
    policy: str = "netgain"
    warmup: int | None = None  # default: 10% of the horizon
    buffer: int = 20
    gains: list | None = None  # GainTable per arm, required by netgain
    initial_states: list | None = None  # source state index per arm, default 0
    record_trace: bool = False

    def resolved_warmup(self) -> int:
        return self.horizon // 10 if self.warmup is None else int(self.warmup)

    def validate(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not self.arms:
            raise ValueError("fleet has no arms")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {', '.join(POLICIES)}")
        warmup = self.resolved_warmup()
        if warmup < 0 or self.horizon <= warmup:
            raise ValueError(f"horizon ({self.horizon}) must exceed warmup ({warmup})")
        if self.buffer < 1:
            raise ValueError("buffer must be >= 1")
        if self.policy == "netgain":
            if self.gains is None or len(self.gains) != len(self.arms):
                raise ValueError("netgain needs one gain table per arm")
            for arm, g in zip(self.arms, self.gains):
                if not isinstance(g, GainTable) or g.alpha.shape != arm.shape:
                    raise ValueError("gain table shape does not match its arm")
        if self.initial_states is not None and len(self.initial_states) != len(self.arms):
            raise ValueError("need one initial state per arm")

    def metadata(self) -> dict:
        return {
            "policy": self.policy,
            "N": len(self.arms),
            "M": self.M,
            "horizon": self.horizon,
            "warmup": self.resolved_warmup(),
            "seed": self.seed,
            "buffer": self.buffer,
            "initial_states": list(self.initial_states) if self.initial_states is not None else [0] * len(self.arms),
            "initial_aoi": 1,
        }


@dataclass
class SimMetrics:
    policy: str
    N: int
    M: int
    horizon: int
    warmup: int
    seed: int
    per_arm_penalty_sum: np.ndarray
    normalized_avg_penalty: float
    attempt_counts: np.ndarray
    success_counts: np.ndarray
    queue_stats: dict | None = None
    aoi_trace: np.ndarray | None = field(default=None, repr=False)  # (T, N) AoI after each slot
    obs_trace: np.ndarray | None = field(default=None, repr=False)  # (T, N) delivered state after each slot
    decisions_trace: np.ndarray | None = field(default=None, repr=False)  # (T, N) transmitted this slot


class _Packed:
    """Sources, penalty and gain tables flattened for the kernel."""

    def __init__(self, arms: list[Arm], gains):
        src_off: dict[int, int] = {}
        tab_off: dict[tuple, int] = {}
        indptr, indices, cum, data_q, data_g = [np.zeros(1, np.int64)], [], [], [], []
        n_tot = nnz = q_tot = 0
        self.arm_offset = np.empty(len(arms), np.int64)
        self.arm_qoff = np.empty(len(arms), np.int64)
        for i, arm in enumerate(arms):
            src = arm.source
            if id(src) not in src_off:
                c = src.csr
                src_off[id(src)] = n_tot
                indptr.append(c.indptr[1:] + nnz)
                indices.append(c.indices + n_tot)
                cum.append(c.cum)
                n_tot += src.n_states
                nnz += c.indices.shape[0]
            g = gains[i] if gains is not None else None
            key = (id(arm.table), id(g))
            if key not in tab_off:
                tab_off[key] = q_tot
                data_q.append(arm.table.cost.ravel())
                data_g.append(g.alpha.ravel() if g is not None else np.zeros(arm.table.q.size))
                q_tot += arm.table.q.size
            self.arm_offset[i] = src_off[id(src)]
            self.arm_qoff[i] = tab_off[key]
        self.indptr = np.concatenate(indptr).astype(np.int64)
        self.indices = np.concatenate(indices).astype(np.int64)
        self.cum = np.concatenate(cum).astype(np.float64)
        self.q_flat = np.concatenate(data_q).astype(np.float64)
        self.g_flat = np.concatenate(data_g).astype(np.float64)
        self.arm_nx = np.array([a.source.n_states for a in arms], np.int64)
        self.arm_D = np.array([a.table.delta_max for a in arms], np.int64)
        self.arm_p = np.array([a.source.success_prob for a in arms], np.float64)


def simulate(config: FleetConfig) -> SimMetrics:
    config.validate()
    arms = config.arms
    N, M, T = len(arms), int(config.M), int(config.horizon)
    warmup = config.resolved_warmup()
    pk = _Packed(arms, config.gains if config.policy == "netgain" else None)

    init = np.zeros(N, np.int64) if config.initial_states is None else np.asarray(config.initial_states, np.int64)
    if ((init < 0) | (init >= pk.arm_nx)).any():
        raise IndexError("initial state out of range")
    x_true = init.copy()
    x_obs = init.copy()
    delta = np.ones(N, np.int64)
    last_gen = np.full(N, -1, np.int64)
    pen_sum = np.zeros(N)
    attempts = np.zeros(N, np.int64)
    successes = np.zeros(N, np.int64)
    cap = int(config.buffer)
    qa = np.zeros(cap, np.int64)
    qg = np.zeros(cap, np.int64)
    qx = np.zeros(cap, np.int64)
    qstate = np.zeros(2, np.int64)
    qstats = np.zeros(4, np.int64)
    if config.record_trace:
        rec_delta = np.zeros((T, N), np.int64)
        rec_obs = np.zeros((T, N), np.int64)
        rec_dec = np.zeros((T, N), np.bool_)
    code = kernels.POLICY_CODES[config.policy]

    rng = np.random.default_rng(config.seed)
    for t0 in range(0, T, CHUNK):
        t1 = min(t0 + CHUNK, T)
        c = t1 - t0
        # every stream is drawn whatever the policy, so policies compared at one
        # seed see the same source trajectories and channel draws
        u_src = rng.random((c, N))
        u_ch = rng.random((c, N + M))
        u_sel = rng.random((c, N))
        if config.record_trace:
            rd, ro, rdec = rec_delta[t0:t1], rec_obs[t0:t1], rec_dec[t0:t1]
        else:
            rd = np.zeros((0, N), np.int64)
            ro = np.zeros((0, N), np.int64)
            rdec = np.zeros((0, N), np.bool_)
        kernels.simulate_chunk(t0, t1, warmup, code, M,
                               pk.indptr, pk.indices, pk.cum,
                               pk.arm_offset, pk.arm_qoff, pk.arm_nx, pk.arm_D, pk.arm_p,
                               pk.q_flat, pk.g_flat,
                               x_true, x_obs, delta, last_gen,
                               pen_sum, attempts, successes,
                               qa, qg, qx, qstate, qstats,
                               u_src, u_ch, u_sel, rd, ro, rdec)

    queue = None
    if config.policy == "periodic":
        queue = {"offered": int(qstats[0]), "dropped": int(qstats[1]), "delivered": int(qstats[2]),
                 "erased": int(qstats[3]), "queued": int(qstate[1])}
    return SimMetrics(
        policy=config.policy, N=N, M=M, horizon=T, warmup=warmup, seed=config.seed,
        per_arm_penalty_sum=pen_sum,
        normalized_avg_penalty=float(pen_sum.sum() / ((T - warmup) * N)),
        attempt_counts=attempts, success_counts=successes, queue_stats=queue,
        aoi_trace=rec_delta if config.record_trace else None,
        obs_trace=rec_obs if config.record_trace else None,
        decisions_trace=rec_dec if config.record_trace else None,
    )


def penalty_from_trace(metrics: SimMetrics, arms) -> float:
    """Recompute the normalized average penalty from the recorded AoI and observation traces."""
    if metrics.aoi_trace is None:
        raise ValueError("run with record_trace=True")
    per_arm = np.zeros(len(arms))
    for a, arm in enumerate(arms):
        d = np.minimum(metrics.aoi_trace[metrics.warmup:, a], arm.table.delta_max)
        # running sum in slot order, as the kernel accumulates it
        per_arm[a] = np.cumsum(arm.table.cost[d - 1, metrics.obs_trace[metrics.warmup:, a]])[-1]
    return float(per_arm.sum() / ((metrics.horizon - metrics.warmup) * metrics.N))


@dataclass(frozen=True)
class ReplicateSummary:
    mean: float
    ci_low: float
    ci_high: float
    values: tuple

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2


def summarize(values) -> ReplicateSummary:
    v = np.asarray(values, float)
    mean = float(v.mean())
    half = 1.959963984540054 * float(v.std(ddof=1)) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return ReplicateSummary(mean, mean - half, mean + half, tuple(float(x) for x in v))


def replicate(config: FleetConfig, reps: int) -> ReplicateSummary:
    """Runs seeds seed, seed+1, ...; mean and normal-approximation 95% interval."""
    if reps < 2:
        raise ValueError("need at least 2 replications")
    vals = []
    for r in range(reps):
        cfg = FleetConfig(**{**config.__dict__, "seed": config.seed + r, "record_trace": False})
        vals.append(simulate(cfg).normalized_avg_penalty)
    return summarize(vals)


def write_metrics_csv(rows, path, per_arm: bool = False) -> None:
    """One row per SimMetrics: policy, N, M, seed, horizon, normalized_avg_penalty."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["policy", "N", "M", "seed", "horizon", "normalized_avg_penalty"]
        width = max((m.N for m in rows), default=0) if per_arm else 0
        w.writerow(head + [f"arm{i}_penalty" for i in range(width)])
        for m in rows:
            line = [m.policy, m.N, m.M, m.seed, m.horizon, repr(m.normalized_avg_penalty)]
            if per_arm:
                avg = m.per_arm_penalty_sum / (m.horizon - m.warmup)
                line += [repr(float(x)) for x in avg] + [""] * (width - m.N)
            w.writerow(line)


def write_trace_csv(metrics: SimMetrics, path) -> None:
    if metrics.aoi_trace is None:
        raise ValueError("run with record_trace=True")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "arm", "scheduled", "aoi", "observation"])
        T, N = metrics.aoi_trace.shape
        for t in range(T):
            for a in range(N):
                w.writerow([t, a, int(metrics.decisions_trace[t, a]), int(metrics.aoi_trace[t, a]),
                            int(metrics.obs_trace[t, a])])
