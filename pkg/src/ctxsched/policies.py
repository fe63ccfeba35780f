"""Scheduling rules, written plainly.

The simulator runs compiled versions of these; the functions here are the
readable reference the kernels are tested against, and are handy for
stepping through a schedule by hand.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

POLICIES = ("netgain", "randomized", "periodic", "maxage")


@dataclass(frozen=True)
class SchedulingDecision:
    scheduled: tuple  # arm indices in transmission order
    slot: int = 0

    def __len__(self):
        return len(self.scheduled)

    def __contains__(self, arm):
        return arm in self.scheduled


def _check_m(M):
    if M < 1:
        raise ValueError("M must be >= 1")


def netgain_select(gain_tables, states, M: int, slot: int = 0) -> SchedulingDecision:
    """Up to M arms with the largest strictly positive gain; ties go to the lower index.

    ``states`` holds one (delta, x) per arm; delta is clamped to the table.
    """
    _check_m(M)
    if len(gain_tables) != len(states):
        raise ValueError("need one gain table per arm")
    lams = {float(g.lam) for g in gain_tables}
    if len(lams) > 1:
        raise ValueError("gain tables were solved at different prices")
    gains = []
    for g, (delta, x) in zip(gain_tables, states):
        if not 0 <= x < g.alpha.shape[1]:
            raise IndexError(f"unknown observation index {x}")
        gains.append(g(delta, x))
    return select_by_gain(gains, M, slot)


def select_by_gain(gains, M: int, slot: int = 0) -> SchedulingDecision:
    _check_m(M)
    gains = np.asarray(gains, float)
    order = np.argsort(-gains, kind="stable")
    chosen = [int(a) for a in order if gains[a] > 0][:M]
    return SchedulingDecision(tuple(chosen), slot)


def randomized_select(N: int, M: int, rng: np.random.Generator, slot: int = 0) -> SchedulingDecision:
    """min(N, M) distinct arms, uniformly at random."""
    _check_m(M)
    return select_by_keys(rng.random(N), M, slot)


def select_by_keys(keys, M: int, slot: int = 0) -> SchedulingDecision:
    # the arms holding the smallest uniform keys form a uniform random subset
    order = np.argsort(np.asarray(keys, float), kind="stable")
    return SchedulingDecision(tuple(int(a) for a in order[:M]), slot)


def maxage_select(deltas, M: int, slot: int = 0) -> SchedulingDecision:
    """The M oldest arms; ties go to the lower index."""
    _check_m(M)
    order = np.argsort(-np.asarray(deltas, float), kind="stable")
    return SchedulingDecision(tuple(int(a) for a in order[:M]), slot)


@dataclass
class FifoQueue:
    """Shared bounded queue of (arm, generation slot, observation) packets."""

    capacity: int = 20
    entries: deque = field(default_factory=deque)
    offered: int = 0
    dropped: int = 0
    sent: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")

    def __len__(self):
        return len(self.entries)

    def offer(self, arm: int, gen: int, obs=None) -> bool:
        self.offered += 1
        if len(self.entries) >= self.capacity:
            self.dropped += 1
            return False
        self.entries.append((arm, gen, obs))
        return True

    def pop(self):
        self.sent += 1
        return self.entries.popleft()


def periodic_step(queue: FifoQueue, N: int, M: int, slot: int, observations=None):
    """Every sensor offers a fresh packet (by arm index); up to M head packets go out.

    Returns the decision and the packets sent, in order. Packets that find
    the queue full are discarded on arrival. A backlogged arm can have more
    than one packet at the head; the decision lists each arm once while the
    packet list keeps every channel use.
    """
    _check_m(M)
    for a in range(N):
        queue.offer(a, slot, None if observations is None else observations[a])
    packets = [queue.pop() for _ in range(min(M, len(queue)))]
    arms = tuple(dict.fromkeys(p[0] for p in packets))
    return SchedulingDecision(arms, slot), packets


def delivered_age(generated: int, received: int) -> int:
    """AoI of a packet whose update is in hand at the start of slot ``received``.

    A packet sent (and delivered) during slot t is in hand from slot t + 1,
    so the simulator sets AoI to t - generated + 1.
    """
    if received <= generated:
        raise ValueError("a packet is received after the slot it was generated in")
    return received - generated
