"""Small builders shared by the test modules."""

import numpy as np

from ctxsched.markov import random_source, two_state_chain
from ctxsched.penalty import SAFETY_LOSS, LossMatrix, build_penalty_table


def flip_chain(rho=0.1, p=1.0):
    return two_state_chain(rho, p)


def zero_one(labels=("0", "1")):
    return LossMatrix.zero_one(labels)


def random_sources(seed, count, sizes=(2, 3, 4, 5, 6, 8, 10)):
    rng = np.random.default_rng(seed)
    return [random_source(rng, int(rng.choice(sizes))) for _ in range(count)]


def small_config(**over):
    """Two robots plus two-state scanners: solves in milliseconds."""
    doc = {
        "M": 2,
        "N": 5,
        "groups": [
            {"name": "robot", "count": 2,
             "source": {"type": "deterministic", "path": [[1, 1], [1, 2], [1, 3], [1, 4]], "success_prob": 0.95}},
            {"name": "pair", "count": "fill",
             "source": {"type": "explicit", "states": ["a", "b"], "matrix": [[0.9, 0.1], [0.1, 0.9]],
                        "danger": ["safe", "dangerous"], "success_prob": 0.9}},
        ],
        "n_sweep": [2, 4, 6],
        "gammas": [1, 2],
        "horizon": 3000,
        "reps": 3,
        "penalty_curve": {"group": "pair", "states": ["a", "b"]},
    }
    doc.update(over)
    return doc


def small_instances():
    """Every arm with at most 12 states: (source, table)."""
    out = []
    for D in (1, 2, 3, 4, 5, 6):
        for p in (1.0, 0.7):
            src = flip_chain(0.1, p)
            out.append((f"flip-D{D}-p{p}", src, build_penalty_table(src, zero_one(), delta_max=D)))
    rng = np.random.default_rng(12)
    for n, D in ((3, 4), (3, 3), (4, 3), (4, 2), (2, 6), (6, 2), (12, 1)):
        src = random_source(rng, n)
        out.append((f"rand-n{n}-D{D}", src, build_penalty_table(src, SAFETY_LOSS, delta_max=D)))
    return out
