"""Compare the numba and numpy backends on the solver and simulator hot loops.

    python benchmarks/bench_kernels.py [--repeat 3] [--slots 2000] [--json out.json]

Each kernel is called once untimed (numba compiles or loads its cache) and
then timed ``--repeat`` times; the best time is reported.
"""

import argparse
import json
import time

import numpy as np

from ctxsched import kernels
from ctxsched.config import load_config
from ctxsched.simulator import FleetConfig, _Packed


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(slots):
    cfg = load_config()
    grid = cfg.group("scanner").source
    table = cfg.table(cfg.group("scanner"))
    c = grid.csr
    q = np.ascontiguousarray(table.cost)
    h0 = np.zeros_like(q)
    policy = np.random.default_rng(0).random(q.shape) < 0.2
    fleet = cfg.fleet(20)
    N, M = len(fleet.arms), fleet.M

    def rvi(k):
        return lambda: k.rvi(c.indptr, c.indices, c.data, q, grid.success_prob, 1.5, h0, 1e-9, 200, 0.95)

    def propagate(k):
        v0 = np.random.default_rng(1).random((grid.n_states, 3))
        return lambda: k.propagate(c.indptr, c.indices, c.data, v0, table.delta_max)

    def renewal(k):
        return lambda: k.renewal(c.indptr, c.indices, c.data, q, policy, grid.success_prob)

    def simulate(k):
        pk = _Packed(fleet.arms, None)
        rng = np.random.default_rng(2)
        u = (rng.random((slots, N)), rng.random((slots, N + M)), rng.random((slots, N)))
        cap = FleetConfig(fleet.arms, M, slots).buffer

        def run():
            st = [np.zeros(N, np.int64), np.zeros(N, np.int64), np.ones(N, np.int64), np.full(N, -1, np.int64)]
            k.simulate_chunk(0, slots, 0, k.POLICY_PERIODIC, M, pk.indptr, pk.indices, pk.cum,
                             pk.arm_offset, pk.arm_qoff, pk.arm_nx, pk.arm_D, pk.arm_p, pk.q_flat, pk.g_flat,
                             *st, np.zeros(N), np.zeros(N, np.int64), np.zeros(N, np.int64),
                             np.zeros(cap, np.int64), np.zeros(cap, np.int64), np.zeros(cap, np.int64),
                             np.zeros(2, np.int64), np.zeros(4, np.int64), *u,
                             np.zeros((0, N), np.int64), np.zeros((0, N), np.int64), np.zeros((0, N), np.bool_))
        return run

    return {"rvi (200 sweeps, gridworld)": rvi, "propagate (full horizon)": propagate,
            "renewal evaluation": renewal, f"simulate ({slots} slots, N=20, periodic)": simulate}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--slots", type=int, default=2000)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args()

    backends = {"numba": kernels.load("numba"), "numpy": kernels.load("numpy")}
    rows = []
    print(f"{'kernel':42s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    for name, make in cases(args.slots).items():
        t = {b: best_of(make(k), args.repeat) for b, k in backends.items()}
        rows.append({"kernel": name, **t, "speedup": t["numpy"] / t["numba"]})
        print(f"{name:42s} {t['numba']:10.4f} {t['numpy']:10.4f} {t['numpy'] / t['numba']:8.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
