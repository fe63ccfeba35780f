"""Loop kernels compiled with numba.

Each function mirrors one in ``_vec`` and must return the same numbers; the
simulation kernel is bit-identical because all randomness arrives as arrays.
"""

import numpy as np
from numba import njit

POLICY_NETGAIN = 0
POLICY_RANDOMIZED = 1
POLICY_PERIODIC = 2
POLICY_MAXAGE = 3


@njit(cache=True)
def _matvec(indptr, indices, data, v, out):
    for i in range(out.shape[0]):
        for k in range(out.shape[1]):
            out[i, k] = 0.0
        for j in range(indptr[i], indptr[i + 1]):
            c = indices[j]
            w = data[j]
            for k in range(out.shape[1]):
                out[i, k] += w * v[c, k]


@njit(cache=True)
def propagate(indptr, indices, data, v0, depth):
    """out[d] = P^(d+1) @ v0 for d < depth; v0 has shape (n, k)."""
    n, k = v0.shape
    out = np.empty((depth, n, k))
    prev = v0.copy()
    for d in range(depth):
        _matvec(indptr, indices, data, prev, out[d])
        prev = out[d]
    return out


@njit(cache=True)
def expected_reset_value(indptr, indices, data, h1, depth):
    """e[d, x] = sum_x' P^(d+1)(x, x') h1(x')."""
    n = h1.shape[0]
    out = np.empty((depth, n))
    prev = h1.copy()
    for d in range(depth):
        for i in range(n):
            acc = 0.0
            for j in range(indptr[i], indptr[i + 1]):
                acc += data[j] * prev[indices[j]]
            out[d, i] = acc
        prev = out[d]
    return out


@njit(cache=True)
def rvi(indptr, indices, data, q, p, lam, h0, tol, max_iter, damping):
    """Returns (h, reference gain, span of Th - h, iterations, converged)."""
    D, n = q.shape
    h = h0 - h0[0, 0]
    th = np.empty((D, n))
    prev = np.empty(n)
    cur = np.empty(n)
    g = 0.0
    span = np.inf
    for it in range(1, max_iter + 1):
        for x in range(n):
            prev[x] = h[0, x]
        lo = np.inf
        hi = -np.inf
        for d in range(D):
            # cur = P^(d+1) h(1, .)
            for i in range(n):
                acc = 0.0
                for j in range(indptr[i], indptr[i + 1]):
                    acc += data[j] * prev[indices[j]]
                cur[i] = acc
            dn = d + 1 if d + 1 < D else D - 1
            for x in range(n):
                hn = h[dn, x]
                q0 = q[d, x] + hn
                q1 = q[d, x] + (1.0 - p) * hn + p * cur[x] + lam
                v = q0 if q0 <= q1 else q1
                th[d, x] = v
                diff = v - h[d, x]
                if diff < lo:
                    lo = diff
                if diff > hi:
                    hi = diff
            for x in range(n):
                prev[x] = cur[x]
        span = hi - lo
        g = th[0, 0] - h[0, 0]
        ref = h[0, 0] + damping * (th[0, 0] - h[0, 0])
        for d in range(D):
            for x in range(n):
                h[d, x] = h[d, x] + damping * (th[d, x] - h[d, x]) - ref
        if span <= tol:
            return h, g, span, it, True
    return h, g, span, max_iter, False


@njit(cache=True)
def renewal(indptr, indices, data, q, policy, p):
    """Per-start cycle statistics of a fixed transmit policy.

    Starting from (1, x), returns the expected cycle length, cost and number of
    transmissions until the next delivery, the distribution of the delivered
    state, and the probability of ending passive in the clamped state (D, x).
    """
    D, n = q.shape
    length = np.zeros(n)
    cost = np.zeros(n)
    tx = np.zeros(n)
    sink = np.zeros(n)
    M = np.zeros((n, n))
    r = np.empty(n)
    nxt = np.empty(n)
    for x in range(n):
        for i in range(n):
            r[i] = 0.0
        r[x] = 1.0
        s = 1.0
        for d in range(D):
            for i in range(n):
                nxt[i] = 0.0
            for i in range(n):
                ri = r[i]
                if ri != 0.0:
                    for j in range(indptr[i], indptr[i + 1]):
                        nxt[indices[j]] += ri * data[j]
            for i in range(n):
                r[i] = nxt[i]
            if d < D - 1:
                length[x] += s
                cost[x] += s * q[d, x]
                if policy[d, x]:
                    tx[x] += s
                    for i in range(n):
                        M[x, i] += s * p * r[i]
                    s *= 1.0 - p
            else:
                if policy[d, x]:
                    stay = s / p
                    length[x] += stay
                    cost[x] += stay * q[d, x]
                    tx[x] += stay
                    for i in range(n):
                        M[x, i] += s * r[i]
                else:
                    sink[x] = s
            if s == 0.0:
                break
    return M, length, cost, tx, sink


@njit(cache=True)
def _pick(n_arm, policy, deltas, gains, keys, m):
    """Ordered arms to transmit this slot (netgain / randomized / maxage)."""
    chosen = np.empty(min(n_arm, m), dtype=np.int64)
    count = 0
    if policy == POLICY_NETGAIN:
        order = np.argsort(-gains, kind="mergesort")
        for k in range(n_arm):
            a = order[k]
            if count >= m or not gains[a] > 0.0:
                break
            chosen[count] = a
            count += 1
    elif policy == POLICY_RANDOMIZED:
        order = np.argsort(keys, kind="mergesort")
        for k in range(min(n_arm, m)):
            chosen[count] = order[k]
            count += 1
    else:
        order = np.argsort(-deltas.astype(np.float64), kind="mergesort")
        for k in range(min(n_arm, m)):
            chosen[count] = order[k]
            count += 1
    return chosen[:count]


@njit(cache=True)
def simulate_chunk(t0, t_end, warmup, policy, m,
                   indptr, indices, cum,
                   arm_offset, arm_qoff, arm_nx, arm_D, arm_p,
                   q_flat, g_flat,
                   x_true, x_obs, delta, last_gen,
                   pen_sum, attempts, successes,
                   qa, qg, qx, qstate, qstats,
                   u_src, u_ch, u_sel,
                   rec_delta, rec_obs, rec_dec):
    """Advance the fleet from slot t0 to t_end (exclusive), in place.

    Random draws are rows ``t - t0`` of ``u_src`` (source moves), ``u_ch``
    (channel outcomes: column = arm, or N + k for the k-th repeat packet of an
    arm within one slot) and ``u_sel`` (randomized selection keys).
    Queue ring buffer: qstate = [head, length]; qstats = [offered, overflow,
    delivered, erased].
    """
    N = x_true.shape[0]
    cap = qa.shape[0]
    record = rec_delta.shape[0] > 0
    gains = np.zeros(N)
    used = np.zeros(N, dtype=np.bool_)
    for t in range(t0, t_end):
        row = t - t0
        # sources advance
        for a in range(N):
            s = arm_offset[a] + x_true[a]
            u = u_src[row, a]
            lo = indptr[s]
            hi = indptr[s + 1]
            j = lo
            while j < hi - 1 and not u < cum[j]:
                j += 1
            x_true[a] = indices[j] - arm_offset[a]
        for a in range(N):
            used[a] = False
        delivered = np.zeros(N, dtype=np.bool_)
        if policy == POLICY_PERIODIC:
            for a in range(N):
                qstats[0] += 1
                if qstate[1] < cap:
                    pos = (qstate[0] + qstate[1]) % cap
                    qa[pos] = a
                    qg[pos] = t
                    qx[pos] = x_true[a]
                    qstate[1] += 1
                else:
                    qstats[1] += 1
            extra = 0
            nsend = min(m, qstate[1])
            for k in range(nsend):
                pos = qstate[0]
                a = qa[pos]
                qstate[0] = (qstate[0] + 1) % cap
                qstate[1] -= 1
                attempts[a] += 1
                if record:
                    rec_dec[row, a] = True
                if used[a]:
                    u = u_ch[row, N + extra]
                    extra += 1
                else:
                    u = u_ch[row, a]
                    used[a] = True
                if u < arm_p[a]:
                    successes[a] += 1
                    qstats[2] += 1
                    if qg[pos] > last_gen[a]:
                        last_gen[a] = qg[pos]
                        delta[a] = t - qg[pos] + 1
                        x_obs[a] = qx[pos]
                        delivered[a] = True
                else:
                    qstats[3] += 1
        else:
            if policy == POLICY_NETGAIN:
                for a in range(N):
                    d = delta[a] if delta[a] < arm_D[a] else arm_D[a]
                    gains[a] = g_flat[arm_qoff[a] + (d - 1) * arm_nx[a] + x_obs[a]]
            chosen = _pick(N, policy, delta, gains, u_sel[row], m)
            for k in range(chosen.shape[0]):
                a = chosen[k]
                attempts[a] += 1
                if record:
                    rec_dec[row, a] = True
                if u_ch[row, a] < arm_p[a]:
                    successes[a] += 1
                    last_gen[a] = t
                    delta[a] = 1
                    x_obs[a] = x_true[a]
                    delivered[a] = True
        for a in range(N):
            if not delivered[a]:
                delta[a] += 1
        if record:
            for a in range(N):
                rec_delta[row, a] = delta[a]
                rec_obs[row, a] = x_obs[a]
        if t >= warmup:
            for a in range(N):
                d = delta[a] if delta[a] < arm_D[a] else arm_D[a]
                pen_sum[a] += q_flat[arm_qoff[a] + (d - 1) * arm_nx[a] + x_obs[a]]
