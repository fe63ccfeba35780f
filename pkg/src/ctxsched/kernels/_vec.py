"""Pure numpy versions of the kernels in ``_jit`` (same signatures, same results)."""

import numpy as np
from scipy.sparse import csr_matrix

POLICY_NETGAIN = 0
POLICY_RANDOMIZED = 1
POLICY_PERIODIC = 2
POLICY_MAXAGE = 3


def _dense(indptr, indices, data):
    n = indptr.shape[0] - 1
    return csr_matrix((data, indices, indptr), shape=(n, n))


def propagate(indptr, indices, data, v0, depth):
    P = _dense(indptr, indices, data)
    out = np.empty((depth,) + v0.shape)
    prev = v0
    for d in range(depth):
        out[d] = P @ prev
        prev = out[d]
    return out


def expected_reset_value(indptr, indices, data, h1, depth):
    return propagate(indptr, indices, data, h1[:, None], depth)[:, :, 0]


def rvi(indptr, indices, data, q, p, lam, h0, tol, max_iter, damping):
    D = q.shape[0]
    nxt = np.minimum(np.arange(1, D + 1), D - 1)
    h = h0 - h0[0, 0]
    g = 0.0
    span = np.inf
    for it in range(1, max_iter + 1):
        e = expected_reset_value(indptr, indices, data, h[0], D)
        hn = h[nxt]
        th = np.minimum(q + hn, q + (1.0 - p) * hn + p * e + lam)
        diff = th - h
        span = diff.max() - diff.min()
        g = th[0, 0] - h[0, 0]
        h = h + damping * diff
        h -= h[0, 0]
        if span <= tol:
            return h, g, span, it, True
    return h, g, span, max_iter, False


def renewal(indptr, indices, data, q, policy, p):
    D, n = q.shape
    P = _dense(indptr, indices, data)
    R = np.eye(n)
    s = np.ones(n)
    length = np.zeros(n)
    cost = np.zeros(n)
    tx = np.zeros(n)
    sink = np.zeros(n)
    M = np.zeros((n, n))
    for d in range(D):
        R = np.asarray((P.T @ R.T).T)
        act = policy[d].astype(bool)
        if d < D - 1:
            length += s
            cost += s * q[d]
            tx += np.where(act, s, 0.0)
            M += np.where(act, s * p, 0.0)[:, None] * R
            s = np.where(act, s * (1.0 - p), s)
        else:
            stay = s / p
            length += np.where(act, stay, 0.0)
            cost += np.where(act, stay * q[d], 0.0)
            tx += np.where(act, stay, 0.0)
            M += np.where(act, s, 0.0)[:, None] * R
            sink = np.where(act, 0.0, s)
    return M, length, cost, tx, sink


def _pick(n_arm, policy, deltas, gains, keys, m):
    if policy == POLICY_NETGAIN:
        order = np.argsort(-gains, kind="stable")
        order = order[gains[order] > 0.0]
        return order[:m]
    if policy == POLICY_RANDOMIZED:
        return np.argsort(keys, kind="stable")[:min(n_arm, m)]
    return np.argsort(-deltas.astype(np.float64), kind="stable")[:min(n_arm, m)]


def simulate_chunk(t0, t_end, warmup, policy, m,
                   indptr, indices, cum,
                   arm_offset, arm_qoff, arm_nx, arm_D, arm_p,
                   q_flat, g_flat,
                   x_true, x_obs, delta, last_gen,
                   pen_sum, attempts, successes,
                   qa, qg, qx, qstate, qstats,
                   u_src, u_ch, u_sel,
                   rec_delta, rec_obs, rec_dec):
    N = x_true.shape[0]
    cap = qa.shape[0]
    record = rec_delta.shape[0] > 0
    # padded per-state cumulative rows for vectorised sampling
    width = int(np.diff(indptr).max())
    lo = indptr[:-1]
    nnz = np.diff(indptr)
    cols = np.arange(width)
    valid = cols[None, :] < nnz[:, None]
    pos = np.where(valid, lo[:, None] + cols[None, :], 0)
    cum_pad = np.where(valid, cum[pos], np.inf)
    idx_pad = np.where(valid, indices[pos], -1)
    for t in range(t0, t_end):
        row = t - t0
        s = arm_offset + x_true
        k = (u_src[row][:, None] >= cum_pad[s]).sum(axis=1)
        k = np.minimum(k, nnz[s] - 1)
        x_true[:] = idx_pad[s, k] - arm_offset
        delivered = np.zeros(N, dtype=bool)
        if policy == POLICY_PERIODIC:
            for a in range(N):
                qstats[0] += 1
                if qstate[1] < cap:
                    p_ = (qstate[0] + qstate[1]) % cap
                    qa[p_] = a
                    qg[p_] = t
                    qx[p_] = x_true[a]
                    qstate[1] += 1
                else:
                    qstats[1] += 1
            used = np.zeros(N, dtype=bool)
            extra = 0
            for _ in range(min(m, int(qstate[1]))):
                p_ = qstate[0]
                a = qa[p_]
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
                    if qg[p_] > last_gen[a]:
                        last_gen[a] = qg[p_]
                        delta[a] = t - qg[p_] + 1
                        x_obs[a] = qx[p_]
                        delivered[a] = True
                else:
                    qstats[3] += 1
        else:
            gains = np.zeros(N)
            if policy == POLICY_NETGAIN:
                d = np.minimum(delta, arm_D)
                gains = g_flat[arm_qoff + (d - 1) * arm_nx + x_obs]
            chosen = _pick(N, policy, delta, gains, u_sel[row], m)
            attempts[chosen] += 1
            if record:
                rec_dec[row, chosen] = True
            ok = chosen[u_ch[row, chosen] < arm_p[chosen]]
            successes[ok] += 1
            last_gen[ok] = t
            delta[ok] = 1
            x_obs[ok] = x_true[ok]
            delivered[ok] = True
        delta[~delivered] += 1
        if record:
            rec_delta[row] = delta
            rec_obs[row] = x_obs
        if t >= warmup:
            d = np.minimum(delta, arm_D)
            pen_sum += q_flat[arm_qoff + (d - 1) * arm_nx + x_obs]
