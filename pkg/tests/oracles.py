"""Independent reference implementations used to check the package's fast
paths. Everything here is deliberately brute force and shares no code with
the library."""

import numpy as np


def matmul_triple_loop(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def softmax_direct(m):
    m = np.asarray(m, dtype=float)
    e = np.exp(m)
    return e / e.sum(axis=1, keepdims=True)


def jacobi_smallest_eigenvector(s, sweeps=100, tol=1e-14):
    """Cyclic Jacobi rotations on a symmetric matrix; returns the eigenvector
    of the smallest eigenvalue."""
    a = np.array(s, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(a[p, q]))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= tol:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = sn
                rot[q, p] = -sn
                a = rot.T @ a @ rot
                v = v @ rot
    idx = int(np.argmin(np.diag(a)))
    return v[:, idx]


def sinkhorn_exp_domain(d, dustbin, iterations, inv_temperature=1.0):
    """Plain exponential-domain alternating normalization of the expanded
    transport problem (no log-space tricks)."""
    d = np.asarray(d, dtype=float)
    m, n = d.shape
    z = np.empty((m + 1, n + 1))
    z[:m, :n] = -inv_temperature * d
    z[m, :] = dustbin
    z[:, n] = dustbin
    kernel = np.exp(z)
    r = np.concatenate([np.ones(m), [float(n)]])
    c = np.concatenate([np.ones(n), [float(m)]])
    u = np.ones(m + 1)
    v = np.ones(n + 1)
    for _ in range(iterations):
        u = r / (kernel @ v)
        v = c / (kernel.T @ u)
    return u[:, None] * kernel * v[None, :]


def mutual_argmax_scan(scores, threshold):
    """Exhaustive mutual-argmax match extraction."""
    scores = np.asarray(scores, dtype=float)
    out = []
    for i in range(scores.shape[0]):
        for j in range(scores.shape[1]):
            s = scores[i, j]
            if s < threshold:
                continue
            if np.argmax(scores[i]) == j and np.argmax(scores[:, j]) == i:
                out.append((i, j, s))
    return out


def attention_mean_triple_loop(amap):
    """Per-query mean over keys and heads, normalized to sum 1."""
    amap = np.asarray(amap, dtype=float)
    if amap.ndim == 2:
        amap = amap[:, :, None]
    nq, nk, nh = amap.shape
    raw = np.zeros(nq)
    for i in range(nq):
        acc = 0.0
        for j in range(nk):
            for h in range(nh):
                acc += amap[i, j, h]
        raw[i] = acc / (nk * nh)
    return raw / raw.sum()


def sampson_by_formula(f, x, y):
    """Direct evaluation of the first-order epipolar residual."""
    xh = np.array([x[0], x[1], 1.0])
    yh = np.array([y[0], y[1], 1.0])
    fx = f @ xh
    fty = f.T @ yh
    num = float(yh @ f @ xh) ** 2
    den = fx[0] ** 2 + fx[1] ** 2 + fty[0] ** 2 + fty[1] ** 2
    return num / den
