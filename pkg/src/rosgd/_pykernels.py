"""Numpy implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` function by function.  Trials are vectorised along
the leading axis, so this fallback is usable (if slower) when the extension
is not built.
"""

import numpy as np

BACKEND = "numpy"


def fisher_yates(u):
    """Permutation of ``range(len(u) + 1)`` from ``len(u)`` uniforms.

    Step ``k`` swaps position ``i = T-1-k`` with ``j = floor(u[k] * (i+1))``.
    """
    u = np.asarray(u, dtype=np.float64)
    T = u.shape[0] + 1
    perm = list(range(T))
    for k in range(T - 1):
        i = T - 1 - k
        j = int(u[k] * (i + 1))
        if j > i:
            j = i
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)


def _project_rows(X, kind, p0, p1):
    if kind == 0:
        diff = X - p0
        norms = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        out = norms > p1[0]
        if np.any(out):
            X = X.copy()
            X[out] = p0 + diff[out] * (p1[0] / norms[out])[:, None]
        return X
    return np.minimum(np.maximum(X, p0), p1)


def _step(W, B, lam, c, A, src_col, eta_t, kind, p0, p1):
    G = lam * W + c[src_col][:, None] * (W @ B.T) + A[src_col]
    gn = np.sqrt(np.einsum("ij,ij->i", G, G))
    if not np.all(np.isfinite(gn)):
        raise FloatingPointError("non-finite gradient encountered")
    return _project_rows(W - eta_t * G, kind, p0, p1), gn


def sgd_paths(B, lam, c, A, src, eta, w1, kind, p0, p1):
    """Projected SGD on quadratic components, recording every iterate.

    Returns ``(W, gnorm)`` with shapes ``(n, s+1, d)`` and ``(n, s)`` where
    ``src`` has shape ``(n, s)``.  Row ``k`` of ``src`` lists the component
    whose gradient drives each step of trial ``k``.
    """
    src = np.asarray(src, dtype=np.int64)
    n, s = src.shape
    d = w1.shape[0]
    Wout = np.empty((n, s + 1, d))
    gnorm = np.empty((n, s))
    W = np.broadcast_to(w1, (n, d)).astype(np.float64)
    Wout[:, 0] = W
    for t in range(s):
        W, gnorm[:, t] = _step(W, B, lam, c, A, src[:, t], eta[t], kind, p0, p1)
        Wout[:, t + 1] = W
    return Wout, gnorm


def sgd_final(B, lam, c, A, src, eta, w1, kind, p0, p1):
    """Same dynamics as :func:`sgd_paths`, returning only the last iterates."""
    src = np.asarray(src, dtype=np.int64)
    n, s = src.shape
    W = np.broadcast_to(w1, (n, w1.shape[0])).astype(np.float64)
    for t in range(s):
        W, _ = _step(W, B, lam, c, A, src[:, t], eta[t], kind, p0, p1)
    return W
