"""Forward filter and backward smoother inner loops.

Two interchangeable implementations of the same recursions:

* a numba ``@njit`` kernel built on hand-rolled small-matrix Cholesky
  factorizations (the default when numba is importable), and
* a pure-numpy loop using LAPACK factorizations per step.

Set ``TRACKEST_DISABLE_NUMBA=1`` to force the numpy path. Both return the
same ``(x_pred, P_pred, x_filt, P_filt, loglik_terms, status)`` tuple where
``status`` is ``-1`` on success or the step index at which the innovation
covariance stayed non-positive-definite after one jitter retry.

``benchmarks/bench_filter.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import linalg as _sla

LN_2PI = float(np.log(2.0 * np.pi))
_JITTER_SCALE = 1e-12


def _numba_disabled() -> bool:
    return os.environ.get("TRACKEST_DISABLE_NUMBA", "").strip().lower() in {
        "1", "true", "yes", "on",
    }


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------

def _chol_retry_numpy(S):
    try:
        return np.linalg.cholesky(S), True
    except np.linalg.LinAlgError:
        pass
    m = S.shape[0]
    S = S + (_JITTER_SCALE * np.trace(S) / m) * np.eye(m)
    try:
        return np.linalg.cholesky(S), True
    except np.linalg.LinAlgError:
        return S, False


def filter_forward_numpy(F, Q, H, z, r_diag, x0, P0):
    T, m, n = H.shape
    eye = np.eye(n)
    x_pred = np.empty((T, n))
    P_pred = np.empty((T, n, n))
    x_filt = np.empty((T, n))
    P_filt = np.empty((T, n, n))
    ll = np.zeros(T)

    x_f = x0
    P_f = P0
    for k in range(T):
        if k == 0:
            x_pr = x0.copy()
            P_pr = P0.copy()
        else:
            x_pr = F @ x_f
            P_pr = F @ P_f @ F.T + Q
        x_pred[k] = x_pr
        P_pred[k] = P_pr

        Hk = H[k]
        PHt = P_pr @ Hk.T
        S = Hk @ PHt
        S[np.arange(m), np.arange(m)] += r_diag
        S = 0.5 * (S + S.T)
        L, ok = _chol_retry_numpy(S)
        if not ok:
            return x_pred, P_pred, x_filt, P_filt, ll, k
        nu = z[k] - Hk @ x_pr
        alpha = _sla.cho_solve((L, True), nu, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        ll[k] = -0.5 * (m * LN_2PI + logdet + nu @ alpha)

        K = _sla.cho_solve((L, True), PHt.T, check_finite=False).T
        x_f = x_pr + K @ nu
        IKH = eye - K @ Hk
        P_f = IKH @ P_pr @ IKH.T + (K * r_diag) @ K.T
        P_f = 0.5 * (P_f + P_f.T)
        x_filt[k] = x_f
        P_filt[k] = P_f
    return x_pred, P_pred, x_filt, P_filt, ll, -1


def rts_backward_numpy(F, x_pred, P_pred, x_filt, P_filt):
    T, n = x_filt.shape
    x_s = np.empty_like(x_filt)
    P_s = np.empty_like(P_filt)
    x_s[-1] = x_filt[-1]
    P_s[-1] = P_filt[-1]
    for k in range(T - 2, -1, -1):
        Pp = P_pred[k + 1]
        L, ok = _chol_retry_numpy(Pp)
        if not ok:
            return x_s, P_s, k
        G = _sla.cho_solve((L, True), F @ P_filt[k], check_finite=False).T
        x_s[k] = x_filt[k] + G @ (x_s[k + 1] - x_pred[k + 1])
        P = P_filt[k] + G @ (P_s[k + 1] - Pp) @ G.T
        P_s[k] = 0.5 * (P + P.T)
    return x_s, P_s, -1


# ---------------------------------------------------------------------------
# loop kernels (compiled with numba when available)
# ---------------------------------------------------------------------------

def _chol(S):
    n = S.shape[0]
    L = np.zeros_like(S)
    for i in range(n):
        for j in range(i + 1):
            acc = S[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if acc <= 0.0:
                    return L, False
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    return L, True


def _chol_solve_vec(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        acc = b[i]
        for j in range(i):
            acc -= L[i, j] * y[j]
        y[i] = acc / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for j in range(i + 1, n):
            acc -= L[j, i] * x[j]
        x[i] = acc / L[i, i]
    return x


def _chol_solve_mat(L, B):
    n, r = B.shape
    X = np.empty((n, r))
    for c in range(r):
        X[:, c] = _chol_solve_vec(L, B[:, c].copy())
    return X


def _mm(A, B):
    p, q = A.shape
    r = B.shape[1]
    C = np.zeros((p, r))
    for i in range(p):
        for k in range(q):
            a = A[i, k]
            for j in range(r):
                C[i, j] += a * B[k, j]
    return C


def _mm_bt(A, B):
    # A @ B.T
    p, q = A.shape
    r = B.shape[0]
    C = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            acc = 0.0
            for k in range(q):
                acc += A[i, k] * B[j, k]
            C[i, j] = acc
    return C


def _mv(A, b):
    p, q = A.shape
    out = np.zeros(p)
    for i in range(p):
        acc = 0.0
        for k in range(q):
            acc += A[i, k] * b[k]
        out[i] = acc
    return out


def _filter_forward_loops(F, Q, H, z, r_diag, x0, P0):
    T, m, n = H.shape[0], H.shape[1], H.shape[2]
    x_pred = np.empty((T, n))
    P_pred = np.empty((T, n, n))
    x_filt = np.empty((T, n))
    P_filt = np.empty((T, n, n))
    ll = np.zeros(T)

    x_f = x0.copy()
    P_f = P0.copy()
    for k in range(T):
        if k == 0:
            x_pr = x0.copy()
            P_pr = P0.copy()
        else:
            x_pr = _mv(F, x_f)
            P_pr = _mm(F, _mm_bt(P_f, F)) + Q
        x_pred[k] = x_pr
        P_pred[k] = P_pr

        Hk = H[k]
        PHt = _mm_bt(P_pr, Hk)              # n x m
        S = _mm(Hk, PHt)                    # m x m
        for i in range(m):
            S[i, i] += r_diag[i]
        for i in range(m):
            for j in range(i):
                v = 0.5 * (S[i, j] + S[j, i])
                S[i, j] = v
                S[j, i] = v
        L, ok = _chol(S)
        if not ok:
            tr = 0.0
            for i in range(m):
                tr += S[i, i]
            jit = _JITTER_SCALE * tr / m
            for i in range(m):
                S[i, i] += jit
            L, ok = _chol(S)
            if not ok:
                return x_pred, P_pred, x_filt, P_filt, ll, k

        nu = z[k] - _mv(Hk, x_pr)
        alpha = _chol_solve_vec(L, nu)
        logdet = 0.0
        for i in range(m):
            logdet += np.log(L[i, i])
        quad = 0.0
        for i in range(m):
            quad += nu[i] * alpha[i]
        ll[k] = -0.5 * (m * LN_2PI + 2.0 * logdet + quad)

        Kt = _chol_solve_mat(L, PHt.T.copy())   # m x n, equals S^-1 H P
        K = Kt.T.copy()
        x_f = x_pr + _mv(K, nu)
        IKH = -_mm(K, Hk)
        for i in range(n):
            IKH[i, i] += 1.0
        P_f = _mm(IKH, _mm_bt(P_pr, IKH)) + _mm_bt(K * r_diag, K)
        for i in range(n):
            for j in range(i):
                v = 0.5 * (P_f[i, j] + P_f[j, i])
                P_f[i, j] = v
                P_f[j, i] = v
        x_filt[k] = x_f
        P_filt[k] = P_f
    return x_pred, P_pred, x_filt, P_filt, ll, -1


def _rts_backward_loops(F, x_pred, P_pred, x_filt, P_filt):
    T, n = x_filt.shape
    x_s = np.empty_like(x_filt)
    P_s = np.empty_like(P_filt)
    x_s[-1] = x_filt[-1]
    P_s[-1] = P_filt[-1]
    for k in range(T - 2, -1, -1):
        Pp = P_pred[k + 1].copy()
        L, ok = _chol(Pp)
        if not ok:
            tr = 0.0
            for i in range(n):
                tr += Pp[i, i]
            jit = _JITTER_SCALE * tr / n
            for i in range(n):
                Pp[i, i] += jit
            L, ok = _chol(Pp)
            if not ok:
                return x_s, P_s, k
        G = _chol_solve_mat(L, _mm(F, P_filt[k])).T.copy()
        x_s[k] = x_filt[k] + _mv(G, x_s[k + 1] - x_pred[k + 1])
        P = P_filt[k] + _mm(G, _mm_bt(P_s[k + 1] - P_pred[k + 1], G))
        for i in range(n):
            for j in range(i):
                v = 0.5 * (P[i, j] + P[j, i])
                P[i, j] = v
                P[j, i] = v
        P_s[k] = P
    return x_s, P_s, -1


NUMBA_ENABLED = False
filter_forward_njit = None
rts_backward_njit = None

if not _numba_disabled():
    try:
        import numba
    except ImportError:
        numba = None
    if numba is not None:
        _jit = numba.njit(cache=True, nogil=True)
        _chol = _jit(_chol)
        _chol_solve_vec = _jit(_chol_solve_vec)
        _chol_solve_mat = _jit(_chol_solve_mat)
        _mm = _jit(_mm)
        _mm_bt = _jit(_mm_bt)
        _mv = _jit(_mv)
        filter_forward_njit = _jit(_filter_forward_loops)
        rts_backward_njit = _jit(_rts_backward_loops)
        NUMBA_ENABLED = True

if NUMBA_ENABLED:
    filter_forward = filter_forward_njit
    rts_backward = rts_backward_njit
else:
    filter_forward = filter_forward_numpy
    rts_backward = rts_backward_numpy
