"""Compiled kernels for the conjugate linear model.

State for one model lives in preallocated buffers so the samplers can run
entirely inside compiled loops:

    F      (K+1, K+1)  inverse of Z'Z + Lambda, leading block in use
    zty    (K+1,)      Z'y
    order  (K,)        included columns in inclusion order
    pos    (p,)        position of a column in ``order`` or -1
    fs     (NFS,)      float scalars, see FS_* below
    iv     (NIV,)      integer scalars, see IV_* below

Column 0 of Z is the intercept; column ``r + 1`` is ``order[r]``.

``data`` is the tuple ``(xt, y, xty, col_sq, col_sum, dsc)`` with ``xt`` the
transposed design (p, n) and ``dsc = [n, y'y, sum(y)]``.  ``cache`` is
``(G, slot, owner, stamp, clock)``: row ``G[s]`` holds ``X' x_k`` for the
column ``k = owner[s]``.
"""

import numba as nb
import numpy as np

FS_A = 0
FS_LOGDET = 1
FS_G = 2
FS_LOGML = 3
FS_LOGPRIOR = 4
FS_LOGPOST = 5
FS_TEMP = 6
NFS = 7

IV_SIZE = 0
IV_SINCE_REFRESH = 1
NIV = 2

OK = 0
ERR_SINGULAR = 1
ERR_DEGENERATE = 2
ERR_CAP = 3

SINGULAR_RTOL = 1e-12
COND_LIMIT = 1e14


@nb.njit(cache=True, nogil=True)
def col_dot(xt, k, j):
    s = 0.0
    a = xt[k]
    b = xt[j]
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@nb.njit(cache=True, nogil=True)
def cross(data, cache, k, j):
    """x_k' x_j, from the cache when either column is resident."""
    if k == j:
        return data[3][j]
    G, slot = cache[0], cache[1]
    s = slot[k]
    if s >= 0:
        return G[s, j]
    s = slot[j]
    if s >= 0:
        return G[s, k]
    return col_dot(data[0], k, j)


@nb.njit(cache=True, nogil=True)
def ensure_cached(data, cache, k):
    G, slot, owner, stamp, clock = cache
    cap = owner.shape[0]
    if cap == 0:
        return
    clock[0] += 1
    s = slot[k]
    if s >= 0:
        stamp[s] = clock[0]
        return
    best = 0
    for t in range(cap):
        if owner[t] < 0:
            best = t
            break
        if stamp[t] < stamp[best]:
            best = t
    if owner[best] >= 0:
        slot[owner[best]] = -1
    owner[best] = k
    slot[k] = best
    stamp[best] = clock[0]
    xt = data[0]
    for j in range(xt.shape[0]):
        G[best, j] = col_dot(xt, k, j)
    G[best, k] = data[3][k]


@nb.njit(cache=True, nogil=True)
def cross_vector(data, cache, order, size, j, b):
    """Fill b[:size+1] with Z' x_j."""
    b[0] = data[4][j]
    for r in range(size):
        b[r + 1] = cross(data, cache, order[r], j)


@nb.njit(cache=True, nogil=True)
def log_ml_from(fs, size, n):
    return (-0.5 * fs[FS_LOGDET] - 0.5 * size * np.log(fs[FS_G])
            - 0.5 * n * np.log(fs[FS_A]))


@nb.njit(cache=True, nogil=True)
def null_stats(data, F, zty, pos, fs, iv):
    n = data[5][0]
    yty = data[5][1]
    sumy = data[5][2]
    F[0, 0] = 1.0 / n
    zty[0] = sumy
    for j in range(pos.shape[0]):
        pos[j] = -1
    iv[IV_SIZE] = 0
    a = yty - sumy * sumy / n
    fs[FS_A] = a
    fs[FS_LOGDET] = np.log(n)
    if not a > 0.0:
        return ERR_DEGENERATE
    fs[FS_LOGML] = log_ml_from(fs, 0, n)
    return OK


@nb.njit(cache=True, nogil=True)
def rebuild(data, cache, order, size, F, zty, pos, fs, iv, work):
    """From-scratch factorisation for the model listed in order[:size].

    ``work`` is a scratch (K+1, K+1) array.  Z'Z + Lambda is Cholesky
    factored; the pivot ratio serves as the condition estimate.
    """
    n = data[5][0]
    ginv = 1.0 / fs[FS_G]
    m = size + 1
    M = work
    M[0, 0] = n
    for r in range(size):
        k = order[r]
        M[0, r + 1] = data[4][k]
        M[r + 1, 0] = data[4][k]
        for c in range(r + 1):
            v = cross(data, cache, k, order[c])
            M[r + 1, c + 1] = v
            M[c + 1, r + 1] = v
        M[r + 1, r + 1] += ginv
    # in-place lower Cholesky into M's lower triangle
    pmax = 0.0
    pmin = np.inf
    for c in range(m):
        s = M[c, c]
        for t in range(c):
            s -= M[c, t] * M[c, t]
        if not s > 0.0:
            return ERR_SINGULAR
        piv = np.sqrt(s)
        M[c, c] = piv
        pmax = max(pmax, piv)
        pmin = min(pmin, piv)
        for r in range(c + 1, m):
            s2 = M[r, c]
            for t in range(c):
                s2 -= M[r, t] * M[c, t]
            M[r, c] = s2 / piv
    if (pmax / pmin) ** 2 > COND_LIMIT:
        return ERR_SINGULAR
    logdet = 0.0
    for c in range(m):
        logdet += 2.0 * np.log(M[c, c])
    # F = L^{-T} L^{-1}: invert L into the upper triangle of F then multiply
    for c in range(m):
        for r in range(m):
            F[r, c] = 0.0
    for c in range(m):
        # solve L x = e_c, x stored in column c of F (only rows >= c nonzero)
        for r in range(c, m):
            s = 1.0 if r == c else 0.0
            for t in range(c, r):
                s -= M[r, t] * F[t, c]
            F[r, c] = s / M[r, r]
    # F currently holds Linv (lower). Form Linv' Linv into the upper part of M.
    for r in range(m):
        for c in range(r, m):
            s = 0.0
            for t in range(c, m):
                s += F[t, r] * F[t, c]
            M[r, c] = s
    for r in range(m):
        for c in range(r, m):
            F[r, c] = M[r, c]
            F[c, r] = M[r, c]
    zty[0] = data[5][2]
    for j in range(pos.shape[0]):
        pos[j] = -1
    for r in range(size):
        zty[r + 1] = data[2][order[r]]
        pos[order[r]] = r
    quad = 0.0
    for r in range(m):
        s = 0.0
        for c in range(m):
            s += F[r, c] * zty[c]
        quad += zty[r] * s
    a = data[5][1] - quad
    iv[IV_SIZE] = size
    iv[IV_SINCE_REFRESH] = 0
    fs[FS_LOGDET] = logdet
    fs[FS_A] = a
    if not a > 1e-14 * data[5][1]:
        return ERR_DEGENERATE
    fs[FS_LOGML] = log_ml_from(fs, size, n)
    return OK


@nb.njit(cache=True, nogil=True)
def _schur_up(data, cache, F, zty, order, size, fs, j, b, fb):
    """Return (d_up, e) for an excluded column; fills b = Z'x_j, fb = F b."""
    m = size + 1
    cross_vector(data, cache, order, size, j, b)
    quad = 0.0
    e = data[2][j]
    for r in range(m):
        s = 0.0
        for c in range(m):
            s += F[r, c] * b[c]
        fb[r] = s
        quad += b[r] * s
        e -= s * zty[r]
    d = data[3][j] + 1.0 / fs[FS_G] - quad
    return d, e


@nb.njit(cache=True, nogil=True)
def add_var(data, cache, F, zty, order, pos, fs, iv, j, b, fb, max_size):
    size = iv[IV_SIZE]
    if size >= max_size:
        return ERR_CAP
    ginv = 1.0 / fs[FS_G]
    d, e = _schur_up(data, cache, F, zty, order, size, fs, j, b, fb)
    if not d > SINGULAR_RTOL * (data[3][j] + ginv):
        return ERR_SINGULAR
    a_new = fs[FS_A] - e * e / d
    if not a_new > 1e-14 * data[5][1]:
        return ERR_DEGENERATE
    m = size + 1
    for r in range(m):
        fr = fb[r] / d
        for c in range(m):
            F[r, c] += fr * fb[c]
        F[r, m] = -fr
        F[m, r] = -fr
    F[m, m] = 1.0 / d
    zty[m] = data[2][j]
    order[size] = j
    pos[j] = size
    iv[IV_SIZE] = size + 1
    fs[FS_A] = a_new
    fs[FS_LOGDET] += np.log(d)
    fs[FS_LOGML] = log_ml_from(fs, size + 1, data[5][0])
    return OK


@nb.njit(cache=True, nogil=True)
def remove_var(data, F, zty, order, pos, fs, iv, j):
    r = pos[j]
    if r < 0:
        return ERR_SINGULAR
    size = iv[IV_SIZE]
    m = size + 1
    q = r + 1
    fqq = F[q, q]
    if not fqq > 0.0:
        return ERR_SINGULAR
    s = 0.0
    for c in range(m):
        s += zty[c] * F[c, q]
    a_new = fs[FS_A] + s * s / fqq
    for a in range(m):
        if a == q:
            continue
        fa = F[a, q] / fqq
        for c in range(m):
            if c == q:
                continue
            F[a, c] -= fa * F[q, c]
    # close the gap left by row/column q
    for a in range(q, m - 1):
        for c in range(m):
            F[a, c] = F[a + 1, c]
    for c in range(q, m - 1):
        for a in range(m - 1):
            F[a, c] = F[a, c + 1]
    for a in range(q, m - 1):
        zty[a] = zty[a + 1]
    for t in range(r, size - 1):
        order[t] = order[t + 1]
        pos[order[t]] = t
    pos[j] = -1
    iv[IV_SIZE] = size - 1
    fs[FS_A] = a_new
    fs[FS_LOGDET] += np.log(fqq)
    fs[FS_LOGML] = log_ml_from(fs, size - 1, data[5][0])
    return OK


@nb.njit(cache=True, nogil=True)
def log_bf_up(data, cache, F, zty, order, fs, iv, j, b, fb):
    """Log Bayes factor for adding excluded column j; NaN on breakdown."""
    size = iv[IV_SIZE]
    d, e = _schur_up(data, cache, F, zty, order, size, fs, j, b, fb)
    a = fs[FS_A]
    ratio = (a - e * e / d) / a
    if not (d > 0.0 and ratio > 0.0):
        return np.nan
    return (-0.5 * np.log(d) - 0.5 * np.log(fs[FS_G])
            - 0.5 * data[5][0] * np.log(ratio))


@nb.njit(cache=True, nogil=True)
def log_bf_down(data, F, zty, pos, fs, iv, j):
    """Log Bayes factor for keeping included column j; NaN on breakdown."""
    q = pos[j] + 1
    m = iv[IV_SIZE] + 1
    fqq = F[q, q]
    if not fqq > 0.0:
        return np.nan
    s = 0.0
    for c in range(m):
        s += zty[c] * F[c, q]
    a = fs[FS_A]
    return (0.5 * np.log(fqq) - 0.5 * np.log(fs[FS_G])
            + 0.5 * data[5][0] * np.log1p(s * s / (fqq * a)))


@nb.njit(cache=True, nogil=True)
def _logistic(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    ex = np.exp(x)
    return ex / (1.0 + ex)


@nb.njit(cache=True, nogil=True)
def rb_row(data, cache, F, zty, order, pos, fs, iv, temp, prior_odds, out, b, fb, w,
           quad, ev):
    """p(gamma_j = 1 | gamma_-j, y) at temperature ``temp`` for every j.

    ``prior_odds[k]`` is the log prior odds of inclusion when k other
    columns are included.  ``quad`` and ``ev`` are length-p scratch.
    Returns the number of saturated coordinates.

    For excluded columns the quadratic forms b_j' F b_j and the residual
    cross-products are accumulated for all j at once, sweeping rows of the
    cached X'X so the inner loops run over contiguous memory.
    """
    size = iv[IV_SIZE]
    m = size + 1
    p = pos.shape[0]
    G, slot = cache[0], cache[1]
    for r in range(size):
        ensure_cached(data, cache, order[r])
    batched = True
    for r in range(size):
        if slot[order[r]] < 0:
            batched = False
    for r in range(m):
        s = 0.0
        for c in range(m):
            s += F[r, c] * zty[c]
        w[r] = s
    a = fs[FS_A]
    ginv = 1.0 / fs[FS_G]
    half_log_g = 0.5 * np.log(fs[FS_G])
    n = data[5][0]
    xty = data[2]
    col_sq = data[3]
    col_sum = data[4]
    if batched:
        # quad_j = sum_r b_r (sum_c F_rc b_c), rows b_0 = col_sum, b_{t+1} = G[slot]
        for j in range(p):
            quad[j] = 0.0
            ev[j] = xty[j] - col_sum[j] * w[0]
        for t in range(size):
            gt = G[slot[order[t]]]
            wt = w[t + 1]
            for j in range(p):
                ev[j] -= gt[j] * wt
        for r in range(m):
            gr = col_sum if r == 0 else G[slot[order[r - 1]]]
            for j in range(p):
                out[j] = F[r, 0] * col_sum[j]
            for c in range(1, m):
                gc = G[slot[order[c - 1]]]
                f = F[r, c]
                for j in range(p):
                    out[j] += f * gc[j]
            for j in range(p):
                quad[j] += gr[j] * out[j]
    bad = 0
    for j in range(p):
        r = pos[j]
        if r >= 0:
            q = r + 1
            fqq = F[q, q]
            s = 0.0
            for c in range(m):
                s += zty[c] * F[c, q]
            lbf = 0.5 * np.log(fqq) - half_log_g + 0.5 * n * np.log1p(s * s / (fqq * a))
            lo = prior_odds[size - 1]
        else:
            if batched:
                d = col_sq[j] + ginv - quad[j]
                e = ev[j]
            else:
                d, e = _schur_up(data, cache, F, zty, order, size, fs, j, b, fb)
            ratio = 1.0 - e * e / (d * a)
            if d > 0.0 and ratio > 0.0:
                lbf = -0.5 * np.log(d) - half_log_g - 0.5 * n * np.log(ratio)
            else:
                lbf = np.nan
            lo = prior_odds[size]
        if np.isnan(lbf):
            bad += 1
            out[j] = 1.0 if r >= 0 else 0.0
            continue
        out[j] = _logistic(lo + temp * lbf)
    return bad
