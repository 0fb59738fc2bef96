"""Compiled sampling loop.

``run_range`` advances every chain slot through iterations ``[i0, i1)``.
A run has ``L`` replicas of a ladder of ``m`` temperature levels; slot
``level_slot[r, k]`` holds the state currently at level ``k`` of replica
``r``.  Level ``m - 1`` is the untempered target.  Adaptive parameters are
stored per level (or in level 0 only when levels share them) and every
chain step adapts them immediately, in replica order, so the schedule is
fixed by the seed.
"""

import numba as nb
import numpy as np

from . import _kernels as K
from . import proposal as P
from . import rng as R

ALGO_EIA = 0
ALGO_ASI = 1
ALGO_ADS = 2

# integer config slots
CI_ALGO = 0
CI_L = 1
CI_M = 2
CI_MAX_SIZE = 3
CI_BURN = 4
CI_ITERS = 5
CI_THIN = 6
CI_REFRESH = 7
CI_ADAPT_AFTER = 8
CI_RB_BURN_ONLY = 9
CI_RECORD_RB = 10
CI_RANDOM_G = 11
CI_SHARE_LEVELS = 12
CI_ADAPT_LADDER = 13
CI_SNAP_STRIDE = 14
NCI = 15

# float config slots
CF_EPS = 0
CF_TAU_L = 1
CF_TAU_U = 2
CF_TAU = 3
CF_KAPPA = 4
CF_PHI_SCALE = 5
CF_LAMBDA = 6
CF_G_SCALE = 7
CF_G_STEP = 8
CF_SWAP_TARGET = 9
NCF = 10

# counters
CT_ERRORS = 0
CT_CAP = 1
CT_SATURATED = 2
CT_VIOL_EIA = 3
CT_VIOL_ZETA = 4
CT_VIOL_PIHAT = 5
CT_FLOORS = 6
CT_REFRESH = 7
CT_G_ACCEPT = 8
CT_NOOP = 9
CT_FLOOR_SHORT = 10
CT_ADAPT_STEPS = 11
NCT = 12

VIOL_RTOL = 1e-12


@nb.njit(cache=True, nogil=True)
def _copy_state(m, size, p, order, pos, F, zty, fs, iv, order2, pos2, F2, zty2, fs2, iv2):
    for r in range(m):
        for c in range(m):
            F2[r, c] = F[r, c]
        zty2[r] = zty[r]
    for r in range(size):
        order2[r] = order[r]
    for j in range(p):
        pos2[j] = pos[j]
    for t in range(fs.shape[0]):
        fs2[t] = fs[t]
    for t in range(iv.shape[0]):
        iv2[t] = iv[t]


@nb.njit(cache=True, nogil=True)
def apply_flips(data, cache, max_size, order, pos, F, zty, fs, iv,
                flips, nf, was_in, order2, pos2, F2, zty2, fs2, iv2, b, fb):
    """Copy the state into the scratch buffers and apply the flips there.

    Removals are applied first, then additions.
    """
    size = iv[K.IV_SIZE]
    p = pos.shape[0]
    _copy_state(size + 1, size, p, order, pos, F, zty, fs, iv,
                order2, pos2, F2, zty2, fs2, iv2)
    for t in range(nf):
        if was_in[t]:
            st = K.remove_var(data, F2, zty2, order2, pos2, fs2, iv2, flips[t])
            if st != K.OK:
                return st
    for t in range(nf):
        if not was_in[t]:
            st = K.add_var(data, cache, F2, zty2, order2, pos2, fs2, iv2, flips[t],
                           b, fb, max_size)
            if st != K.OK:
                return st
    return K.OK


@nb.njit(cache=True, nogil=True)
def commit(gam, order, pos, F, zty, fs, iv, order2, pos2, F2, zty2, fs2, iv2,
           flips, nf, data, cache):
    size = iv2[K.IV_SIZE]
    _copy_state(size + 1, size, pos.shape[0], order2, pos2, F2, zty2, fs2, iv2,
                order, pos, F, zty, fs, iv)
    for t in range(nf):
        j = flips[t]
        gam[j] = 1 - gam[j]
        if gam[j]:
            K.ensure_cached(data, cache, j)


@nb.njit(cache=True, nogil=True)
def log_post(fs, iv, logprior, temp):
    return temp * fs[K.FS_LOGML] + logprior[iv[K.IV_SIZE]]


@nb.njit(cache=True, nogil=True)
def maybe_refresh(data, cache, order, pos, F, zty, fs, iv, refresh_every,
                  order2, pos2, F2, zty2, fs2, iv2, work):
    """Rebuild from scratch after ``refresh_every`` accepted moves."""
    iv[K.IV_SINCE_REFRESH] += 1
    if refresh_every <= 0 or iv[K.IV_SINCE_REFRESH] < refresh_every:
        return 0
    size = iv[K.IV_SIZE]
    _copy_state(size + 1, size, pos.shape[0], order, pos, F, zty, fs, iv,
                order2, pos2, F2, zty2, fs2, iv2)
    st = K.rebuild(data, cache, order2, size, F2, zty2, pos2, fs2, iv2, work)
    if st == K.OK:
        _copy_state(size + 1, size, pos.shape[0], order2, pos2, F2, zty2, fs2, iv2,
                    order, pos, F, zty, fs, iv)
        return 1
    iv[K.IV_SINCE_REFRESH] = 0
    return 0


@nb.njit(cache=True, nogil=True)
def mh_step(data, cache, logprior, max_size, temp, gam, order, pos, F, zty, fs, iv,
            a_probs, d_probs, state, scratch, out):
    """One Metropolis-Hastings step with the product proposal.

    ``out`` receives [acceptance probability, accepted, n flips, status].
    The flipped indices and their pre-move values stay in
    ``scratch[10]`` and ``scratch[11]``.
    """
    order2, pos2, F2, zty2, fs2, iv2, work, b, fb, w, flips, was_in, row, quad, ev = scratch
    nf = P.sample_flips(gam, a_probs, d_probs, state, flips)
    u = R.uniform(state)
    for t in range(nf):
        was_in[t] = gam[flips[t]]
    out[2] = nf
    out[3] = K.OK
    if nf == 0:
        out[0] = 1.0
        out[1] = 1.0
        return
    lq = P.log_q_ratio(gam, flips, nf, a_probs, d_probs)
    st = apply_flips(data, cache, max_size, order, pos, F, zty, fs, iv, flips, nf,
                     was_in, order2, pos2, F2, zty2, fs2, iv2, b, fb)
    out[3] = st
    if st != K.OK:
        out[0] = 0.0
        out[1] = 0.0
        return
    lr = log_post(fs2, iv2, logprior, temp) - log_post(fs, iv, logprior, temp) + lq
    a = P.accept_prob(lr)
    out[0] = a
    if u < a:
        out[1] = 1.0
        commit(gam, order, pos, F, zty, fs, iv, order2, pos2, F2, zty2, fs2, iv2,
               flips, nf, data, cache)
    else:
        out[1] = 0.0


@nb.njit(cache=True, nogil=True)
def ads_step(data, cache, logprior, max_size, temp, gam, order, pos, F, zty, fs, iv,
             state, scratch, out):
    """Add/delete (prob 1/2) or swap move; both are symmetric proposals.

    A swap from the empty or full model is a no-op, reported with
    ``out[3] = -1``.
    """
    order2, pos2, F2, zty2, fs2, iv2, work, b, fb, w, flips, was_in, row, quad, ev = scratch
    p = gam.shape[0]
    size = iv[K.IV_SIZE]
    out[3] = K.OK
    if R.uniform(state) < 0.5:
        j = R.randbelow(state, p)
        flips[0] = j
        was_in[0] = gam[j]
        nf = 1
    else:
        if size == 0 or size == p:
            out[0] = 0.0
            out[1] = 0.0
            out[2] = 0
            out[3] = -1
            return
        k = order[R.randbelow(state, size)]
        j = R.randbelow(state, p)
        while gam[j]:
            j = R.randbelow(state, p)
        flips[0] = k
        was_in[0] = 1
        flips[1] = j
        was_in[1] = 0
        nf = 2
    u = R.uniform(state)
    out[2] = nf
    st = apply_flips(data, cache, max_size, order, pos, F, zty, fs, iv, flips, nf,
                     was_in, order2, pos2, F2, zty2, fs2, iv2, b, fb)
    out[3] = st
    if st != K.OK:
        out[0] = 0.0
        out[1] = 0.0
        return
    lr = log_post(fs2, iv2, logprior, temp) - log_post(fs, iv, logprior, temp)
    a = P.accept_prob(lr)
    out[0] = a
    if u < a:
        out[1] = 1.0
        commit(gam, order, pos, F, zty, fs, iv, order2, pos2, F2, zty2, fs2, iv2,
               flips, nf, data, cache)
    else:
        out[1] = 0.0


@nb.njit(cache=True, nogil=True)
def log_halfcauchy(g, scale):
    return np.log(2.0 / (np.pi * scale)) - np.log1p((g / scale) ** 2)


@nb.njit(cache=True, nogil=True)
def g_step(data, cache, temp, g_scale, step, order, pos, F, zty, fs, iv, state, scratch):
    """Random-walk Metropolis on log g under a half-Cauchy prior.

    Accepting rebuilds the statistics at the new g.  Returns 1 on accept.
    """
    order2, pos2, F2, zty2, fs2, iv2, work, b, fb, w, flips, was_in, row, quad, ev = scratch
    z = R.normal(state)
    u = R.uniform(state)
    g = fs[K.FS_G]
    g_new = g * np.exp(step * z)
    size = iv[K.IV_SIZE]
    _copy_state(size + 1, size, pos.shape[0], order, pos, F, zty, fs, iv,
                order2, pos2, F2, zty2, fs2, iv2)
    fs2[K.FS_G] = g_new
    st = K.rebuild(data, cache, order2, size, F2, zty2, pos2, fs2, iv2, work)
    if st != K.OK:
        return 0
    cur = temp * fs[K.FS_LOGML] + log_halfcauchy(g, g_scale) + np.log(g)
    new = temp * fs2[K.FS_LOGML] + log_halfcauchy(g_new, g_scale) + np.log(g_new)
    if np.log(u) < new - cur:
        _copy_state(size + 1, size, pos.shape[0], order2, pos2, F2, zty2, fs2, iv2,
                    order, pos, F, zty, fs, iv)
        return 1
    return 0


@nb.njit(cache=True, nogil=True)
def rebuild_temps(rho, temps):
    m = temps.shape[0]
    temps[m - 1] = 1.0
    for k in range(m - 2, -1, -1):
        temps[k] = temps[k + 1] / (1.0 + np.exp(rho[k]))


@nb.njit(cache=True, nogil=True)
def adapt_ladder(rho, temps, k, a_swap, phi_i, target):
    rho[k] += phi_i * (a_swap - target)
    rebuild_temps(rho, temps)


@nb.njit(cache=True, nogil=True)
def swap_accept(t_lo, t_hi, logml_lo, logml_hi):
    """Acceptance for exchanging states between adjacent levels."""
    return P.accept_prob((t_lo - t_hi) * (logml_hi - logml_lo))


@nb.njit(cache=True, nogil=True)
def _pack_sample(gam, dest):
    for t in range(dest.shape[0]):
        dest[t] = 0
    for j in range(gam.shape[0]):
        if gam[j]:
            dest[j >> 3] |= np.uint8(1 << (7 - (j & 7)))


@nb.njit(cache=True, nogil=True)
def run_range(i0, i1, ci, cf, data, cache, logprior, prior_odds,
              gam, order, pos, F, zty, fs, iv, rng_states, level_slot,
              a_probs, d_probs, logit_a, logit_d, pi_hat, logit_zeta, n_rows,
              temps, rho, scratch, rec, rows, row_temp):
    """Advance all slots through iterations [i0, i1).

    ``rows[s]`` caches the Rao-Blackwell row of slot ``s`` computed at
    temperature ``row_temp[s]`` (NaN when stale); a rejected move leaves the
    state unchanged, so the row is reused instead of recomputed.
    """
    (tr_a, tr_acc, tr_size, tr_nf, tr_lp, samples, pip_sum, rb_sum, rb_n,
     burn_acc, zeta_tr, snap_a, snap_d, swap_att, swap_acc, swap_sum, g_tr,
     temps_tr, counters) = rec
    order2, pos2, F2, zty2, fs2, iv2, work, b, fb, w, flips, was_in, row, quad, ev = scratch
    algo = ci[CI_ALGO]
    L = ci[CI_L]
    m = ci[CI_M]
    max_size = ci[CI_MAX_SIZE]
    burn = ci[CI_BURN]
    thin = ci[CI_THIN]
    eps = cf[CF_EPS]
    p = gam.shape[1]
    out = np.zeros(4)
    astats = np.zeros(4)
    cold = m - 1
    for it in range(i0, i1):
        i = it + 1
        phi_i = P.phi(i, cf[CF_PHI_SCALE], cf[CF_LAMBDA])
        adapting = it < burn or ci[CI_ADAPT_AFTER] != 0
        accumulate = not (ci[CI_RB_BURN_ONLY] != 0 and it >= burn)
        sampling = it >= burn
        for r in range(L):
            cold_a = 0.0
            cold_acc = 0.0
            cold_nf = 0
            for lev in range(m):
                s = level_slot[r, lev]
                pl = 0 if ci[CI_SHARE_LEVELS] != 0 else lev
                temp = temps[lev]
                st = rng_states[s]
                if algo == ALGO_ADS:
                    ads_step(data, cache, logprior, max_size, temp, gam[s], order[s],
                             pos[s], F[s], zty[s], fs[s], iv[s], st, scratch, out)
                else:
                    mh_step(data, cache, logprior, max_size, temp, gam[s], order[s],
                            pos[s], F[s], zty[s], fs[s], iv[s], a_probs[pl], d_probs[pl],
                            st, scratch, out)
                status = np.int64(out[3])
                if status == -1:
                    counters[CT_NOOP] += 1
                elif status == K.ERR_CAP:
                    counters[CT_CAP] += 1
                elif status != K.OK:
                    counters[CT_ERRORS] += 1
                nf = np.int64(out[2])
                if out[1] > 0.0 and nf > 0:
                    row_temp[s] = np.nan
                    counters[CT_REFRESH] += maybe_refresh(
                        data, cache, order[s], pos[s], F[s], zty[s], fs[s], iv[s],
                        ci[CI_REFRESH], order2, pos2, F2, zty2, fs2, iv2, work)
                a_i = out[0]
                if lev == cold:
                    cold_a = a_i
                    cold_acc = out[1]
                    cold_nf = nf
                if adapting and algo == ALGO_EIA:
                    big = P.eia_apply(was_in, flips, nf, a_i, phi_i, cf[CF_TAU_L],
                                      cf[CF_TAU_U], eps, logit_a[pl], logit_d[pl],
                                      a_probs[pl], d_probs[pl])
                    counters[CT_ADAPT_STEPS] += 1
                    if big > phi_i * (1.0 + VIOL_RTOL):
                        counters[CT_VIOL_EIA] += 1
                elif adapting and algo == ALGO_ASI:
                    if row_temp[s] != temp:
                        counters[CT_SATURATED] += K.rb_row(
                            data, cache, F[s], zty[s], order[s], pos[s], fs[s], iv[s], temp,
                            prior_odds, rows[s], b, fb, w, quad, ev)
                        row_temp[s] = temp
                    lz, nr = P.asi_apply(pi_hat[pl], n_rows[pl], rows[s], accumulate,
                                         logit_zeta[pl], a_i, cf[CF_TAU], phi_i,
                                         cf[CF_KAPPA], eps, a_probs[pl], d_probs[pl],
                                         astats)
                    logit_zeta[pl] = lz
                    counters[CT_ADAPT_STEPS] += 1
                    if nr > n_rows[pl] and astats[0] > 2.0 / (i + 1) * (1.0 + VIOL_RTOL):
                        counters[CT_VIOL_PIHAT] += 1
                    n_rows[pl] = nr
                    if astats[1] > phi_i * (1.0 + VIOL_RTOL):
                        counters[CT_VIOL_ZETA] += 1
                    if astats[3] > 0.0:
                        counters[CT_FLOORS] += 1
                    if astats[2] < 1.0 - 1e-12:
                        counters[CT_FLOOR_SHORT] += 1
                if ci[CI_RANDOM_G] != 0:
                    ga = g_step(data, cache, temp, cf[CF_G_SCALE], cf[CF_G_STEP], order[s],
                                pos[s], F[s], zty[s], fs[s], iv[s], st, scratch)
                    if ga:
                        row_temp[s] = np.nan
                    counters[CT_G_ACCEPT] += ga
                if sampling and lev == cold and ci[CI_RECORD_RB] != 0:
                    keep = (it - burn + 1) % thin == 0
                    if keep:
                        if row_temp[s] != temp:
                            counters[CT_SATURATED] += K.rb_row(
                                data, cache, F[s], zty[s], order[s], pos[s], fs[s], iv[s],
                                temp, prior_odds, rows[s], b, fb, w, quad, ev)
                            row_temp[s] = temp
                        rs = rows[s]
                        for j in range(p):
                            rb_sum[r, j] += rs[j]
                        rb_n[r] += 1
            if m > 1:
                sst = rng_states[L * m + r]
                k = R.randbelow(sst, m - 1)
                s_lo = level_slot[r, k]
                s_hi = level_slot[r, k + 1]
                a_sw = swap_accept(temps[k], temps[k + 1], fs[s_lo, K.FS_LOGML],
                                   fs[s_hi, K.FS_LOGML])
                u = R.uniform(sst)
                swap_att[k] += 1
                swap_sum[k] += a_sw
                if u < a_sw:
                    swap_acc[k] += 1
                    level_slot[r, k] = s_hi
                    level_slot[r, k + 1] = s_lo
                if adapting and ci[CI_ADAPT_LADDER] != 0:
                    adapt_ladder(rho, temps, k, a_sw, phi_i, cf[CF_SWAP_TARGET])
            s = level_slot[r, cold]
            g_tr[it, r] = fs[s, K.FS_G]
            if sampling:
                t = it - burn
                tr_a[t, r] = cold_a
                tr_acc[t, r] = np.uint8(cold_acc > 0.0)
                tr_nf[t, r] = cold_nf
                tr_size[t, r] = iv[s, K.IV_SIZE]
                tr_lp[t, r] = log_post(fs[s], iv[s], logprior, 1.0)
                if (t + 1) % thin == 0:
                    kk = (t + 1) // thin - 1
                    _pack_sample(gam[s], samples[kk, r])
                    for j in range(p):
                        pip_sum[r, j] += gam[s, j]
            else:
                burn_acc[r] += cold_a
        for lev in range(logit_zeta.shape[0]):
            zeta_tr[it, lev] = P.inv_logit_eps(logit_zeta[lev], eps)
        for lev in range(m):
            temps_tr[it, lev] = temps[lev]
        stride = ci[CI_SNAP_STRIDE]
        if stride > 0 and (it + 1) % stride == 0:
            q = (it + 1) // stride - 1
            if q < snap_a.shape[0]:
                pl = 0 if ci[CI_SHARE_LEVELS] != 0 else cold
                for j in range(p):
                    snap_a[q, j] = a_probs[pl, j]
                    snap_d[q, j] = d_probs[pl, j]
