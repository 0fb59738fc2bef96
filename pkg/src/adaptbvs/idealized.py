"""Product-form targets, their closed-form efficiency measures, and exact enumeration.

On a product target pi(gamma) = prod pi_j^gamma_j (1 - pi_j)^(1 - gamma_j) a
product proposal whose parameters satisfy A_j / D_j = pi_j / (1 - pi_j) is
accepted with probability one.  Two such choices are singled out: the
independent proposal (A_j = 1 - D_j = pi_j) and the random-walk proposal
(A_j = min(1, pi_j / (1 - pi_j)), D_j = min(1, (1 - pi_j) / pi_j)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.special import logsumexp

from . import _kernels as K
from . import proposal as P
from . import rng as R
from .model import CrossCache, ModelError, build_stats, bayes_factor_up

VARIANTS = ("independent", "random_walk")
ENUMERATION_CAP = 20


def _variant(v):
    v = {"rw": "random_walk", "ind": "independent"}.get(v, v)
    if v not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {v!r}")
    return v


@dataclass(frozen=True)
class ProductTarget:
    pis: np.ndarray

    def __post_init__(self):
        pis = np.atleast_1d(np.asarray(self.pis, dtype=np.float64))
        if pis.ndim != 1 or not np.all((pis > 0) & (pis < 1)):
            raise ValueError("every pi_j must lie strictly inside (0, 1)")
        object.__setattr__(self, "pis", pis)

    @property
    def p(self):
        return self.pis.size

    def log_mass(self, gamma):
        g = np.asarray(gamma, dtype=np.float64)
        return float(np.sum(g * np.log(self.pis) + (1 - g) * np.log1p(-self.pis)))


def ideal_independent_params(target):
    pis = target.pis
    return P.ProposalParams(pis.copy(), 1.0 - pis)


def ideal_rw_params(target):
    pis = target.pis
    odds = pis / (1.0 - pis)
    return P.ProposalParams(np.minimum(1.0, odds), np.minimum(1.0, 1.0 / odds))


def ideal_params(target, variant):
    if _variant(variant) == "independent":
        return ideal_independent_params(target)
    return ideal_rw_params(target)


def esjd_closed_form(target, variant):
    """Expected squared jump distance (expected number of flipped coordinates)."""
    pis = target.pis
    if _variant(variant) == "independent":
        return float(2.0 * np.sum(pis * (1.0 - pis)))
    return float(2.0 * np.sum(np.minimum(pis, 1.0 - pis)))


def bernoulli_var(pis, f0=0.0, f1=1.0):
    """Var f_j(gamma_j) for gamma_j ~ Bernoulli(pi_j)."""
    pis = np.asarray(pis, dtype=np.float64)
    return pis * (1.0 - pis) * (np.asarray(f1) - np.asarray(f0)) ** 2


def asym_var_linear(target, weights, variances, variant):
    """Asymptotic variance of f = a_0 + sum a_j f_j(gamma_j) under the ideal chain."""
    a = np.asarray(weights, dtype=np.float64)
    v = np.asarray(variances, dtype=np.float64)
    if _variant(variant) == "independent":
        return float(np.sum(a ** 2 * v))
    fac = 2.0 * np.maximum(target.pis, 1.0 - target.pis) - 1.0
    return float(np.sum(fac * a ** 2 * v))


def mutation_rate(target, variant):
    """Probability that one step changes the model."""
    pis = target.pis
    if _variant(variant) == "independent":
        return float(1.0 - np.prod((1.0 - pis) ** 2 + pis ** 2))
    return float(1.0 - np.prod(np.abs(2.0 * pis - 1.0)))


# ---------------------------------------------------------------------------
# exact transition matrices for tiny p


def _states(p):
    return ((np.arange(2 ** p)[:, None] >> np.arange(p)) & 1).astype(np.uint8)


def transition_matrix(target, params):
    """Full 2^p x 2^p MH transition matrix of the product proposal."""
    p = target.p
    if p > 10:
        raise ValueError("transition matrix only for p <= 10")
    S = _states(p)
    a, d = params.a_probs, params.d_probs
    lm = np.array([target.log_mass(s) for s in S])
    n = S.shape[0]
    Pm = np.zeros((n, n))
    for i in range(n):
        for k in range(n):
            if i == k:
                continue
            q = np.where(S[i] == 0, np.where(S[k] == 1, a, 1 - a),
                         np.where(S[k] == 0, d, 1 - d)).prod()
            qr = np.where(S[k] == 0, np.where(S[i] == 1, a, 1 - a),
                          np.where(S[i] == 0, d, 1 - d)).prod()
            if q == 0:
                continue
            Pm[i, k] = q * min(1.0, math.exp(lm[k] - lm[i]) * qr / q)
        Pm[i, i] = 1.0 - Pm[i].sum()
    return Pm, np.exp(lm), S


def spectral_asym_var(target, params, f_values):
    """sigma^2 = 2 <fbar, Z fbar>_pi - <fbar, fbar>_pi with Z = (I - P + 1 pi')^-1."""
    if target.p > 2:
        raise ValueError("spectral oracle is limited to p <= 2")
    Pm, pi, _ = transition_matrix(target, params)
    f = np.asarray(f_values, dtype=np.float64)
    fbar = f - pi @ f
    n = pi.size
    Z = np.linalg.inv(np.eye(n) - Pm + np.outer(np.ones(n), pi))
    return float(2.0 * (pi * fbar) @ (Z @ fbar) - (pi * fbar) @ fbar)


def linear_f_values(p, weights, f0=None, f1=None, a0=0.0):
    """f(gamma) = a0 + sum a_j f_j(gamma_j) evaluated on every state."""
    S = _states(p).astype(np.float64)
    f0 = np.zeros(p) if f0 is None else np.asarray(f0, dtype=np.float64)
    f1 = np.ones(p) if f1 is None else np.asarray(f1, dtype=np.float64)
    fj = f0 + S * (f1 - f0)
    return a0 + fj @ np.asarray(weights, dtype=np.float64)


# ---------------------------------------------------------------------------
# idealised chain simulation through the production proposal kernels


@nb.njit(cache=True, nogil=True)
def _simulate(logit_pi, a_probs, d_probs, gam, n_steps, state, weights, acc, sq, moved, fv):
    p = gam.shape[0]
    flips = np.zeros(p, dtype=np.int64)
    for t in range(n_steps):
        nf = P.sample_flips(gam, a_probs, d_probs, state, flips)
        u = R.uniform(state)
        lt = 0.0
        for s in range(nf):
            j = flips[s]
            lt += -logit_pi[j] if gam[j] else logit_pi[j]
        a = P.accept_prob(lt + P.log_q_ratio(gam, flips, nf, a_probs, d_probs))
        acc[t] = a
        if nf > 0 and u < a:
            for s in range(nf):
                gam[flips[s]] ^= 1
            sq[t] = nf
            moved[t] = 1
        else:
            sq[t] = 0
            moved[t] = 0
        f = 0.0
        for j in range(p):
            f += weights[j] * gam[j]
        fv[t] = f


@dataclass
class IdealRun:
    accept_probs: np.ndarray
    sq_jumps: np.ndarray
    moved: np.ndarray
    f_trace: np.ndarray


def simulate_ideal(target, params, n_steps, seed=0, weights=None, start=None):
    """Run the product-proposal MH chain on ``target``.

    The chain starts from a draw of the target unless ``start`` is given, so
    the recorded series are stationary from the first step.
    """
    p = target.p
    rng = R.CounterRNG(seed, R.CHAIN_STREAM_BASE)
    if start is None:
        gam = (rng.uniform(p) < target.pis).astype(np.uint8)
    else:
        gam = np.asarray(start, dtype=np.uint8).copy()
    w = np.ones(p) if weights is None else np.asarray(weights, dtype=np.float64)
    acc = np.empty(n_steps)
    sq = np.empty(n_steps)
    moved = np.empty(n_steps, dtype=np.uint8)
    fv = np.empty(n_steps)
    logit_pi = np.log(target.pis) - np.log1p(-target.pis)
    _simulate(logit_pi, params.a_probs, params.d_probs, gam, n_steps, rng.state, w, acc, sq,
              moved, fv)
    return IdealRun(acc, sq, moved, fv)


def batch_means(x, n_batches=50):
    """Mean, its standard error and the asymptotic variance by batch means."""
    x = np.asarray(x, dtype=np.float64)
    b = x.size // n_batches
    if b < 2:
        raise ValueError("series too short for batch means")
    means = x[:b * n_batches].reshape(n_batches, b).mean(axis=1)
    var_b = means.var(ddof=1)
    return float(x.mean()), float(math.sqrt(var_b / n_batches)), float(b * var_b)


@dataclass
class CheckRow:
    quantity: str
    variant: str
    p: int
    closed_form: float
    estimate: float
    se: float

    @property
    def passed(self):
        if self.se == 0:
            return abs(self.estimate - self.closed_form) <= 1e-12 * max(1.0, abs(self.closed_form))
        return abs(self.estimate - self.closed_form) <= 3.0 * self.se


def idealized_check(p, variant, n_steps=100_000, seed=0, pis=None):
    """Closed forms against simulation for ESJD, mutation rate and asymptotic variance."""
    variant = _variant(variant)
    if pis is None:
        pis = R.CounterRNG(seed, R.DATA_STREAM).uniform(p) * 0.9 + 0.05
    target = ProductTarget(pis)
    params = ideal_params(target, variant)
    run = simulate_ideal(target, params, n_steps, seed=seed)
    rows = []
    m, se, _ = batch_means(run.sq_jumps)
    rows.append(CheckRow("esjd", variant, p, esjd_closed_form(target, variant), m, se))
    m, se, _ = batch_means(run.moved.astype(np.float64))
    mr = mutation_rate(target, variant)
    # a series that never varies has zero batch SE; fall back on the binomial one
    se = max(se, math.sqrt(mr * (1.0 - mr) / n_steps))
    rows.append(CheckRow("mutation_rate", variant, p, mr, m, se))
    _, _, av = batch_means(run.f_trace)
    nb_ = 50
    av_closed = asym_var_linear(target, np.ones(p), bernoulli_var(target.pis), variant)
    rows.append(CheckRow("asymptotic_variance", variant, p, av_closed, av,
                         av_closed * math.sqrt(2.0 / (nb_ - 1))))
    mn = float(run.accept_probs.min())
    rows.append(CheckRow("min_acceptance", variant, p, 1.0, mn, 0.0))
    return rows


# ---------------------------------------------------------------------------
# exact posterior by enumeration


@nb.njit(cache=True, nogil=True)
def _enumerate(data, cache, p, g, logprior, max_size, out, counts):
    n_models = out.shape[0]
    F = np.zeros((p + 1, p + 1))
    work = np.zeros((p + 1, p + 1))
    zty = np.zeros(p + 1)
    order = np.zeros(p + 1, dtype=np.int64)
    pos = np.zeros(p, dtype=np.int64)
    fs = np.zeros(K.NFS)
    iv = np.zeros(K.NIV, dtype=np.int64)
    for mask in range(n_models):
        size = 0
        for j in range(p):
            if (mask >> j) & 1:
                order[size] = j
                size += 1
        if size > max_size:
            out[mask] = -np.inf
            counts[0] += 1
            continue
        fs[K.FS_G] = g
        st = K.rebuild(data, cache, order, size, F, zty, pos, fs, iv, work)
        if st != K.OK:
            out[mask] = -np.inf
            counts[1] += 1
            continue
        out[mask] = fs[K.FS_LOGML] + logprior[size]


@dataclass
class Enumeration:
    """Exact posterior over all 2^p models; bit j of a model index is gamma_j."""

    p: int
    log_probs: np.ndarray
    pips: np.ndarray
    n_excluded: int = 0
    n_singular: int = 0

    @property
    def probs(self):
        return np.exp(self.log_probs)

    def model_table(self):
        """Rows ``(bits, probability)`` in model-index order."""
        S = _states(self.p)
        return [(S[i], float(pr)) for i, pr in enumerate(self.probs)]

    def weighted_mean(self, rows):
        """Posterior expectation of a per-model vector quantity."""
        return self.probs @ np.asarray(rows)


def enumerate_posterior(dataset, prior, max_size=None):
    p = dataset.p
    if p > ENUMERATION_CAP:
        raise ModelError(f"enumeration is capped at p = {ENUMERATION_CAP}, got p = {p}")
    if prior.random_g:
        raise ModelError("enumeration needs a fixed g")
    max_size = dataset.default_max_size() if max_size is None else max_size
    cache = CrossCache(p, p)
    data = dataset.kernel_data()
    kc = cache.kernel_cache()
    for j in range(p):
        K.ensure_cached(data, kc, j)
    out = np.empty(2 ** p)
    counts = np.zeros(2, dtype=np.int64)
    _enumerate(data, kc, p, float(prior.g), prior.log_prior_table(p), max_size, out, counts)
    lp = out - logsumexp(out)
    w = np.exp(lp)
    idx = np.arange(2 ** p)
    pips = np.array([w[(idx >> j) & 1 == 1].sum() for j in range(p)])
    return Enumeration(p, lp, pips, int(counts[0]), int(counts[1]))


def pairwise_bf_ratio(dataset, prior, j, k, gamma0=None):
    """log of BF_j(gamma_k = 1, gamma_0) / BF_j(gamma_k = 0, gamma_0)."""
    p = dataset.p
    if j == k:
        raise ValueError("j and k must differ")
    g0 = np.zeros(p, dtype=np.uint8) if gamma0 is None else np.asarray(gamma0, dtype=np.uint8).copy()
    if g0[j] or g0[k]:
        raise ValueError("gamma0 must exclude both j and k")
    s0 = build_stats(dataset, g0, prior.g)
    g1 = g0.copy()
    g1[k] = 1
    s1 = build_stats(dataset, g1, prior.g)
    return bayes_factor_up(s1, dataset, j) - bayes_factor_up(s0, dataset, j)
