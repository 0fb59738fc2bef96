"""Product-form proposals on {0,1}^p and the two adaptation laws.

A proposal is parametrised by per-variable inclusion probabilities A_j
(flip 0 -> 1) and deletion probabilities D_j (flip 1 -> 0), every
coordinate flipping independently.  EIA adapts logit_eps(A_j) and
logit_eps(D_j) directly from the acceptance probability of each proposed
move; ASI sets A_j, D_j from Rao-Blackwellised inclusion probabilities and
adapts one shared scale zeta towards a target acceptance rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from . import rng as _rng

# Default tuning constants.
TAU_L = 0.01
TAU_U = 0.1
TAU = 0.234
KAPPA = 0.001
PHI_SCALE = 1.0
PHI_LAMBDA = 0.55


def default_eps(p):
    return 0.1 / p


@nb.njit(cache=True, nogil=True)
def logit_eps(x, eps):
    return np.log(x - eps) - np.log(1.0 - x - eps)


@nb.njit(cache=True, nogil=True)
def inv_logit_eps(y, eps):
    if y >= 0.0:
        s = 1.0 / (1.0 + np.exp(-y))
    else:
        e = np.exp(y)
        s = e / (1.0 + e)
    return eps + (1.0 - 2.0 * eps) * s


def logit_eps_checked(x, eps):
    if not eps < x < 1.0 - eps:
        raise ValueError(f"{x} outside ({eps}, {1 - eps})")
    return float(logit_eps(x, eps))


@nb.njit(cache=True, nogil=True)
def phi(i, scale, lam):
    return scale * i ** (-lam)


@nb.njit(cache=True, nogil=True)
def open_clamp(x, eps):
    """Clamp into the open box so logit_eps stays finite."""
    lo = eps + 1e-6 * eps
    hi = 1.0 - eps - 1e-6 * eps
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


# ---------------------------------------------------------------------------
# compiled pieces shared with the samplers


@nb.njit(cache=True, nogil=True)
def sample_flips(gam, a_probs, d_probs, state, flips):
    """Draw one uniform per coordinate; write flipped indices, return count."""
    nf = 0
    for j in range(gam.shape[0]):
        u = _rng.uniform(state)
        if gam[j]:
            if u < d_probs[j]:
                flips[nf] = j
                nf += 1
        elif u < a_probs[j]:
            flips[nf] = j
            nf += 1
    return nf


@nb.njit(cache=True, nogil=True)
def log_q_ratio(gam, flips, nf, a_probs, d_probs):
    """log q(gamma', gamma) - log q(gamma, gamma'); unflipped terms cancel."""
    s = 0.0
    for t in range(nf):
        j = flips[t]
        if gam[j]:
            s += np.log(a_probs[j]) - np.log(d_probs[j])
        else:
            s += np.log(d_probs[j]) - np.log(a_probs[j])
    return s


@nb.njit(cache=True, nogil=True)
def accept_prob(log_ratio):
    if log_ratio >= 0.0:
        return 1.0
    return np.exp(log_ratio)


@nb.njit(cache=True, nogil=True)
def eia_apply(was_in, flips, nf, a_i, phi_i, tau_l, tau_u, eps, logit_a, logit_d,
              a_probs, d_probs):
    """EIA update on the flipped coordinates.

    ``was_in[t]`` is the pre-move value of coordinate ``flips[t]``.

    Returns the largest absolute logit increment, for diagnostics.
    """
    du = 1.0 if a_i >= tau_u else 0.0
    dl = 1.0 if a_i >= tau_l else 0.0
    big = 0.0
    for t in range(nf):
        j = flips[t]
        if was_in[t]:
            inc_a = phi_i * dl
            inc_d = phi_i * (2.0 * du - 1.0)
        else:
            inc_a = phi_i * (2.0 * du - 1.0)
            inc_d = phi_i * dl
        logit_a[j] += inc_a
        logit_d[j] += inc_d
        a_probs[j] = inv_logit_eps(logit_a[j], eps)
        d_probs[j] = inv_logit_eps(logit_d[j], eps)
        big = max(big, abs(inc_a), abs(inc_d))
    return big


@nb.njit(cache=True, nogil=True)
def asi_fill_params(pi_hat, zeta, kappa, eps, a_probs, d_probs):
    """A_j, D_j from the shrunk inclusion estimates; returns Delta."""
    delta = 0.0
    lo = eps
    hi = 1.0 - eps
    for j in range(pi_hat.shape[0]):
        pt = kappa + (1.0 - 2.0 * kappa) * pi_hat[j]
        delta += 2.0 * min(pt, 1.0 - pt)
        odds = pt / (1.0 - pt)
        a = zeta * min(1.0, odds)
        d = zeta * min(1.0, 1.0 / odds)
        a_probs[j] = min(max(a, lo), hi)
        d_probs[j] = min(max(d, lo), hi)
    return delta


@nb.njit(cache=True, nogil=True)
def asi_delta(pi_hat, kappa):
    delta = 0.0
    for j in range(pi_hat.shape[0]):
        pt = kappa + (1.0 - 2.0 * kappa) * pi_hat[j]
        delta += 2.0 * min(pt, 1.0 - pt)
    return delta


@nb.njit(cache=True, nogil=True)
def asi_apply(pi_hat, n_rows, row, accumulate, logit_zeta, a_i, tau, phi_i, kappa, eps,
              a_probs, d_probs, out_stats):
    """One ASI update.  Returns ``(new logit zeta, new row count)``.

    ``out_stats`` receives [max |delta pi_hat|, |delta logit zeta| before the
    floor, zeta * Delta after the floor, floored flag].
    """
    dmax = 0.0
    if accumulate:
        inv = 1.0 / (n_rows + 1)
        for j in range(pi_hat.shape[0]):
            step = (row[j] - pi_hat[j]) * inv
            pi_hat[j] += step
            dmax = max(dmax, abs(step))
        n_rows += 1
    inc = phi_i * (a_i - tau)
    lz = logit_zeta + inc
    zeta = inv_logit_eps(lz, eps)
    delta = asi_delta(pi_hat, kappa)
    floored = 0.0
    if zeta * delta < 1.0:
        zeta = open_clamp(1.0 / delta, eps)
        lz = logit_eps(zeta, eps)
        floored = 1.0
    asi_fill_params(pi_hat, zeta, kappa, eps, a_probs, d_probs)
    out_stats[0] = dmax
    out_stats[1] = abs(inc)
    out_stats[2] = zeta * delta
    out_stats[3] = floored
    return lz, n_rows


# ---------------------------------------------------------------------------
# Python-level types


@dataclass
class ProposalParams:
    a_probs: np.ndarray
    d_probs: np.ndarray
    eps: float = 0.0

    def __post_init__(self):
        self.a_probs = np.asarray(self.a_probs, dtype=np.float64)
        self.d_probs = np.asarray(self.d_probs, dtype=np.float64)
        if self.a_probs.shape != self.d_probs.shape:
            raise ValueError("A and D must have the same length")

    @property
    def p(self):
        return self.a_probs.size

    def in_box(self):
        lo, hi = self.eps, 1.0 - self.eps
        return bool(np.all((self.a_probs >= lo) & (self.a_probs <= hi)
                           & (self.d_probs >= lo) & (self.d_probs <= hi)))

    def clamped(self, eps=None):
        eps = self.eps if eps is None else eps
        return ProposalParams(np.clip(self.a_probs, eps, 1 - eps),
                              np.clip(self.d_probs, eps, 1 - eps), eps)


def _bits(gamma):
    return np.asarray(getattr(gamma, "bits", gamma)).astype(np.uint8)


def sample_proposal(params, gamma, rng):
    """Draw gamma' from q_eta(gamma, .); returns the new bit vector."""
    gam = _bits(gamma)
    flips = np.empty(gam.size, dtype=np.int64)
    nf = sample_flips(gam, params.a_probs, params.d_probs, rng.state, flips)
    out = gam.copy()
    out[flips[:nf]] ^= 1
    return out


def log_proposal_prob(params, src, dst):
    src, dst = _bits(src), _bits(dst)
    a, d = params.a_probs, params.d_probs
    with np.errstate(divide="ignore"):
        terms = np.where(src == 0,
                         np.where(dst == 1, np.log(a), np.log1p(-a)),
                         np.where(dst == 0, np.log(d), np.log1p(-d)))
    return float(terms.sum())


def acceptance_prob(log_post_from, log_post_to, log_q_fwd, log_q_rev):
    return float(accept_prob(log_post_to - log_post_from + log_q_rev - log_q_fwd))


def flip_sets(gamma, proposed):
    """Indicator vectors (gamma^A, gamma^D) of proposed additions/deletions."""
    g, q = _bits(gamma), _bits(proposed)
    changed = g != q
    return (changed & (g == 0)).astype(np.uint8), (changed & (g == 1)).astype(np.uint8)


@dataclass
class EiaState:
    params: ProposalParams
    logit_a: np.ndarray
    logit_d: np.ndarray
    tau_l: float = TAU_L
    tau_u: float = TAU_U
    lam: float = PHI_LAMBDA
    phi_scale: float = PHI_SCALE
    iter: int = 1

    def __post_init__(self):
        if not 0 < self.tau_l < self.tau_u < 1:
            raise ValueError("need 0 < tau_l < tau_u < 1")
        if not 0.5 < self.lam <= 1:
            raise ValueError("need 1/2 < lambda <= 1")

    @classmethod
    def initial(cls, p, h, eps=None, **kw):
        """A_j = h, D_j = 1, both pulled just inside the eps box."""
        eps = default_eps(p) if eps is None else eps
        a0 = open_clamp(h, eps)
        d0 = open_clamp(1.0, eps)
        la = np.full(p, logit_eps(a0, eps))
        ld = np.full(p, logit_eps(d0, eps))
        params = ProposalParams(np.full(p, a0), np.full(p, d0), eps)
        return cls(params, la, ld, **kw)

    def phi(self, i=None):
        return float(phi(self.iter if i is None else i, self.phi_scale, self.lam))


def eia_update(state, gamma, proposed, a_i):
    """Return the state after one EIA step for a move proposed from ``gamma``."""
    gam = _bits(gamma)
    ga, gd = flip_sets(gam, proposed)
    flips = np.flatnonzero(ga | gd).astype(np.int64)
    la, ld = state.logit_a.copy(), state.logit_d.copy()
    a, d = state.params.a_probs.copy(), state.params.d_probs.copy()
    eia_apply(gam[flips], flips, flips.size, float(a_i), state.phi(), state.tau_l, state.tau_u,
              state.params.eps, la, ld, a, d)
    return replace(state, params=ProposalParams(a, d, state.params.eps),
                   logit_a=la, logit_d=ld, iter=state.iter + 1)


@dataclass
class AsiState:
    pi_hat: np.ndarray
    zeta: float
    eps: float
    kappa: float = KAPPA
    tau: float = TAU
    lam: float = PHI_LAMBDA
    phi_scale: float = PHI_SCALE
    iter: int = 1
    rb_count: int = 0
    adapt_rb: bool = True

    @classmethod
    def initial(cls, p, h, eps=None, zeta=0.5, **kw):
        eps = default_eps(p) if eps is None else eps
        return cls(np.full(p, float(h)), zeta, eps, **kw)

    def pi_tilde(self):
        return self.kappa + (1 - 2 * self.kappa) * self.pi_hat

    def delta(self):
        pt = self.pi_tilde()
        return float(2 * np.minimum(pt, 1 - pt).sum())

    def phi(self, i=None):
        return float(phi(self.iter if i is None else i, self.phi_scale, self.lam))


def asi_update(state, rb_row, a_i, delta=None):
    """Fold one Rao-Blackwell row and acceptance probability into the state.

    ``delta`` overrides the floor's Delta; by default it is recomputed from
    the updated estimates.
    """
    pi_hat = state.pi_hat.copy()
    n = state.rb_count
    if state.adapt_rb:
        n += 1
        pi_hat += (np.asarray(rb_row, dtype=np.float64) - pi_hat) / n
    lz = float(logit_eps(open_clamp(state.zeta, state.eps), state.eps))
    lz += state.phi() * (a_i - state.tau)
    zeta = float(inv_logit_eps(lz, state.eps))
    if delta is None:
        delta = float(asi_delta(pi_hat, state.kappa))
    if zeta * delta < 1.0:
        zeta = float(open_clamp(1.0 / delta, state.eps))
    return replace(state, pi_hat=pi_hat, zeta=zeta, iter=state.iter + 1, rb_count=n)


def asi_params(state, clamp=True):
    pt = state.pi_tilde()
    odds = pt / (1 - pt)
    a = state.zeta * np.minimum(1.0, odds)
    d = state.zeta * np.minimum(1.0, 1.0 / odds)
    params = ProposalParams(a, d, state.eps)
    return params.clamped() if clamp else params
