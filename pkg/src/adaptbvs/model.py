"""Conjugate linear-model computations for Bayesian variable selection.

The model is y = alpha 1 + X_gamma beta_gamma + e with e ~ N(0, sigma^2 I),
beta_gamma ~ N(0, sigma^2 g I) and a flat prior on alpha and log sigma.
Integrating these out leaves the marginal likelihood

    log m(gamma) = -1/2 log|Z'Z + Lambda| - p_gamma/2 log g - n/2 log A,

with Z = [1, X_gamma], Lambda = diag(0, 1/g, ..., 1/g),
F = (Z'Z + Lambda)^{-1} and A = y'y - y'Z F Z'y.

Everything below is a thin layer over the compiled kernels in
``_kernels``; the samplers call those kernels directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln

from . import _kernels as K
from .rng import CounterRNG

log = logging.getLogger(__name__)


class ModelError(ValueError):
    """Invalid model, prior or state."""


class SingularMatrixError(ArithmeticError):
    pass


class DegenerateFitError(ArithmeticError):
    pass


_STATUS_ERRORS = {
    K.ERR_SINGULAR: SingularMatrixError,
    K.ERR_DEGENERATE: DegenerateFitError,
    K.ERR_CAP: ModelError,
}


def _check_status(status, what):
    if status != K.OK:
        raise _STATUS_ERRORS[status](f"{what}: numerical failure (code {status})")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response, design and the per-column summaries the kernels need."""

    y: np.ndarray
    x: np.ndarray
    names: tuple = ()
    xt: np.ndarray = field(init=False, repr=False)
    xty: np.ndarray = field(init=False, repr=False)
    col_sq: np.ndarray = field(init=False, repr=False)
    col_sum: np.ndarray = field(init=False, repr=False)
    yty: float = field(init=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ModelError(f"shape mismatch: y {y.shape}, x {x.shape}")
        n, p = x.shape
        if n < 2 or p < 1:
            raise ModelError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ModelError("non-finite values in data")
        xt = np.ascontiguousarray(x.T)
        names = tuple(self.names) if self.names else tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise ModelError(f"{len(names)} names for {p} columns")
        y.setflags(write=False)
        xt.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", xt.T)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "xt", xt)
        object.__setattr__(self, "xty", xt @ y)
        object.__setattr__(self, "col_sq", np.einsum("ij,ij->i", xt, xt))
        object.__setattr__(self, "col_sum", xt.sum(axis=1))
        object.__setattr__(self, "yty", float(y @ y))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.xt.shape[0]

    def kernel_data(self):
        dsc = np.array([self.n, self.yty, float(self.y.sum())])
        return (self.xt, self.y, self.xty, self.col_sq, self.col_sum, dsc)

    def default_max_size(self):
        return min(self.p, self.n - 2)


@dataclass(frozen=True)
class PriorSpec:
    """Prior on g and on the inclusion probability h.

    ``g`` is the slab variance multiplier (V_gamma = g I).  With
    ``g_halfcauchy_scale`` set, g is random with a half-Cauchy prior and
    ``g`` is only the starting value.  ``h`` fixes the inclusion
    probability; ``h_beta=(a, b)`` integrates it out under Beta(a, b).

    ``htilde_rule`` chooses the inclusion odds used in the Rao-Blackwell
    row under a Beta prior: ``"exact"`` is the conditional prior
    (k + a) / (p - 1 + a + b) implied by the Beta-binomial model prior;
    ``"plus_one"`` is the variant (k + 1 + a) / (p + a + b).
    """

    g: float = 9.0
    h: float | None = None
    h_beta: tuple | None = None
    g_halfcauchy_scale: float | None = None
    htilde_rule: str = "exact"

    def __post_init__(self):
        if not self.g > 0:
            raise ModelError(f"g must be positive, got {self.g}")
        if (self.h is None) == (self.h_beta is None):
            raise ModelError("give exactly one of h and h_beta")
        if self.h is not None and not 0 < self.h < 1:
            raise ModelError(f"h must lie in (0, 1), got {self.h}")
        if self.h_beta is not None:
            a, b = self.h_beta
            if not (a > 0 and b > 0):
                raise ModelError(f"Beta parameters must be positive, got {self.h_beta}")
        if self.g_halfcauchy_scale is not None and not self.g_halfcauchy_scale > 0:
            raise ModelError("half-Cauchy scale must be positive")
        if self.htilde_rule not in ("exact", "plus_one"):
            raise ModelError(f"unknown htilde_rule {self.htilde_rule!r}")

    @property
    def random_g(self):
        return self.g_halfcauchy_scale is not None

    def prior_mean_h(self):
        if self.h is not None:
            return self.h
        a, b = self.h_beta
        return a / (a + b)

    def log_prior_table(self, p):
        """log p(gamma) for a model of each size 0..p."""
        k = np.arange(p + 1, dtype=np.float64)
        if self.h is not None:
            return k * np.log(self.h) + (p - k) * np.log1p(-self.h)
        a, b = self.h_beta
        return betaln(a + k, b + p - k) - betaln(a, b)

    def prior_odds_table(self, p):
        """Log prior odds of including a column when k others are in."""
        k = np.arange(p, dtype=np.float64)
        if self.h is not None:
            return np.full(p, np.log(self.h) - np.log1p(-self.h))
        a, b = self.h_beta
        if self.htilde_rule == "exact":
            num, den = k + a, p - 1 + a + b
        else:
            num, den = k + 1 + a, p + a + b
        return np.log(num) - np.log(den - num)


class GammaVector:
    """Binary inclusion vector with its included columns in inclusion order."""

    __slots__ = ("bits", "z")

    def __init__(self, bits, z=None):
        bits = np.asarray(bits).astype(np.uint8)
        if bits.ndim != 1 or np.any(bits > 1):
            raise ModelError("gamma must be a 0/1 vector")
        if z is None:
            z = np.flatnonzero(bits)
        z = np.asarray(z, dtype=np.int64)
        if len(set(z.tolist())) != z.size or sorted(z.tolist()) != np.flatnonzero(bits).tolist():
            raise ModelError("inclusion order must list each set bit once")
        self.bits = bits
        self.z = z

    @classmethod
    def empty(cls, p):
        return cls(np.zeros(p, dtype=np.uint8))

    @classmethod
    def from_indices(cls, p, idx):
        bits = np.zeros(p, dtype=np.uint8)
        bits[list(idx)] = 1
        return cls(bits, list(idx))

    @property
    def p(self):
        return self.bits.size

    @property
    def p_gamma(self):
        return int(self.z.size)

    def flipped(self, j):
        bits = self.bits.copy()
        bits[j] ^= 1
        z = self.z.tolist()
        if bits[j]:
            z.append(j)
        else:
            z.remove(j)
        return GammaVector(bits, z)

    def __eq__(self, other):
        return isinstance(other, GammaVector) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __repr__(self):
        return f"GammaVector(z={self.z.tolist()}, p={self.p})"


class CrossCache:
    """Lazily filled columns of X'X for recently included variables.

    Holds at most ``capacity`` columns; the least recently used column is
    evicted when a new one is needed.  Products for uncached pairs are
    computed directly.
    """

    def __init__(self, p, capacity):
        capacity = int(min(p, max(capacity, 0)))
        self.G = np.zeros((capacity, p))
        self.slot = np.full(p, -1, dtype=np.int64)
        self.owner = np.full(capacity, -1, dtype=np.int64)
        self.stamp = np.zeros(capacity, dtype=np.int64)
        self.clock = np.zeros(1, dtype=np.int64)

    @classmethod
    def for_dataset(cls, dataset, max_size=None, budget_bytes=512 * 2**20):
        max_size = dataset.default_max_size() if max_size is None else max_size
        cap = max(64, 4 * max_size)
        cap = min(cap, budget_bytes // (8 * dataset.p))
        return cls(dataset.p, cap)

    @property
    def capacity(self):
        return self.owner.size

    def kernel_cache(self):
        return (self.G, self.slot, self.owner, self.stamp, self.clock)

    def cached_columns(self):
        return {int(k): self.G[s].copy() for s, k in enumerate(self.owner) if k >= 0}


class SuffStats:
    """Posterior sufficient statistics for one model.

    ``f`` is F, ``a_resid`` is A, ``zty`` is Z'y and ``logdet`` is
    log|Z'Z + Lambda|, all for the columns ``[1, x_z1, x_z2, ...]``.
    """

    def __init__(self, f, zty, a_resid, logdet, g, z, cache):
        self.f = f
        self.zty = zty
        self.a_resid = float(a_resid)
        self.logdet = float(logdet)
        self.g = float(g)
        self.z = np.asarray(z, dtype=np.int64)
        self.cache = cache

    @property
    def p_gamma(self):
        return self.z.size

    def log_ml(self, n):
        return (-0.5 * self.logdet - 0.5 * self.p_gamma * np.log(self.g)
                - 0.5 * n * np.log(self.a_resid))

    def cross_products(self, dataset, j):
        """Z_gamma' x_j, through the cache."""
        b = np.empty(self.p_gamma + 1)
        K.cross_vector(dataset.kernel_data(), self.cache.kernel_cache(),
                       self.z, self.p_gamma, j, b)
        return b

    # buffers for the kernels, sized for one extra column
    def _buffers(self, p, extra=1):
        m = self.p_gamma + 1
        F = np.zeros((m + extra, m + extra))
        F[:m, :m] = self.f
        zty = np.zeros(m + extra)
        zty[:m] = self.zty
        order = np.zeros(max(self.p_gamma + extra, 1), dtype=np.int64)
        order[:self.p_gamma] = self.z
        pos = np.full(p, -1, dtype=np.int64)
        pos[self.z] = np.arange(self.p_gamma)
        fs = np.zeros(K.NFS)
        fs[K.FS_A] = self.a_resid
        fs[K.FS_LOGDET] = self.logdet
        fs[K.FS_G] = self.g
        iv = np.zeros(K.NIV, dtype=np.int64)
        iv[K.IV_SIZE] = self.p_gamma
        return F, zty, order, pos, fs, iv

    @classmethod
    def _from_buffers(cls, F, zty, order, fs, iv, cache):
        size = int(iv[K.IV_SIZE])
        m = size + 1
        return cls(F[:m, :m].copy(), zty[:m].copy(), fs[K.FS_A], fs[K.FS_LOGDET],
                   fs[K.FS_G], order[:size].copy(), cache)


def _as_gamma(gamma, p):
    if not isinstance(gamma, GammaVector):
        gamma = GammaVector(gamma)
    if gamma.p != p:
        raise ModelError(f"gamma has length {gamma.p}, expected {p}")
    return gamma


def log_model_prior(gamma, prior):
    p = gamma.p
    k = gamma.p_gamma
    if prior.h is not None:
        return k * np.log(prior.h) + (p - k) * np.log1p(-prior.h)
    a, b = prior.h_beta
    return float(betaln(a + k, b + p - k) - betaln(a, b))


def build_stats(dataset, gamma, g, cache=None, rank_guard=True):
    """SuffStats for ``gamma`` by dense factorisation."""
    gamma = _as_gamma(gamma, dataset.p)
    if rank_guard and gamma.p_gamma > dataset.n - 2:
        raise ModelError(f"model size {gamma.p_gamma} exceeds n - 2 = {dataset.n - 2}")
    if cache is None:
        cache = CrossCache.for_dataset(dataset)
    size = gamma.p_gamma
    m = size + 1
    F = np.zeros((m, m))
    work = np.zeros((m, m))
    zty = np.zeros(m)
    order = np.zeros(max(size, 1), dtype=np.int64)
    order[:size] = gamma.z
    pos = np.full(dataset.p, -1, dtype=np.int64)
    fs = np.zeros(K.NFS)
    fs[K.FS_G] = g
    iv = np.zeros(K.NIV, dtype=np.int64)
    status = K.rebuild(dataset.kernel_data(), cache.kernel_cache(), order, size,
                       F, zty, pos, fs, iv, work)
    _check_status(status, "marginal likelihood")
    return SuffStats._from_buffers(F, zty, order, fs, iv, cache)


def log_marginal_likelihood(dataset, prior, gamma, cache=None, rank_guard=True, g=None):
    """Return ``(log m(gamma), SuffStats)`` built from scratch."""
    g = prior.g if g is None else g
    stats = build_stats(dataset, gamma, g, cache=cache, rank_guard=rank_guard)
    return stats.log_ml(dataset.n), stats


def suffstats_add(stats, dataset, j, max_size=None):
    if j in set(stats.z.tolist()):
        raise ModelError(f"column {j} is already included")
    max_size = dataset.p if max_size is None else max_size
    F, zty, order, pos, fs, iv = stats._buffers(dataset.p)
    m = stats.p_gamma + 1
    b, fb = np.zeros(m), np.zeros(m)
    status = K.add_var(dataset.kernel_data(), stats.cache.kernel_cache(), F, zty,
                       order, pos, fs, iv, j, b, fb, max_size)
    _check_status(status, f"adding column {j}")
    return SuffStats._from_buffers(F, zty, order, fs, iv, stats.cache)


def suffstats_remove(stats, dataset, j):
    if j not in set(stats.z.tolist()):
        raise ModelError(f"column {j} is not included")
    F, zty, order, pos, fs, iv = stats._buffers(dataset.p, extra=0)
    status = K.remove_var(dataset.kernel_data(), F, zty, order, pos, fs, iv, j)
    _check_status(status, f"removing column {j}")
    return SuffStats._from_buffers(F, zty, order, fs, iv, stats.cache)


def bayes_factor_up(stats, dataset, j):
    """Log Bayes factor for adding excluded column ``j``."""
    if j in set(stats.z.tolist()):
        raise ModelError(f"column {j} is already included")
    F, zty, order, pos, fs, iv = stats._buffers(dataset.p, extra=0)
    m = stats.p_gamma + 1
    out = K.log_bf_up(dataset.kernel_data(), stats.cache.kernel_cache(), F, zty,
                      order, fs, iv, j, np.zeros(m), np.zeros(m))
    if np.isnan(out):
        raise ArithmeticError(f"Bayes factor for column {j} broke down")
    return float(out)


def bayes_factor_down(stats, dataset, j):
    """Log Bayes factor for keeping included column ``j``."""
    if j not in set(stats.z.tolist()):
        raise ModelError(f"column {j} is not included")
    F, zty, order, pos, fs, iv = stats._buffers(dataset.p, extra=0)
    out = K.log_bf_down(dataset.kernel_data(), F, zty, pos, fs, iv, j)
    if np.isnan(out):
        raise ArithmeticError(f"Bayes factor for column {j} broke down")
    return float(out)


def rao_blackwell_row(stats, dataset, prior, gamma=None, temperature=1.0):
    """Conditional inclusion probabilities p(gamma_j = 1 | gamma_-j, y)."""
    if gamma is not None:
        gamma = _as_gamma(gamma, dataset.p)
        if sorted(gamma.z.tolist()) != sorted(stats.z.tolist()):
            raise ModelError("stats do not describe gamma")
    F, zty, order, pos, fs, iv = stats._buffers(dataset.p, extra=0)
    m = stats.p_gamma + 1
    p = dataset.p
    out = np.empty(p)
    bad = K.rb_row(dataset.kernel_data(), stats.cache.kernel_cache(), F, zty, order,
                   pos, fs, iv, temperature, prior.prior_odds_table(p), out,
                   np.zeros(m), np.zeros(m), np.zeros(m), np.zeros(p), np.zeros(p))
    if bad:
        log.warning("%d Bayes factors saturated in the Rao-Blackwell row", bad)
    return out


def log_posterior(dataset, prior, gamma, temperature=1.0, g=None):
    """Tempered unnormalised log posterior t log m(gamma) + log p(gamma)."""
    if not 0 < temperature <= 1:
        raise ModelError(f"temperature must lie in (0, 1], got {temperature}")
    gamma = _as_gamma(gamma, dataset.p)
    lml, _ = log_marginal_likelihood(dataset, prior, gamma, g=g)
    return temperature * lml + log_model_prior(gamma, prior)


def log_halfcauchy(g, scale):
    return np.log(2.0 / (np.pi * scale)) - np.log1p((g / scale) ** 2)


def update_g(dataset, prior, gamma, g, rng, step, temperature=1.0, stats=None):
    """One random-walk Metropolis step on log g.

    Returns ``(g, accepted, stats)``; on acceptance the statistics are
    rebuilt at the new g.
    """
    if not prior.random_g:
        raise ModelError("update_g needs a half-Cauchy prior on g")
    if not isinstance(rng, CounterRNG):
        raise TypeError("rng must be a CounterRNG")
    gamma = _as_gamma(gamma, dataset.p)
    cache = stats.cache if stats is not None else None
    if stats is None:
        stats = build_stats(dataset, gamma, g)
    z = rng.normal()
    u = rng.uniform()
    g_new = float(g * np.exp(step * z))
    cur = (temperature * stats.log_ml(dataset.n)
           + log_halfcauchy(g, prior.g_halfcauchy_scale) + np.log(g))
    try:
        new_stats = build_stats(dataset, gamma, g_new, cache=cache)
    except ArithmeticError:
        return g, False, stats
    new = (temperature * new_stats.log_ml(dataset.n)
           + log_halfcauchy(g_new, prior.g_halfcauchy_scale) + np.log(g_new))
    if np.log(u) < new - cur:
        return g_new, True, new_stats
    return g, False, stats
