"""Metropolis-Hastings samplers: EIA, ASI, add-delete-swap and tempered variants.

The sampling loop itself is compiled (see ``_engine``); this module sets up
buffers, initial states and adaptive parameters, drives the loop in chunks
and packs the results into a ``RunOutput``.  Python-level single-step
functions are provided for testing and for callers that want to drive a
chain by hand.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from . import _engine as E
from . import _kernels as K
from . import proposal as P
from . import rng as R
from .diagnostics import RunOutput
from .model import (CrossCache, Dataset, GammaVector, ModelError, PriorSpec, SuffStats,
                    build_stats, log_model_prior)

log = logging.getLogger(__name__)

ALGORITHMS = {"eia": E.ALGO_EIA, "asi": E.ALGO_ASI, "ads": E.ALGO_ADS}

COUNTER_NAMES = (
    "numerical_errors", "size_cap_rejections", "saturated_bayes_factors",
    "eia_increment_violations", "zeta_increment_violations", "pihat_increment_violations",
    "zeta_floor_applied", "zeta_floor_short", "refreshes", "g_accepted", "ads_noop_swaps",
    "adaptation_steps",
)
_COUNTER_SLOTS = (
    E.CT_ERRORS, E.CT_CAP, E.CT_SATURATED, E.CT_VIOL_EIA, E.CT_VIOL_ZETA, E.CT_VIOL_PIHAT,
    E.CT_FLOORS, E.CT_FLOOR_SHORT, E.CT_REFRESH, E.CT_G_ACCEPT, E.CT_NOOP, E.CT_ADAPT_STEPS,
)

# buffers above this size are refused rather than silently swapping
MEMORY_LIMIT = 4 * 2**30


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PtConfig:
    """Parallel tempering: ``m`` levels, the top one untempered."""

    m: int = 4
    swap_target: float = 0.234
    adapt: bool = True
    share_params: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"need at least one temperature level, got m={self.m}")
        if not 0 < self.swap_target < 1:
            raise ConfigError("swap_target must lie in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    n_chains: int = 1
    burn_in: int = 0
    n_iters: int = 1000
    thin: int = 1
    seed: int | None = None
    algorithm: str = "asi"
    pt: PtConfig | None = None
    eps: float | None = None
    tau_l: float = P.TAU_L
    tau_u: float = P.TAU_U
    tau: float = P.TAU
    kappa: float = P.KAPPA
    phi_scale: float = P.PHI_SCALE
    lam: float = P.PHI_LAMBDA
    zeta0: float = 0.5
    adapt_after_burnin: bool = True
    rb_burnin_only: bool | None = None
    record_rb: bool | None = None
    init: str = "empty"
    max_size: int | None = None
    refresh_every: int = 1000
    g_step: float = 0.5
    snap_stride: int | None = None
    time_budget: float | None = None
    preset: str | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.n_chains < 1:
            raise ConfigError(f"n_chains must be >= 1, got {self.n_chains}")
        if self.burn_in < 0 or self.n_iters < 0:
            raise ConfigError("burn_in and n_iters must be non-negative")
        if self.thin < 1:
            raise ConfigError(f"thin must be >= 1, got {self.thin}")
        if not 0 < self.tau_l < self.tau_u < 1:
            raise ConfigError("need 0 < tau_l < tau_u < 1")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if not 0 <= self.kappa < 0.5:
            raise ConfigError("kappa must lie in [0, 1/2)")
        if not 0.5 < self.lam <= 1:
            raise ConfigError("need 1/2 < lam <= 1")
        if not self.phi_scale > 0:
            raise ConfigError("phi_scale must be positive")
        if self.eps is not None and not 0 < self.eps < 0.5:
            raise ConfigError("eps must lie in (0, 1/2)")
        if not 0 < self.zeta0 < 1:
            raise ConfigError("zeta0 must lie in (0, 1)")
        if self.init not in ("empty", "prior"):
            raise ConfigError(f"init must be 'empty' or 'prior', got {self.init!r}")
        if self.preset not in (None, "big_data"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.seed is not None and not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.max_size is not None and self.max_size < 0:
            raise ConfigError("max_size must be non-negative")

    def resolved(self, p):
        """Copy with every default that depends on the data filled in."""
        rb_only = self.rb_burnin_only
        if rb_only is None:
            rb_only = self.preset == "big_data"
        record = self.record_rb
        if record is None:
            record = self.algorithm == "asi"
        seed = R.entropy_seed() if self.seed is None else int(self.seed)
        eps = P.default_eps(p) if self.eps is None else self.eps
        stride = self.snap_stride
        if stride is None:
            total = self.burn_in + self.n_iters
            stride = max(1, total // 100) if p <= 5000 and total > 0 else 0
        return replace(self, rb_burnin_only=rb_only, record_rb=record, seed=seed, eps=eps,
                       snap_stride=stride)

    def to_dict(self):
        d = asdict(self)
        d["pt"] = None if self.pt is None else asdict(self.pt)
        return d


@dataclass
class PtLadder:
    """Temperatures t_1 < ... < t_m = 1 parametrised by log-gaps ``rho``."""

    rho: np.ndarray
    swap_target: float = 0.234
    swap_counts: np.ndarray | None = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.swap_counts is None:
            self.swap_counts = np.zeros((self.rho.size, 2), dtype=np.int64)

    @classmethod
    def geometric(cls, m, swap_target=0.234):
        """t_k = 2^(k - m), i.e. every log-gap parameter zero."""
        return cls(np.zeros(m - 1), swap_target)

    @property
    def m(self):
        return self.rho.size + 1

    @property
    def temps(self):
        t = np.empty(self.m)
        E.rebuild_temps(self.rho, t)
        return t

    @staticmethod
    def rho_from_temps(temps):
        temps = np.asarray(temps, dtype=np.float64)
        if temps[-1] != 1.0 or np.any(np.diff(temps) <= 0) or temps[0] <= 0:
            raise ConfigError("temperatures must increase strictly to 1")
        return np.log(temps[1:] / temps[:-1] - 1.0)


def adapt_ladder(ladder, k, swap_accept_prob, i):
    """rho_k += phi_i (a_swap - target); ``k`` is 1-based, 1 <= k <= m - 1."""
    if not 1 <= k <= ladder.m - 1:
        raise ValueError(f"k must lie in 1..{ladder.m - 1}, got {k}")
    rho = ladder.rho.copy()
    temps = np.empty(ladder.m)
    E.adapt_ladder(rho, temps, k - 1, float(swap_accept_prob),
                   P.phi(i, P.PHI_SCALE, P.PHI_LAMBDA), ladder.swap_target)
    return PtLadder(rho, ladder.swap_target, ladder.swap_counts.copy())


def swap_acceptance(t_lo, t_hi, logml_lo, logml_hi):
    return float(E.swap_accept(t_lo, t_hi, logml_lo, logml_hi))


# ---------------------------------------------------------------------------
# single-step API


@dataclass
class ModelContext:
    """What a chain step needs to know about the model."""

    dataset: Dataset
    prior: PriorSpec
    cache: CrossCache
    max_size: int
    temps: np.ndarray = field(default_factory=lambda: np.ones(1))

    @classmethod
    def build(cls, dataset, prior, max_size=None, temps=None):
        max_size = dataset.default_max_size() if max_size is None else max_size
        max_size = min(max_size, dataset.default_max_size())
        temps = np.ones(1) if temps is None else np.asarray(temps, dtype=np.float64)
        return cls(dataset, prior, CrossCache.for_dataset(dataset, max_size), max_size, temps)

    @property
    def log_prior_table(self):
        return self.prior.log_prior_table(self.dataset.p)


@dataclass
class ChainState:
    gamma: GammaVector
    stats: SuffStats
    log_post: float
    temperature_index: int
    rng: R.CounterRNG

    @classmethod
    def initial(cls, ctx, gamma=None, seed=0, stream=R.CHAIN_STREAM_BASE, temperature_index=-1):
        p = ctx.dataset.p
        gamma = GammaVector.empty(p) if gamma is None else GammaVector(np.asarray(gamma))
        stats = build_stats(ctx.dataset, gamma, ctx.prior.g, cache=ctx.cache)
        t_idx = temperature_index % ctx.temps.size
        lp = ctx.temps[t_idx] * stats.log_ml(ctx.dataset.n) + log_model_prior(gamma, ctx.prior)
        return cls(gamma, stats, float(lp), t_idx, R.CounterRNG(seed, stream))

    def temperature(self, ctx):
        return float(ctx.temps[self.temperature_index])


@dataclass
class StepRecord:
    accept_prob: float
    added: np.ndarray
    removed: np.ndarray
    accepted: bool
    n_proposed: int
    status: int = K.OK


def _step_buffers(stats, p, cap):
    """Kernel buffers for one state, sized for models up to ``cap``."""
    F = np.zeros((cap + 2, cap + 2))
    zty = np.zeros(cap + 2)
    order = np.zeros(cap + 1, dtype=np.int64)
    pos = np.full(p, -1, dtype=np.int64)
    m = stats.p_gamma + 1
    F[:m, :m] = stats.f
    zty[:m] = stats.zty
    order[:stats.p_gamma] = stats.z
    pos[stats.z] = np.arange(stats.p_gamma)
    fs = np.zeros(K.NFS)
    fs[K.FS_A] = stats.a_resid
    fs[K.FS_LOGDET] = stats.logdet
    fs[K.FS_G] = stats.g
    iv = np.zeros(K.NIV, dtype=np.int64)
    iv[K.IV_SIZE] = stats.p_gamma
    return F, zty, order, pos, fs, iv


def _scratch(p, cap):
    return (np.zeros(cap + 1, dtype=np.int64), np.full(p, -1, dtype=np.int64),
            np.zeros((cap + 2, cap + 2)), np.zeros(cap + 2), np.zeros(K.NFS),
            np.zeros(K.NIV, dtype=np.int64), np.zeros((cap + 2, cap + 2)),
            np.zeros(cap + 2), np.zeros(cap + 2), np.zeros(cap + 2),
            np.zeros(p, dtype=np.int64), np.zeros(p, dtype=np.uint8), np.zeros(p),
            np.zeros(p), np.zeros(p))


def _single_step(chain, ctx, params):
    ds = ctx.dataset
    p = ds.p
    cap = ctx.max_size
    F, zty, order, pos, fs, iv = _step_buffers(chain.stats, p, cap)
    fs[K.FS_LOGML] = chain.stats.log_ml(ds.n)
    gam = chain.gamma.bits.astype(np.uint8).copy()
    scratch = _scratch(p, cap)
    out = np.zeros(4)
    temp = chain.temperature(ctx)
    data = ds.kernel_data()
    cache = ctx.cache.kernel_cache()
    logprior = ctx.log_prior_table
    if params is None:
        E.ads_step(data, cache, logprior, cap, temp, gam, order, pos, F, zty, fs, iv,
                   chain.rng.state, scratch, out)
    else:
        E.mh_step(data, cache, logprior, cap, temp, gam, order, pos, F, zty, fs, iv,
                  params.a_probs, params.d_probs, chain.rng.state, scratch, out)
    nf = int(out[2])
    status = int(out[3])
    flips = scratch[10][:nf].copy()
    was_in = scratch[11][:nf].astype(bool)
    rec = StepRecord(float(out[0]), flips[~was_in], flips[was_in], bool(out[1] > 0), nf, status)
    if status > 0:
        log.warning("move rejected after numerical failure (status %d)", status)
    if not rec.accepted or nf == 0:
        return chain, rec
    stats = SuffStats._from_buffers(F, zty, order, fs, iv, ctx.cache)
    gamma = GammaVector(gam)
    lp = temp * stats.log_ml(ds.n) + log_model_prior(gamma, ctx.prior)
    return replace(chain, gamma=gamma, stats=stats, log_post=float(lp)), rec


def mh_step(chain, params, ctx):
    """One product-proposal MH step; returns ``(ChainState, StepRecord)``.

    The chain's own random stream is advanced in place.
    """
    return _single_step(chain, ctx, params)


def ads_step(chain, ctx):
    """One add-delete-swap step; returns ``(ChainState, StepRecord)``."""
    return _single_step(chain, ctx, None)


def pt_sweep(chains, ladder, params, ctx, rng, i=1, adapt=True):
    """One step per level, then one swap between a random adjacent pair.

    ``chains[k]`` sits at level k (the last is untempered) and ``params``
    holds one ProposalParams per level, or None for add-delete-swap steps.
    Returns ``(chains, ladder, records, swap_accept_prob, k)`` with ``k``
    the 1-based lower level of the attempted swap.
    """
    m = ladder.m
    if len(chains) != m:
        raise ValueError(f"{len(chains)} chains for {m} levels")
    temps = ladder.temps
    ctx = replace(ctx, temps=temps)
    # the ladder may have moved since the last sweep
    chains = [_retemper(c, ctx, k) for k, c in enumerate(chains)]
    records = []
    for k in range(m):
        pk = None if params is None else params[k]
        chains[k], rec = _single_step(chains[k], ctx, pk)
        records.append(rec)
    if m == 1:
        return chains, ladder, records, float("nan"), 0
    k = int(R.randbelow(rng.state, m - 1))
    n = ctx.dataset.n
    lo, hi = chains[k], chains[k + 1]
    a = swap_acceptance(temps[k], temps[k + 1], lo.stats.log_ml(n), hi.stats.log_ml(n))
    u = rng.uniform()
    counts = ladder.swap_counts.copy()
    counts[k, 0] += 1
    if u < a:
        counts[k, 1] += 1
        lo, hi = hi, lo
        chains[k] = _retemper(lo, ctx, k)
        chains[k + 1] = _retemper(hi, ctx, k + 1)
    ladder = PtLadder(ladder.rho, ladder.swap_target, counts)
    if adapt:
        new = adapt_ladder(ladder, k + 1, a, i)
        ladder = PtLadder(new.rho, ladder.swap_target, counts)
    return chains, ladder, records, a, k + 1


def _retemper(chain, ctx, k):
    n = ctx.dataset.n
    lp = ctx.temps[k] * chain.stats.log_ml(n) + log_model_prior(chain.gamma, ctx.prior)
    return replace(chain, temperature_index=k, log_post=float(lp))


# ---------------------------------------------------------------------------
# full runs


def _prior_draw(p, state, logprior, max_size):
    """Model size from the size prior (truncated), then columns uniformly."""
    k = np.arange(max_size + 1)
    lw = gammaln(p + 1) - gammaln(k + 1) - gammaln(p - k + 1) + logprior[:max_size + 1]
    w = np.exp(lw - lw.max())
    cdf = np.cumsum(w / w.sum())
    size = int(np.searchsorted(cdf, R.uniform(state), side="right"))
    size = min(size, max_size)
    perm = np.arange(p)
    for t in range(size):
        j = t + int(R.randbelow(state, p - t))
        perm[t], perm[j] = perm[j], perm[t]
    gam = np.zeros(p, dtype=np.uint8)
    gam[perm[:size]] = 1
    return gam


class _Buffers:
    """All arrays handed to the compiled loop."""

    def __init__(self, ds, cfg, n_levels, n_param_levels, cap):
        p = ds.p
        L = cfg.n_chains
        S = L * n_levels
        self.S = S
        need = 8 * (S + 2) * (cap + 2) ** 2
        if need > MEMORY_LIMIT:
            raise ConfigError(
                f"state buffers need {need / 2**30:.1f} GiB; lower max_size or the chain count")
        self.gam = np.zeros((S, p), dtype=np.uint8)
        self.order = np.zeros((S, cap + 1), dtype=np.int64)
        self.pos = np.full((S, p), -1, dtype=np.int64)
        self.F = np.zeros((S, cap + 2, cap + 2))
        self.zty = np.zeros((S, cap + 2))
        self.fs = np.zeros((S, K.NFS))
        self.iv = np.zeros((S, K.NIV), dtype=np.int64)
        self.level_slot = np.arange(S, dtype=np.int64).reshape(L, n_levels)
        q = n_param_levels
        self.a_probs = np.zeros((q, p))
        self.d_probs = np.zeros((q, p))
        self.logit_a = np.zeros((q, p))
        self.logit_d = np.zeros((q, p))
        self.pi_hat = np.zeros((q, p))
        self.logit_zeta = np.zeros(q)
        self.n_rows = np.zeros(q, dtype=np.int64)
        self.temps = np.ones(n_levels)
        self.rho = np.zeros(max(n_levels - 1, 0))
        self.scratch = _scratch(p, cap)
        self.rows = np.zeros((S, p))
        self.row_temp = np.full(S, np.nan)
        total = cfg.burn_in + cfg.n_iters
        n_keep = cfg.n_iters // cfg.thin
        T = cfg.n_iters
        nbytes = (p + 7) // 8
        stride = cfg.snap_stride
        n_snap = total // stride if stride > 0 else 0
        self.rec = (
            np.zeros((T, L)),                          # acceptance probabilities
            np.zeros((T, L), dtype=np.uint8),          # accepted
            np.zeros((T, L), dtype=np.int64),          # model size
            np.zeros((T, L), dtype=np.int64),          # flips proposed
            np.zeros((T, L)),                          # log posterior
            np.zeros((n_keep, L, nbytes), dtype=np.uint8),
            np.zeros((L, p)),                          # pip sums
            np.zeros((L, p)),                          # RB sums
            np.zeros(L, dtype=np.int64),               # RB counts
            np.zeros(L),                               # burn-in acceptance sums
            np.zeros((total, q)),                      # zeta trace
            np.zeros((n_snap, p)),
            np.zeros((n_snap, p)),
            np.zeros(max(n_levels - 1, 1), dtype=np.int64),
            np.zeros(max(n_levels - 1, 1), dtype=np.int64),
            np.zeros(max(n_levels - 1, 1)),
            np.zeros((total, L)),                      # g trace
            np.zeros((total, n_levels)),               # temperatures
            np.zeros(E.NCT, dtype=np.int64),
        )


def _config_arrays(cfg, prior, algo, L, m, cap, share, adapt_ladder_flag, swap_target):
    ci = np.zeros(E.NCI, dtype=np.int64)
    ci[E.CI_ALGO] = algo
    ci[E.CI_L] = L
    ci[E.CI_M] = m
    ci[E.CI_MAX_SIZE] = cap
    ci[E.CI_BURN] = cfg.burn_in
    ci[E.CI_ITERS] = cfg.n_iters
    ci[E.CI_THIN] = cfg.thin
    ci[E.CI_REFRESH] = cfg.refresh_every
    ci[E.CI_ADAPT_AFTER] = int(cfg.adapt_after_burnin)
    ci[E.CI_RB_BURN_ONLY] = int(cfg.rb_burnin_only)
    ci[E.CI_RECORD_RB] = int(cfg.record_rb)
    ci[E.CI_RANDOM_G] = int(prior.random_g)
    ci[E.CI_SHARE_LEVELS] = int(share)
    ci[E.CI_ADAPT_LADDER] = int(adapt_ladder_flag)
    ci[E.CI_SNAP_STRIDE] = cfg.snap_stride
    cf = np.zeros(E.NCF)
    cf[E.CF_EPS] = cfg.eps
    cf[E.CF_TAU_L] = cfg.tau_l
    cf[E.CF_TAU_U] = cfg.tau_u
    cf[E.CF_TAU] = cfg.tau
    cf[E.CF_KAPPA] = cfg.kappa
    cf[E.CF_PHI_SCALE] = cfg.phi_scale
    cf[E.CF_LAMBDA] = cfg.lam
    cf[E.CF_G_SCALE] = prior.g_halfcauchy_scale or 1.0
    cf[E.CF_G_STEP] = cfg.g_step
    cf[E.CF_SWAP_TARGET] = swap_target
    return ci, cf


def _init_params(buf, cfg, prior, algo, p):
    h = prior.prior_mean_h()
    eps = cfg.eps
    if algo == E.ALGO_EIA:
        a0 = P.open_clamp(h, eps)
        d0 = P.open_clamp(1.0, eps)
        buf.a_probs[:] = a0
        buf.d_probs[:] = d0
        buf.logit_a[:] = P.logit_eps(a0, eps)
        buf.logit_d[:] = P.logit_eps(d0, eps)
    elif algo == E.ALGO_ASI:
        buf.pi_hat[:] = h
        for q in range(buf.pi_hat.shape[0]):
            zeta = P.open_clamp(cfg.zeta0, eps)
            delta = P.asi_delta(buf.pi_hat[q], cfg.kappa)
            if zeta * delta < 1.0:
                zeta = P.open_clamp(1.0 / delta, eps)
            buf.logit_zeta[q] = P.logit_eps(zeta, eps)
            P.asi_fill_params(buf.pi_hat[q], zeta, cfg.kappa, eps, buf.a_probs[q],
                              buf.d_probs[q])
    else:
        buf.a_probs[:] = 0.5
        buf.d_probs[:] = 0.5


def _init_states(ds, cfg, prior, buf, data, cache, logprior, cap, rng_states):
    work = np.zeros((cap + 2, cap + 2))
    init = np.zeros((buf.S, ds.p), dtype=np.uint8)
    for s in range(buf.S):
        fs, iv = buf.fs[s], buf.iv[s]
        for attempt in range(100):
            if cfg.init == "prior":
                gam = _prior_draw(ds.p, rng_states[s], logprior, cap)
            else:
                gam = np.zeros(ds.p, dtype=np.uint8)
            idx = np.flatnonzero(gam)
            buf.order[s, :idx.size] = idx
            fs[K.FS_G] = prior.g
            st = K.rebuild(data, cache, buf.order[s], idx.size, buf.F[s], buf.zty[s],
                           buf.pos[s], fs, iv, work)
            if st == K.OK:
                break
            if cfg.init == "empty":
                raise ModelError("the null model is degenerate (constant response?)")
        else:
            raise ModelError("could not draw a non-singular starting model from the prior")
        buf.gam[s] = gam
        init[s] = gam
        for k in idx:
            K.ensure_cached(data, cache, k)
    return init


def _chunk_bounds(i0, i1, size):
    for a in range(i0, i1, size):
        yield a, min(a + size, i1)


def run(dataset, prior, config):
    """Run ``config.n_chains`` chains of the chosen sampler."""
    ds = dataset
    p = ds.p
    cfg = config.resolved(p)
    algo = ALGORITHMS[cfg.algorithm]
    pt = cfg.pt
    m = 1 if pt is None else pt.m
    share = pt is not None and pt.share_params
    n_param_levels = 1 if (m == 1 or share) else m
    L = cfg.n_chains
    cap = ds.default_max_size() if cfg.max_size is None else min(cfg.max_size,
                                                                  ds.default_max_size())
    cache_obj = CrossCache.for_dataset(ds, cap)
    data = ds.kernel_data()
    cache = cache_obj.kernel_cache()
    logprior = prior.log_prior_table(p)
    prior_odds = prior.prior_odds_table(p)

    buf = _Buffers(ds, cfg, m, n_param_levels, cap)
    rng_states = np.empty((buf.S + L, 2), dtype=np.uint64)
    rng_states[:] = R.chain_streams(cfg.seed, buf.S + L)
    init = _init_states(ds, cfg, prior, buf, data, cache, logprior, cap, rng_states)
    _init_params(buf, cfg, prior, algo, p)
    E.rebuild_temps(buf.rho, buf.temps)
    ci, cf = _config_arrays(cfg, prior, algo, L, m, cap, share,
                            pt is not None and pt.adapt,
                            pt.swap_target if pt is not None else 0.234)

    args = (ci, cf, data, cache, logprior, prior_odds, buf.gam, buf.order, buf.pos, buf.F,
            buf.zty, buf.fs, buf.iv, rng_states, buf.level_slot, buf.a_probs, buf.d_probs,
            buf.logit_a, buf.logit_d, buf.pi_hat, buf.logit_zeta, buf.n_rows, buf.temps,
            buf.rho, buf.scratch, buf.rec, buf.rows, buf.row_temp)
    E.run_range(0, 0, *args)   # compile outside the timed region

    total = cfg.burn_in + cfg.n_iters
    chunk = max(1, min(1000, total))
    timings = {"burn_in_seconds": 0.0, "sampling_seconds": 0.0}
    done = 0
    stopped_early = False
    deadline = None if cfg.time_budget is None else time.perf_counter() + cfg.time_budget
    for phase, i0, i1 in (("burn_in_seconds", 0, cfg.burn_in),
                          ("sampling_seconds", cfg.burn_in, total)):
        t0 = time.perf_counter()
        for a, b in _chunk_bounds(i0, i1, chunk):
            E.run_range(a, b, *args)
            done = b
            if deadline is not None and time.perf_counter() > deadline and b < total:
                stopped_early = True
                break
        timings[phase] = time.perf_counter() - t0
        if stopped_early:
            break
    timings["total_seconds"] = timings["burn_in_seconds"] + timings["sampling_seconds"]

    return _assemble(ds, cfg, prior, algo, buf, init, timings, done, m, n_param_levels,
                     cap, cache_obj, stopped_early)


def _assemble(ds, cfg, prior, algo, buf, init, timings, done, m, n_param_levels, cap,
              cache_obj, stopped_early):
    (tr_a, tr_acc, tr_size, tr_nf, tr_lp, samples, pip_sum, rb_sum, rb_n, burn_acc,
     zeta_tr, snap_a, snap_d, swap_att, swap_acc, swap_sum, g_tr, temps_tr,
     counters) = buf.rec
    n_done = max(0, done - cfg.burn_in)
    n_keep = n_done // cfg.thin
    burn_done = min(done, cfg.burn_in)
    counters_d = {name: int(counters[slot]) for name, slot in zip(COUNTER_NAMES, _COUNTER_SLOTS)}
    for name in ("eia_increment_violations", "zeta_increment_violations",
                 "pihat_increment_violations"):
        if counters_d[name]:
            log.warning("%s: %d", name, counters_d[name])
    if counters_d["numerical_errors"]:
        log.warning("%d moves rejected after numerical failures", counters_d["numerical_errors"])

    cold = m - 1
    cold_slots = buf.level_slot[:, cold]
    pl = 0 if n_param_levels == 1 else cold
    final = {"a_probs": buf.a_probs[pl].copy(), "d_probs": buf.d_probs[pl].copy()}
    if algo == E.ALGO_ASI:
        final["pi_hat"] = buf.pi_hat[pl].copy()
        final["zeta"] = float(P.inv_logit_eps(buf.logit_zeta[pl], cfg.eps))
        final["rb_rows_used"] = int(buf.n_rows[pl])
    if m > 1:
        final["temps"] = buf.temps.copy()
        final["rho"] = buf.rho.copy()

    swap = {}
    if m > 1:
        att = swap_att[:m - 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            swap = {
                "attempts": att.tolist(),
                "accepts": swap_acc[:m - 1].tolist(),
                "acceptance_rate": (swap_sum[:m - 1] / att).tolist(),
                "final_temps": buf.temps.tolist(),
            }

    rb_means = None
    rb_counts = None
    if cfg.record_rb:
        rb_counts = rb_n.copy()
        with np.errstate(invalid="ignore"):
            rb_means = rb_sum / np.maximum(rb_n, 1)[:, None]

    stride = cfg.snap_stride
    n_snap = done // stride if stride > 0 else 0
    zeta_trace = None
    if algo == E.ALGO_ASI:
        zeta_trace = zeta_tr[:done, pl].copy()

    meta = {
        "config": cfg.to_dict(),
        "seed": int(cfg.seed),
        "algorithm": cfg.algorithm,
        "p": ds.p,
        "n": ds.n,
        "max_size": int(cap),
        "cache_columns": int(cache_obj.capacity),
        "defaults": {"tau_l": cfg.tau_l, "tau_u": cfg.tau_u, "tau": cfg.tau,
                     "kappa": cfg.kappa, "eps": cfg.eps, "phi_scale": cfg.phi_scale,
                     "lambda": cfg.lam},
        "prior": {"g": prior.g, "h": prior.h,
                  "h_beta": None if prior.h_beta is None else list(prior.h_beta),
                  "g_halfcauchy_scale": prior.g_halfcauchy_scale,
                  "htilde_rule": prior.htilde_rule},
        "iterations_completed": int(done),
        "stopped_early": bool(stopped_early),
    }
    return RunOutput(
        p=ds.p,
        samples=samples[:n_keep].copy(),
        accept_series=tr_a[:n_done].copy(),
        accepted=tr_acc[:n_done].copy(),
        n_flips=tr_nf[:n_done].copy(),
        model_size=tr_size[:n_done].copy(),
        log_post=tr_lp[:n_done].copy(),
        rb_means=rb_means,
        rb_counts=rb_counts,
        timings=timings,
        zeta_trace=zeta_trace,
        a_snapshots=snap_a[:n_snap].copy() if n_snap else None,
        d_snapshots=snap_d[:n_snap].copy() if n_snap else None,
        temps_trace=temps_tr[:done].copy() if m > 1 else None,
        g_trace=g_tr[:done].copy() if prior.random_g else None,
        swap=swap,
        counters=counters_d,
        final_params=final,
        initial_gammas=init.reshape(cfg.n_chains, m, ds.p)[:, cold].copy(),
        final_gammas=buf.gam[cold_slots].copy(),
        burn_accept_mean=(float(burn_acc.mean() / burn_done) if burn_done else float("nan")),
        meta=meta,
    )


def run_eia(dataset, prior, config):
    return run(dataset, prior, replace(config, algorithm="eia"))


def run_asi(dataset, prior, config):
    return run(dataset, prior, replace(config, algorithm="asi"))


def run_ads(dataset, prior, config):
    return run(dataset, prior, replace(config, algorithm="ads"))
