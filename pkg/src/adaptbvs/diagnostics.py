"""Run outputs, inclusion-probability estimators and efficiency statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class EmptyOutputError(ValueError):
    pass


@dataclass
class RunOutput:
    """Everything a sampler run records.

    ``samples`` holds the thinned cold-chain draws bit-packed along the last
    axis, shape ``(n_keep, L, ceil(p / 8))``.  Per-iteration traces cover the
    post-burn-in iterations only, shape ``(n_iters, L)``.
    """

    p: int
    samples: np.ndarray
    accept_series: np.ndarray
    accepted: np.ndarray
    n_flips: np.ndarray
    model_size: np.ndarray
    log_post: np.ndarray
    rb_means: np.ndarray | None = None
    rb_counts: np.ndarray | None = None
    timings: dict = field(default_factory=dict)
    zeta_trace: np.ndarray | None = None
    a_snapshots: np.ndarray | None = None
    d_snapshots: np.ndarray | None = None
    temps_trace: np.ndarray | None = None
    g_trace: np.ndarray | None = None
    swap: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    final_params: dict = field(default_factory=dict)
    initial_gammas: np.ndarray | None = None
    final_gammas: np.ndarray | None = None
    burn_accept_mean: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self):
        return self.samples.shape[1]

    @property
    def n_samples(self):
        return self.samples.shape[0]

    def gamma_samples(self, chain=None):
        """Unpacked draws, shape ``(n_keep, L, p)`` or ``(n_keep, p)``."""
        bits = np.unpackbits(self.samples, axis=-1, count=self.p)
        return bits if chain is None else bits[:, chain]


def pip_empirical(output, per_chain=False):
    if output.n_samples == 0:
        raise EmptyOutputError("no retained samples")
    g = output.gamma_samples().astype(np.float64)
    return g.mean(axis=0) if per_chain else g.mean(axis=(0, 1))


def pip_rb(output, per_chain=False):
    if output.rb_means is None or not np.all(output.rb_counts > 0):
        raise EmptyOutputError("no Rao-Blackwell rows recorded")
    if per_chain:
        return output.rb_means.copy()
    w = output.rb_counts / output.rb_counts.sum()
    return w @ output.rb_means


def weighted_rb(rows, weights):
    """Rao-Blackwell estimate from explicit rows and model weights."""
    rows = np.asarray(rows, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return weights @ rows / weights.sum()


# ---------------------------------------------------------------------------
# effective sample size


@dataclass
class EssResult:
    ess: float
    n: int
    degenerate: bool = False
    capped: bool = False

    def __float__(self):
        return self.ess


def autocovariance(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov


def ess_univariate(trace, cap_factor=10.0):
    """Effective sample size by Geyer's initial monotone sequence estimator.

    A constant series is reported as ``ess = n`` with ``degenerate`` set.
    Antithetic series can exceed n; the result is capped at
    ``cap_factor * n`` and flagged.
    """
    x = np.asarray(trace, dtype=np.float64)
    n = x.size
    if n < 10:
        raise ValueError(f"need at least 10 values, got {n}")
    acov = autocovariance(x)
    if not acov[0] > 0:
        return EssResult(float(n), n, degenerate=True)
    rho = acov / acov[0]
    # sums of adjacent pairs Gamma_k = rho_{2k} + rho_{2k+1}
    npairs = n // 2
    gam = rho[0:2 * npairs:2] + rho[1:2 * npairs:2]
    nonpos = np.flatnonzero(gam <= 0)
    kmax = nonpos[0] if nonpos.size else npairs
    if kmax == 0:
        # the first pair is already non-positive: strongly antithetic series
        tau = 2.0 * gam[0] - 1.0
    else:
        tau = -1.0 + 2.0 * np.minimum.accumulate(gam[:kmax]).sum()
    ess = n / tau if tau > 0 else math.inf
    cap = cap_factor * n
    if ess > cap:
        return EssResult(cap, n, capped=True)
    return EssResult(float(ess), n)


# ---------------------------------------------------------------------------
# relative efficiency


@dataclass
class EfficiencyReport:
    ratios: np.ndarray
    median: float
    n_inf: int
    n_undefined: int
    time_a: float
    time_b: float


def relative_efficiency(pips_a, times_a, pips_b, times_b):
    """Time-standardised efficiency of sampler A relative to sampler B.

    ``pips_a`` is (runs, p): one PIP estimate per replicate run.  Per
    variable the ratio is (s2_B t_B) / (s2_A t_A) with s2 the across-run
    sample variance and t the median run time.  Zero variance for A alone
    gives +inf; zero variance on both sides is undefined (NaN) and left out
    of the median.
    """
    pips_a = np.atleast_2d(np.asarray(pips_a, dtype=np.float64))
    pips_b = np.atleast_2d(np.asarray(pips_b, dtype=np.float64))
    if pips_a.shape[0] < 2 or pips_b.shape[0] < 2:
        raise ValueError("need at least two replicate runs per sampler")
    ta = float(np.median(times_a))
    tb = float(np.median(times_b))
    if not (ta > 0 and tb > 0):
        raise ValueError("median run times must be positive")
    va = pips_a.var(axis=0, ddof=1)
    vb = pips_b.var(axis=0, ddof=1)
    return ratio_from_variances(va, ta, vb, tb)


def ratio_from_variances(va, ta, vb, tb):
    va = np.asarray(va, dtype=np.float64)
    vb = np.asarray(vb, dtype=np.float64)
    num = vb * tb
    den = va * ta
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    r = np.where((den == 0) & (num == 0), np.nan, r)
    r = np.where((den == 0) & (num > 0), np.inf, r)
    finite_or_inf = r[~np.isnan(r)]
    med = float(np.median(finite_or_inf)) if finite_or_inf.size else float("nan")
    return EfficiencyReport(r, med, int(np.isinf(r).sum()), int(np.isnan(r).sum()), ta, tb)


# ---------------------------------------------------------------------------
# summaries


UNDEFINED = None


def run_summary(output):
    """Acceptance, mutation and model-size summaries; None where undefined."""
    if output.accept_series.size == 0:
        return {
            "n_iters": 0, "n_chains": int(output.accept_series.shape[1]), "n_samples": 0,
            "mean_acceptance_rate": UNDEFINED, "accepted_fraction": UNDEFINED,
            "mutation_rate": UNDEFINED, "mean_model_size": UNDEFINED,
            "mean_flips_proposed": UNDEFINED, "mean_flips_per_accepted": UNDEFINED,
            "burn_in_mean_acceptance": (None if math.isnan(output.burn_accept_mean)
                                        else float(output.burn_accept_mean)),
            "timings": dict(output.timings), "counters": dict(output.counters),
        }
    acc = output.accepted.astype(bool)
    nf = output.n_flips
    moved = acc & (nf > 0)
    n_moved = int(moved.sum())
    summary = {
        "n_iters": int(output.accept_series.shape[0]),
        "n_chains": int(output.accept_series.shape[1]),
        "n_samples": int(output.n_samples),
        "mean_acceptance_rate": float(output.accept_series.mean()),
        "accepted_fraction": float(acc.mean()),
        "mutation_rate": float(moved.mean()),
        "mean_model_size": float(output.model_size.mean()),
        "mean_flips_proposed": float(nf.mean()),
        "mean_flips_per_accepted": float(nf[moved].mean()) if n_moved else UNDEFINED,
        "burn_in_mean_acceptance": (None if math.isnan(output.burn_accept_mean)
                                    else float(output.burn_accept_mean)),
        "timings": dict(output.timings),
        "counters": dict(output.counters),
    }
    if output.swap:
        summary["swap_acceptance"] = output.swap.get("acceptance_rate")
        summary["final_temperatures"] = output.swap.get("final_temps")
    return summary
