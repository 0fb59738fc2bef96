import numpy as np
import pytest

from adaptbvs import diagnostics as D


def make_output(gammas, accept=None, accepted=None, n_flips=None, rb=None):
    """RunOutput from unpacked draws of shape (n, L, p)."""
    g = np.asarray(gammas, dtype=np.uint8)
    n, L, p = g.shape
    acc = np.ones((n, L)) if accept is None else np.asarray(accept, dtype=float)
    accd = np.ones((n, L), bool) if accepted is None else np.asarray(accepted, bool)
    nf = np.ones((n, L), np.int64) if n_flips is None else np.asarray(n_flips)
    out = D.RunOutput(p=p, samples=np.packbits(g, axis=-1), accept_series=acc,
                      accepted=accd, n_flips=nf, model_size=g.sum(-1), log_post=np.zeros((n, L)))
    if rb is not None:
        out.rb_means = np.asarray(rb, dtype=float)
        out.rb_counts = np.full(L, n)
    return out


def test_identical_samples():
    g = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1], np.uint8)
    out = make_output(np.tile(g, (50, 2, 1)))
    np.testing.assert_array_equal(D.pip_empirical(out), g)
    assert D.pip_empirical(out, per_chain=True).shape == (2, 11)


def test_empty_output_errors():
    out = make_output(np.zeros((0, 1, 3)))
    with pytest.raises(D.EmptyOutputError):
        D.pip_empirical(out)
    with pytest.raises(D.EmptyOutputError):
        D.pip_rb(out)


def test_pip_rb_weighting():
    out = make_output(np.zeros((4, 2, 2)), rb=[[0.2, 0.4], [0.6, 0.8]])
    np.testing.assert_allclose(D.pip_rb(out), [0.4, 0.6])
    np.testing.assert_allclose(D.weighted_rb([[1, 0], [0, 1]], [3, 1]), [0.75, 0.25])


def test_pip_relabelling():
    rng = np.random.default_rng(0)
    g = (rng.random((30, 1, 6)) < 0.4).astype(np.uint8)
    perm = rng.permutation(6)
    np.testing.assert_array_equal(D.pip_empirical(make_output(g[..., perm])),
                                  D.pip_empirical(make_output(g))[perm])


# --- ESS --------------------------------------------------------------------------

def test_ess_iid():
    x = (np.random.default_rng(1).random(100_000) < 0.3).astype(float)
    r = D.ess_univariate(x)
    assert 0.9 <= r.ess / r.n <= 1.1


def test_ess_alternating_capped():
    x = np.tile([1.0, -1.0], 500)
    r = D.ess_univariate(x)
    assert r.capped and r.ess == 10 * r.n


def test_ess_constant_degenerate():
    r = D.ess_univariate(np.ones(50))
    assert r.degenerate and r.ess == 50


def test_ess_short_series():
    with pytest.raises(ValueError):
        D.ess_univariate(np.ones(5))


def _ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_ess_ar1():
    r = D.ess_univariate(_ar1(0.9, 200_000, 2))
    expect = (1 - 0.9) / (1 + 0.9)
    assert abs(r.ess / r.n - expect) < 0.2 * expect


def test_ess_monotone_in_dependence():
    vals = [D.ess_univariate(_ar1(phi, 50_000, 3)).ess for phi in (0.2, 0.6, 0.9)]
    assert vals[0] > vals[1] > vals[2] > 0


# --- relative efficiency ---------------------------------------------------------------

def test_r_hat_identity_and_time_scaling():
    rng = np.random.default_rng(4)
    a = rng.random((20, 7))
    rep = D.relative_efficiency(a, [1.0] * 20, a, [1.0] * 20)
    np.testing.assert_allclose(rep.ratios, 1.0)
    rep2 = D.relative_efficiency(a, [0.5] * 20, a, [1.0] * 20)
    np.testing.assert_allclose(rep2.ratios, 2.0)


def test_r_hat_antisymmetry():
    rng = np.random.default_rng(5)
    a, b = rng.random((10, 9)), rng.random((10, 9))
    ab = D.relative_efficiency(a, [2.0], b, [3.0]).ratios
    ba = D.relative_efficiency(b, [3.0], a, [2.0]).ratios
    np.testing.assert_allclose(ab * ba, 1.0, rtol=1e-14)


def test_r_hat_variance_ratio_four():
    rng = np.random.default_rng(6)
    meds = []
    for _ in range(200):
        a = rng.normal(0, 1, (20, 50))
        b = rng.normal(0, 2, (20, 50))
        meds.append(D.relative_efficiency(a, [1.0], b, [1.0]).median)
    meds = np.array(meds)
    assert 3 <= np.median(meds) <= 5.3
    assert np.mean((meds >= 3) & (meds <= 5.3)) > 0.9


def test_r_hat_sentinels():
    a = np.array([[0.5, 0.1, 1.0], [0.5, 0.3, 1.0]])
    b = np.array([[0.2, 0.1, 1.0], [0.4, 0.2, 1.0]])
    rep = D.relative_efficiency(a, [1.0], b, [1.0])
    assert np.isinf(rep.ratios[0]) and np.isnan(rep.ratios[2])
    assert (rep.n_inf, rep.n_undefined) == (1, 1)
    with pytest.raises(ValueError):
        D.relative_efficiency(a[:1], [1.0], b, [1.0])


# --- summaries -------------------------------------------------------------------------

def test_summary_no_accepted_moves():
    g = np.zeros((20, 1, 4), np.uint8)
    out = make_output(g, accept=np.full((20, 1), 0.1), accepted=np.zeros((20, 1)))
    s = D.run_summary(out)
    assert s["mean_flips_per_accepted"] is None
    assert s["mutation_rate"] == 0.0


def test_summary_identity_proposals():
    g = np.zeros((20, 1, 4), np.uint8)
    out = make_output(g, n_flips=np.zeros((20, 1), np.int64))
    s = D.run_summary(out)
    assert s["mutation_rate"] == 0.0
    assert s["mean_acceptance_rate"] == 1.0


def test_summary_values():
    g = np.zeros((4, 1, 3), np.uint8)
    g[2:, 0, 0] = 1
    out = make_output(g, accept=[[0.5], [1.0], [0.25], [0.25]],
                      accepted=[[0], [1], [1], [0]], n_flips=[[2], [1], [3], [0]])
    s = D.run_summary(out)
    assert s["mean_acceptance_rate"] == 0.5
    assert s["mutation_rate"] == 0.5
    assert s["mean_flips_per_accepted"] == 2.0
    assert s["mean_model_size"] == 0.5
