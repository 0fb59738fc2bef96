import itertools
import math

import numpy as np
import pytest

from adaptbvs import proposal as P
from adaptbvs.rng import CounterRNG

import oracles as O


# --- logit_eps ----------------------------------------------------------------

def test_logit_eps_basic():
    for eps in (0.0, 0.01, 0.2):
        assert P.logit_eps(0.5, eps) == pytest.approx(0.0, abs=1e-15)
    assert P.logit_eps(0.75, 0.0) == pytest.approx(math.log(3), rel=1e-14)


def test_logit_eps_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        eps = rng.uniform(0, 0.25)
        x = rng.uniform(eps, 1 - eps)
        if not eps < x < 1 - eps:
            continue
        assert P.inv_logit_eps(P.logit_eps(x, eps), eps) == pytest.approx(x, abs=1e-12)


def test_logit_eps_domain_and_slope():
    with pytest.raises(ValueError):
        P.logit_eps_checked(0.05, 0.1)
    with pytest.raises(ValueError):
        P.logit_eps_checked(0.9, 0.1)
    eps = 0.1
    ys = np.linspace(-30, 30, 2001)
    xs = np.array([P.inv_logit_eps(y, eps) for y in ys])
    assert np.all((xs >= eps) & (xs <= 1 - eps))
    slope = np.diff(xs) / np.diff(ys)
    assert slope.max() <= 0.25 * (1 - 2 * eps) + 1e-9


def test_phi_schedule():
    vals = [P.phi(i, 1.0, 0.55) for i in range(1, 50)]
    assert vals[0] == 1.0
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert P.phi(16, 2.0, 0.75) == pytest.approx(2.0 * 16 ** -0.75)


# --- proposal ---------------------------------------------------------------------

def test_near_identity_proposal():
    p = 30
    eps = 1e-6
    params = P.ProposalParams(np.full(p, eps), np.full(p, eps), eps)
    rng = CounterRNG(1, 1)
    gam = np.zeros(p, dtype=np.uint8)
    gam[:5] = 1
    same = sum(np.array_equal(P.sample_proposal(params, gam, rng), gam) for _ in range(2000))
    assert same >= 1990
    assert P.log_proposal_prob(params, gam, gam) == pytest.approx(p * math.log1p(-eps))


def test_flip_frequencies_match_product_bernoulli():
    p = 20
    rng0 = np.random.default_rng(3)
    a = rng0.uniform(0.05, 0.95, p)
    d = rng0.uniform(0.05, 0.95, p)
    params = P.ProposalParams(a, d, 0.01)
    gam = (rng0.random(p) < 0.5).astype(np.uint8)
    rng = CounterRNG(9, 4)
    n = 100_000
    counts = np.zeros(p)
    for _ in range(n):
        counts += P.sample_proposal(params, gam, rng) != gam
    prob = np.where(gam == 0, a, d)
    se = np.sqrt(prob * (1 - prob) / n)
    assert np.all(np.abs(counts / n - prob) <= 4 * se)


def test_excluded_high_a_proposes_inclusion():
    p = 5
    eps = 0.01
    params = P.ProposalParams(np.full(p, 1 - eps), np.full(p, eps), eps)
    rng = CounterRNG(2, 1)
    n = 20000
    hits = sum(int(P.sample_proposal(params, np.zeros(p, np.uint8), rng)[0]) for _ in range(n))
    assert abs(hits / n - (1 - eps)) < 4 * math.sqrt(eps * (1 - eps) / n)


def test_log_proposal_prob_examples():
    a = np.array([0.2, 0.3, 0.4])
    d = np.array([0.5, 0.6, 0.7])
    params = P.ProposalParams(a, d, 0.01)
    null = np.zeros(3, np.uint8)
    assert P.log_proposal_prob(params, null, null) == pytest.approx(np.log1p(-a).sum())
    to = np.array([0, 1, 0], np.uint8)
    assert P.log_proposal_prob(params, null, to) == pytest.approx(
        math.log(0.3) + math.log(0.8) + math.log(0.6))


def test_proposal_normalises_by_enumeration():
    p = 8
    rng = np.random.default_rng(4)
    params = P.ProposalParams(rng.uniform(0.01, 0.99, p), rng.uniform(0.01, 0.99, p), 0.01)
    src = (rng.random(p) < 0.5).astype(np.uint8)
    total = sum(math.exp(P.log_proposal_prob(params, src, np.array(t, np.uint8)))
                for t in itertools.product((0, 1), repeat=p))
    assert total == pytest.approx(1.0, abs=1e-12)
    t = np.array([1, 0, 1, 1, 0, 0, 1, 0], np.uint8)
    assert math.exp(P.log_proposal_prob(params, src, t)) == pytest.approx(
        O.product_proposal_prob(params.a_probs, params.d_probs, src, t), rel=1e-12)


# --- acceptance ---------------------------------------------------------------------

def test_acceptance_symmetric_equal():
    assert P.acceptance_prob(-3.0, -3.0, -1.2, -1.2) == 1.0


def test_acceptance_one_on_segment_targets():
    p = 10
    rng = np.random.default_rng(5)
    pis = rng.uniform(0.05, 0.95, p)
    lt = lambda g: float(np.sum(np.where(g == 1, np.log(pis), np.log1p(-pis))))
    for zeta in (1.0, 0.6):
        a = zeta * np.minimum(1, pis / (1 - pis))
        d = zeta * np.minimum(1, (1 - pis) / pis)
        params = P.ProposalParams(a, d, 0.0)
        r = CounterRNG(6, 1)
        for _ in range(500):
            g = (rng.random(p) < pis).astype(np.uint8)
            q = P.sample_proposal(params, g, r)
            acc = P.acceptance_prob(lt(g), lt(q), P.log_proposal_prob(params, g, q),
                                    P.log_proposal_prob(params, q, g))
            assert acc >= 1 - 1e-12


def test_detailed_balance_identity():
    p = 6
    rng = np.random.default_rng(7)
    params = P.ProposalParams(rng.uniform(0.05, 0.95, p), rng.uniform(0.05, 0.95, p), 0.01)
    lpi = {t: rng.normal() * 3 for t in itertools.product((0, 1), repeat=p)}
    for _ in range(200):
        g = tuple(rng.integers(0, 2, p))
        h = tuple(rng.integers(0, 2, p))
        ga, ha = np.array(g, np.uint8), np.array(h, np.uint8)
        qf = P.log_proposal_prob(params, ga, ha)
        qr = P.log_proposal_prob(params, ha, ga)
        lhs = P.acceptance_prob(lpi[g], lpi[h], qf, qr) * math.exp(lpi[g] + qf)
        rhs = P.acceptance_prob(lpi[h], lpi[g], qr, qf) * math.exp(lpi[h] + qr)
        assert lhs == pytest.approx(rhs, rel=1e-12)


# --- EIA ------------------------------------------------------------------------------

def _eia(p=4, eps=0.01):
    return P.EiaState.initial(p, 0.3, eps=eps)


def test_eia_initial_values():
    st = P.EiaState.initial(5, 0.2, eps=0.02)
    assert np.all(st.params.a_probs == 0.2)
    assert np.all(st.params.d_probs < 1 - 0.02) and np.all(st.params.d_probs > 0.97)
    assert st.params.in_box()


def test_eia_expansion():
    st = _eia()
    g = np.zeros(4, np.uint8)
    q = np.array([0, 1, 0, 0], np.uint8)
    new = P.eia_update(st, g, q, 0.5)
    phi = st.phi()
    assert new.logit_a[1] - st.logit_a[1] == pytest.approx(phi)
    assert new.logit_d[1] - st.logit_d[1] == pytest.approx(phi)
    np.testing.assert_array_equal(np.delete(new.logit_a, 1), np.delete(st.logit_a, 1))
    assert new.iter == st.iter + 1


def test_eia_correction():
    st = _eia()
    g = np.zeros(4, np.uint8)
    q = np.array([0, 0, 1, 0], np.uint8)
    new = P.eia_update(st, g, q, 0.05)
    phi = st.phi()
    assert new.logit_a[2] - st.logit_a[2] == pytest.approx(-phi)
    assert new.logit_d[2] - st.logit_d[2] == pytest.approx(phi)


def test_eia_shrinkage():
    st = _eia()
    g = np.array([1, 0, 0, 1], np.uint8)
    q = np.array([0, 0, 0, 1], np.uint8)
    new = P.eia_update(st, g, q, 0.001)
    phi = st.phi()
    assert new.logit_d[0] - st.logit_d[0] == pytest.approx(-phi)
    assert new.logit_a[0] == st.logit_a[0]


def test_eia_increments_bounded_and_boxed():
    rng = np.random.default_rng(8)
    p = 15
    st = P.EiaState.initial(p, 0.1, eps=0.005)
    for _ in range(500):
        g = (rng.random(p) < 0.3).astype(np.uint8)
        q = (rng.random(p) < 0.3).astype(np.uint8)
        new = P.eia_update(st, g, q, rng.random())
        phi = st.phi()
        assert np.abs(new.logit_a - st.logit_a).max() <= phi * (1 + 1e-12)
        assert np.abs(new.logit_d - st.logit_d).max() <= phi * (1 + 1e-12)
        assert new.params.in_box()
        st = new


# --- ASI ------------------------------------------------------------------------------

def test_asi_zero_increment_at_target():
    st = P.AsiState.initial(6, 0.3, eps=0.01, zeta=0.7)
    new = P.asi_update(st, np.full(6, 0.3), st.tau)
    assert new.zeta == pytest.approx(0.7, abs=1e-14)


def test_asi_single_row_mean():
    st = P.AsiState.initial(5, 0.1, eps=0.01)
    row = np.array([0.1, 0.9, 0.5, 0.0, 1.0])
    new = P.asi_update(st, row, 0.3)
    np.testing.assert_array_equal(new.pi_hat, row)
    assert new.rb_count == 1


def test_asi_frozen_estimates():
    st = P.AsiState.initial(4, 0.2, eps=0.01, adapt_rb=False)
    new = P.asi_update(st, np.ones(4), 0.9)
    np.testing.assert_array_equal(new.pi_hat, st.pi_hat)
    assert new.zeta > st.zeta


def test_asi_increment_bounds_and_floor():
    rng = np.random.default_rng(9)
    p = 12
    st = P.AsiState.initial(p, 0.05, eps=0.1 / p)
    for i in range(1, 600):
        row = rng.random(p) ** 3
        new = P.asi_update(st, row, rng.random())
        assert np.abs(new.pi_hat - st.pi_hat).max() <= 2 / (i + 1) + 1e-15
        assert new.zeta * new.delta() >= 1 - 1e-12
        st = new


def test_asi_params_examples():
    st = P.AsiState(np.array([0.5]), 0.8, eps=0.001)
    params = P.asi_params(st)
    assert params.a_probs[0] == pytest.approx(0.8)
    assert params.d_probs[0] == pytest.approx(0.8)
    eps = 1e-4
    st = P.AsiState(np.array([0.0]), 1.0, eps=eps, kappa=0.001)
    params = P.asi_params(st)
    assert params.a_probs[0] == pytest.approx(0.001 / 0.999, rel=1e-12)
    assert params.d_probs[0] == pytest.approx(1 - eps)


def test_asi_segment_condition_before_clamp():
    rng = np.random.default_rng(10)
    st = P.AsiState(rng.random(50), 0.6, eps=0.002)
    raw = P.asi_params(st, clamp=False)
    pt = st.pi_tilde()
    np.testing.assert_allclose(raw.a_probs / raw.d_probs, pt / (1 - pt), rtol=1e-12)
    assert P.asi_params(st).in_box()
