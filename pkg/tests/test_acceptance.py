"""Acceptance suite.

Each test prints one ``criterion k: PASS|FAIL`` line (collected again in the
terminal summary) and then asserts the same verdict.  Runs of criteria 2, 6
and 7 go through the command line, so the files compared for determinism are
the files a user would get.
"""

import json
import time

import numpy as np
import pytest

from adaptbvs import data_io as io
from adaptbvs import idealized as I
from adaptbvs import proposal as P
from adaptbvs import rng as R
from adaptbvs.cli import main
from adaptbvs.model import (Dataset, GammaVector, PriorSpec, bayes_factor_down, bayes_factor_up,
                            build_stats, rao_blackwell_row, suffstats_add, suffstats_remove)
from adaptbvs.samplers import RunConfig, run

import oracles as O

pytestmark = pytest.mark.slow

TOL_PIP = 0.02
C2_ITERS = 1_000_000
C2_BURN = 10_000
C2_SEEDS = (0, 1, 2)
C2_SAMPLERS = {"eia": ["--algo", "eia"], "asi": ["--algo", "asi"], "ads": ["--algo", "ads"],
               "pt-cold": ["--algo", "asi", "--pt", "3"]}
C6_ARGS = ["--chains", "5", "--g", "9", "--h", "0.02", "--no-trace"]
# the baseline's steps are about half the price, so it gets twice the iterations
C6_BUDGET = {"eia": ["--burnin", "2150", "--iters", "10750"],
             "asi": ["--burnin", "2150", "--iters", "10750"],
             "ads": ["--burnin", "4300", "--iters", "21500"]}
C7_ARGS = ["--algo-a", "asi", "--algo-b", "ads", "--chains", "5", "--replicates", "20",
           "--budget", "iters", "--iters", "4000", "--burnin", "800", "--iters-b", "16000",
           "--burnin-b", "3200", "--g", "9", "--h", "0.02", "--estimator", "empirical",
           "--threads", "1", "--seed", "0"]


def _cli(*args):
    code = main([str(a) for a in args])
    assert code == 0, f"exit code {code} for {args}"


def _run_dir(data, out, extra, seed):
    _cli("run", "--data", data, "--seed", seed, "--out", out, *extra)
    return out


def _stripped(path):
    return json.dumps(io.strip_timings(json.loads(path.read_text())), sort_keys=True)


# ---------------------------------------------------------------------------
# shared runs

@pytest.fixture(scope="module")
def c2(tmp_path_factory):
    root = tmp_path_factory.mktemp("c2")
    data = root / "data.csv"
    _cli("simulate", "--n", 50, "--p", 10, "--rho", 0.6, "--snr", 1.0, "--seed", 1, "--out", data)
    _cli("enumerate", "--data", data, "--out", root / "exact")
    t0 = time.perf_counter()
    dirs = {}
    for name, extra in C2_SAMPLERS.items():
        for seed in C2_SEEDS:
            dirs[name, seed] = _run_dir(data, root / f"{name}-{seed}",
                                        [*extra, "--iters", C2_ITERS, "--burnin", C2_BURN,
                                         "--no-trace"], seed)
    return {"root": root, "data": data, "dirs": dirs, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def big_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("n500")
    data = root / "data.csv"
    _cli("simulate", "--n", 500, "--p", 500, "--rho", 0.6, "--snr", 2.0, "--seed", 0,
         "--out", data)
    return data


@pytest.fixture(scope="module")
def c6(big_data, tmp_path_factory):
    root = tmp_path_factory.mktemp("c6")
    t0 = time.perf_counter()
    dirs = {algo: _run_dir(big_data, root / algo, ["--algo", algo, *C6_ARGS, *budget], 0)
            for algo, budget in C6_BUDGET.items()}
    return {"dirs": dirs, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def c7(big_data, tmp_path_factory):
    root = tmp_path_factory.mktemp("c7")
    t0 = time.perf_counter()
    _cli("compare", "--data", big_data, *C7_ARGS, "--out", root / "cmp")
    return {"root": root, "seconds": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# 1. oracle equivalence

def _rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


def test_criterion_1_oracle_equivalence(report):
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    worst = {"stats": 0.0, "bf": 0.0, "rb": 0.0}
    prior = PriorSpec(h=0.3)
    for _ in range(100):
        n = int(rng.integers(8, 26))
        p = int(rng.integers(2, 13))
        x, y = O.random_instance(rng, n, p)
        ds = Dataset(y, x)
        g = float(rng.choice([1.0, 9.0, 100.0]))
        pr = PriorSpec(g=g, h=prior.h)
        bits = np.zeros(p, np.uint8)
        st = build_stats(ds, GammaVector.empty(p), g)
        for _ in range(50):
            inside = np.flatnonzero(bits)
            grow = inside.size == 0 or (inside.size < min(p, n - 3) and rng.random() < 0.5)
            if grow:
                j = int(rng.choice(np.flatnonzero(bits == 0)))
                lbf = bayes_factor_up(st, ds, j)
                before = O.log_ml(x, y, inside, g)
                st = suffstats_add(st, ds, j)
                bits[j] = 1
                expect = O.log_ml(x, y, np.flatnonzero(bits), g) - before
            else:
                j = int(rng.choice(inside))
                lbf = bayes_factor_down(st, ds, j)
                before = O.log_ml(x, y, inside, g)
                st = suffstats_remove(st, ds, j)
                bits[j] = 0
                expect = before - O.log_ml(x, y, np.flatnonzero(bits), g)
            worst["bf"] = max(worst["bf"], _rel(lbf, expect))
            f, a, logdet = O.dense_stats(x, y, st.z.tolist(), g)
            scale = max(1.0, np.abs(f).max())
            worst["stats"] = max(worst["stats"], np.abs(st.f - f).max() / scale,
                                 _rel(st.a_resid, a), _rel(st.logdet, logdet))
            row = rao_blackwell_row(st, ds, pr, bits)
            ref = O.conditional_row(x, y, bits, g, h=pr.h)
            worst["rb"] = max(worst["rb"], float(np.max(np.abs(row - ref) / np.maximum(ref, 1e-300))))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-8 and secs < 60
    report(1, ok, "max rel error " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
           + f"; {secs:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. exact posterior recovery

def test_criterion_2_posterior_recovery(c2, report):
    exact = np.array([float(r.split(",")[2]) for r in
                      (c2["root"] / "exact" / "pips.csv").read_text().splitlines()[1:]])
    ds = io.load_csv(c2["data"])
    oracle, _, _ = O.enumerate_pips(ds.x, ds.y, 9.0, h=0.5)
    assert np.max(np.abs(exact - oracle)) < 1e-10
    errors = {}
    for (name, seed), d in c2["dirs"].items():
        _, emp, rb = io.read_pips(d / "pips.csv")
        err = np.max(np.abs(emp - exact))
        if rb is not None:
            err = max(err, np.max(np.abs(rb - exact)))
        errors[name, seed] = err
    worst = max(errors.values())
    by_sampler = {n: max(v for (m, _), v in errors.items() if m == n) for n in C2_SAMPLERS}
    ok = worst <= TOL_PIP and c2["seconds"] < 600
    report(2, ok, "max |PIP - exact| " + ", ".join(f"{k} {v:.4f}" for k, v in by_sampler.items())
           + f"; {c2['seconds']:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. idealized-target suite

def test_criterion_3_idealized_suite(report):
    t0 = time.perf_counter()
    failed = []
    for p in (1, 5, 20):
        for variant in I.VARIANTS:
            for row in I.idealized_check(p, variant, 100_000, seed=0):
                if row.quantity in ("esjd", "mutation_rate") and not row.passed:
                    failed.append(f"{row.quantity}/{variant}/p={p}")
    rng = np.random.default_rng(7)
    spec_err = 0.0
    for p in (1, 2):
        for _ in range(25):
            t = I.ProductTarget(rng.uniform(0.02, 0.98, p))
            w = rng.normal(size=p)
            f1 = rng.normal(size=p)
            f = I.linear_f_values(p, w, f1=f1, a0=rng.normal())
            for variant in I.VARIANTS:
                spec = I.spectral_asym_var(t, I.ideal_params(t, variant), f)
                closed = I.asym_var_linear(t, w, I.bernoulli_var(t.pis, 0.0, f1), variant)
                spec_err = max(spec_err, abs(spec - closed))
    peskun_bad = 0
    for _ in range(1000):
        p = int(rng.integers(1, 30))
        t = I.ProductTarget(rng.uniform(0.001, 0.999, p))
        a = rng.normal(size=p)
        v = I.bernoulli_var(t.pis)
        if I.asym_var_linear(t, a, v, "rw") > I.asym_var_linear(t, a, v, "independent") + 1e-15:
            peskun_bad += 1
    secs = time.perf_counter() - t0
    ok = not failed and spec_err <= 1e-10 and peskun_bad == 0 and secs < 120
    report(3, ok, f"ESJD/mutation failures {failed or 'none'}; spectral max diff {spec_err:.1e}; "
                  f"Peskun violations {peskun_bad}/1000; {secs:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4. acceptance on the segment

def test_criterion_4_segment_acceptance(report):
    lowest = 1.0
    count = 0
    rng = np.random.default_rng(4)
    for p in (1, 5, 20):
        t = I.ProductTarget(rng.uniform(0.01, 0.99, p))
        for variant in I.VARIANTS:
            res = I.simulate_ideal(t, I.ideal_params(t, variant), 100_000, seed=p)
            lowest = min(lowest, float(res.accept_probs.min()))
            count += res.accept_probs.size
    # the same identity through the general proposal density and MH ratio
    t = I.ProductTarget(rng.uniform(0.01, 0.99, 8))
    prm = I.ideal_rw_params(t)
    params = P.ProposalParams(prm.a_probs.copy(), prm.d_probs.copy())
    crng = R.CounterRNG(4, R.CHAIN_STREAM_BASE)
    for _ in range(1000):
        src = (rng.random(8) < 0.5).astype(np.uint8)
        dst = P.sample_proposal(params, src, crng)
        a = P.acceptance_prob(t.log_mass(src), t.log_mass(dst),
                              P.log_proposal_prob(params, src, dst),
                              P.log_proposal_prob(params, dst, src))
        lowest = min(lowest, a)
        count += 1
    ok = lowest >= 1 - 1e-12
    report(4, ok, f"min acceptance over {count} proposals = 1 - {1 - lowest:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 5. diminishing adaptation

def test_criterion_5_diminishing_adaptation(report):
    ds, _ = io.generate_synthetic(io.SynthSpec(n=50, p=10, rho=0.6, snr=1.0, seed=1))
    prior = PriorSpec(h=0.5)
    n_steps = 1_000_000
    counters = {}
    eia = run(ds, prior, RunConfig(n_iters=n_steps, algorithm="eia", seed=5, record_rb=False))
    asi = run(ds, prior, RunConfig(n_iters=n_steps, algorithm="asi", seed=5))
    for name in ("eia_increment_violations", "zeta_increment_violations",
                 "pihat_increment_violations"):
        counters[name] = eia.counters[name] + asi.counters[name]
    # independent re-check from recorded trajectories
    n_snap = 200_000
    eia_s = run(ds, prior, RunConfig(n_iters=n_snap, algorithm="eia", seed=6, snap_stride=1))
    eps = P.default_eps(ds.p)
    # logits recomputed from stored probabilities are ill-conditioned at the box
    # edges, so check the consequence in probability space: the inverse logit has
    # slope at most (1 - 2 eps) / 4
    slope = (1 - 2 * eps) / 4
    slack = 1e-12
    phis = P.PHI_SCALE * np.arange(1, n_snap + 1, dtype=float) ** (-P.PHI_LAMBDA)
    bound = slope * phis[1:, None] + slack
    traj_eia = int(np.sum(np.abs(np.diff(eia_s.a_snapshots, axis=0)) > bound)
                   + np.sum(np.abs(np.diff(eia_s.d_snapshots, axis=0)) > bound))
    dz = np.diff(asi.zeta_trace)
    phis = P.PHI_SCALE * np.arange(2, dz.size + 2, dtype=float) ** (-P.PHI_LAMBDA)
    # the floor may only raise zeta, so a larger step must be upward
    traj_zeta = int(np.sum(dz < -(slope * phis + slack)))
    bad = sum(counters.values()) + traj_eia + traj_zeta
    ok = bad == 0
    report(5, ok, f"{n_steps} steps per sampler; counters {counters}; trajectory re-check: "
                  f"EIA {traj_eia}, zeta {traj_zeta}")
    assert ok


# ---------------------------------------------------------------------------
# 6. qualitative reproduction at n = p = 500

def test_criterion_6_scale_point(c6, big_data, report):
    truth = json.loads(big_data.with_name("data.truth.json").read_text())
    active = [k - 1 for k in truth["active"]]
    lows = {}
    for algo, d in c6["dirs"].items():
        _, emp, _ = io.read_pips(d / "pips.csv")
        lows[algo] = float(emp[active].min())
    rec = json.loads((c6["dirs"]["eia"] / "summary.json").read_text())
    acc = rec["summary"]["mean_acceptance_rate"]
    ok = min(lows.values()) > 0.9 and 0.15 <= acc <= 0.35 and c6["seconds"] < 600
    report(6, ok, "min PIP of true variables " + ", ".join(f"{k} {v:.3f}" for k, v in lows.items())
           + f"; EIA mean acceptance {acc:.3f}; {c6['seconds']:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 7. efficiency ordering

def test_criterion_7_efficiency(c7, report):
    rec = json.loads((c7["root"] / "cmp" / "compare.json").read_text())
    med = rec["median_r_hat"]
    ok = med is not None and med > 5
    report(7, ok, f"median r_hat(ASI, ADS) = {med:.2f} over {rec['replicates']} replicates "
                  f"(+inf {rec['n_inf']}, undefined {rec['n_undefined']}); median times "
                  f"{rec['timings']['median_time_a']:.2f}s vs {rec['timings']['median_time_b']:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 8. determinism

def test_criterion_8_determinism(c2, c6, c7, big_data, tmp_path, report):
    mismatched = []

    def same(a, b, label):
        if (a / "pips.csv").read_bytes() != (b / "pips.csv").read_bytes():
            mismatched.append(f"{label} pips.csv")
        if _stripped(a / "summary.json") != _stripped(b / "summary.json"):
            mismatched.append(f"{label} summary.json")

    for name, extra in C2_SAMPLERS.items():
        seed = C2_SEEDS[0]
        again = _run_dir(c2["data"], tmp_path / f"c2-{name}",
                         [*extra, "--iters", C2_ITERS, "--burnin", C2_BURN, "--no-trace"], seed)
        same(c2["dirs"][name, seed], again, f"c2/{name}")
    for algo, d in c6["dirs"].items():
        same(d, _run_dir(big_data, tmp_path / f"c6-{algo}",
                         ["--algo", algo, *C6_ARGS, *C6_BUDGET[algo]], 0), f"c6/{algo}")
    # replicate 0 of each side of the comparison, run twice through 'run'
    for side, algo, it, burn, seed in (("a", "asi", 4000, 800, 0), ("b", "ads", 16000, 3200, 1)):
        extra = ["--algo", algo, "--chains", "5", "--iters", it, "--burnin", burn,
                 "--g", "9", "--h", "0.02", "--no-trace"]
        first = _run_dir(big_data, tmp_path / f"c7-{side}-1", extra, seed)
        same(first, _run_dir(big_data, tmp_path / f"c7-{side}-2", extra, seed), f"c7/{algo}")
    # and the comparison itself: everything except wall-clock quantities
    _cli("compare", "--data", big_data, *C7_ARGS, "--out", tmp_path / "cmp")

    def variances(path):
        return [r.split(",")[:4] for r in path.read_text().splitlines()]

    if variances(tmp_path / "cmp" / "rhat.csv") != variances(c7["root"] / "cmp" / "rhat.csv"):
        mismatched.append("c7 rhat.csv variances")
    ok = not mismatched
    report(8, ok, "byte-identical reruns" if ok else f"mismatch: {mismatched}")
    assert ok
