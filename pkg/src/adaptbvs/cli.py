"""Command-line entry point.

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import data_io as io
from . import idealized as ideal
from .diagnostics import (EmptyOutputError, pip_empirical, pip_rb, relative_efficiency,
                          run_summary)
from .model import ModelError, PriorSpec
from .rng import entropy_seed
from .samplers import ConfigError, PtConfig, RunConfig, run

log = logging.getLogger("adaptbvs")

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# parser


def _h_beta(s):
    try:
        a, b = (float(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {s!r}") from None
    return a, b


def _add_prior(p):
    g = p.add_argument_group("prior")
    g.add_argument("--g", type=float, default=9.0, help="slab variance multiplier (default 9)")
    h = g.add_mutually_exclusive_group()
    h.add_argument("--h", type=float, default=None,
                   help="prior inclusion probability (default min(10/p, 1/2))")
    h.add_argument("--h-beta", type=_h_beta, default=None, metavar="A,B",
                   help="Beta(A, B) prior on the inclusion probability")
    g.add_argument("--g-halfcauchy", type=float, default=None, metavar="SCALE",
                   help="treat g as random with a half-Cauchy(SCALE) prior")
    g.add_argument("--htilde-rule", choices=("exact", "plus_one"), default="exact",
                   help="inclusion odds in Rao-Blackwell rows under a Beta prior")


def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", required=False, help="CSV file, header first")
    g.add_argument("--response", default="y", help="name of the response column")
    g.add_argument("--standardize", action="store_true",
                   help="centre and scale covariates before the analysis")


def _add_sampler(p, algo=True):
    g = p.add_argument_group("sampler")
    if algo:
        g.add_argument("--algo", choices=("eia", "asi", "ads"), default="asi")
    g.add_argument("--chains", type=int, default=1, help="number of chains L")
    g.add_argument("--burnin", type=int, default=1000)
    g.add_argument("--iters", type=int, default=5000)
    g.add_argument("--thin", type=int, default=1)
    g.add_argument("--seed", type=int, default=None,
                   help="64-bit seed; drawn from OS entropy and recorded when omitted")
    g.add_argument("--pt", type=int, default=None, metavar="M",
                   help="parallel tempering with M temperature levels")
    g.add_argument("--pt-share", action="store_true",
                   help="share proposal parameters across temperature levels")
    g.add_argument("--pt-fixed", action="store_true", help="do not adapt the ladder")
    g.add_argument("--tau", type=float, default=0.234, help="ASI target acceptance rate")
    g.add_argument("--tau-l", type=float, default=0.01, help="EIA lower threshold")
    g.add_argument("--tau-u", type=float, default=0.1, help="EIA upper threshold")
    g.add_argument("--kappa", type=float, default=0.001)
    g.add_argument("--eps", type=float, default=None, help="parameter bound (default 0.1/p)")
    g.add_argument("--lam", type=float, default=0.55, help="step-size decay exponent")
    g.add_argument("--rb-burnin-only", action="store_true",
                   help="ASI: fold Rao-Blackwell rows into the estimates during burn-in only")
    g.add_argument("--freeze-after-burnin", action="store_true",
                   help="stop adapting after burn-in")
    g.add_argument("--init", choices=("empty", "prior"), default="empty")
    g.add_argument("--max-size", type=int, default=None)
    g.add_argument("--preset", choices=("big_data",), default=None)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key = value file; flags override it")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: available cores)")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(
        prog="adaptbvs", description="Adaptive MCMC for Bayesian variable selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic data set")
    s.add_argument("--n", type=int, required=False)
    s.add_argument("--p", type=int, required=False)
    s.add_argument("--rho", type=float, default=0.6)
    s.add_argument("--snr", type=float, default=2.0)
    s.add_argument("--sigma2", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default="data.csv", help="CSV path; truth goes to <stem>.truth.json")

    r = sub.add_parser("run", parents=[common], help="run one sampler")
    _add_data(r)
    _add_prior(r)
    _add_sampler(r)
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--no-trace", action="store_true", help="skip trace.csv")

    c = sub.add_parser("compare", parents=[common],
                       help="relative time-standardised efficiency of two samplers")
    _add_data(c)
    _add_prior(c)
    _add_sampler(c, algo=False)
    c.add_argument("--algo-a", choices=("eia", "asi", "ads"), default="asi")
    c.add_argument("--algo-b", choices=("eia", "asi", "ads"), default="ads")
    c.add_argument("--replicates", type=int, default=20)
    c.add_argument("--budget", choices=("time", "iters"), default="time")
    c.add_argument("--seconds", type=float, default=10.0,
                   help="wall-clock budget per run when --budget time")
    c.add_argument("--iters-b", type=int, default=None,
                   help="iterations for sampler B when --budget iters (default --iters)")
    c.add_argument("--burnin-b", type=int, default=None)
    c.add_argument("--estimator", choices=("empirical", "rb"), default="empirical")
    c.add_argument("--out", default=None, help="directory for rhat.csv and compare.json")

    e = sub.add_parser("enumerate", parents=[common], help="exact posterior for p <= 20")
    _add_data(e)
    _add_prior(e)
    e.add_argument("--out", default=None, help="directory for models.csv and pips.csv")

    i = sub.add_parser("idealized-check", parents=[common],
                       help="closed-form efficiency measures against simulation")
    i.add_argument("--p", type=int, default=5)
    i.add_argument("--variant", choices=("independent", "rw", "both"), default="both")
    i.add_argument("--steps", type=int, default=100_000)
    i.add_argument("--seed", type=int, default=0)
    return parser


def _subparser(parser, name):
    for act in parser._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices[name]
    raise KeyError(name)


def _apply_config_file(parser, argv):
    """Re-parse with defaults taken from --config, so explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = io.read_config(args.config)
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}") from None
    sp = _subparser(parser, args.command)
    by_dest = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in cfg.items():
        act = by_dest.get(key)
        if act is None or key in ("config", "help"):
            raise UsageError(f"{args.config}: unknown key {key!r}")
        if isinstance(act, argparse._StoreTrueAction):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{args.config}: {key} expects true or false, got {raw!r}")
            defaults[key] = low in ("true", "1", "yes")
        else:
            try:
                defaults[key] = act.type(raw) if act.type else raw
            except (ValueError, argparse.ArgumentTypeError) as err:
                raise UsageError(f"{args.config}: bad value for {key}: {err}") from None
            if act.choices is not None and defaults[key] not in act.choices:
                raise UsageError(f"{args.config}: {key} must be one of {list(act.choices)}")
    sp.set_defaults(**defaults)
    for key in defaults:
        # a required flag satisfied by the file is no longer required
        by_dest[key].required = False
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers


def _threads(args):
    n = args.threads if args.threads else (os.cpu_count() or 1)
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _load(args):
    _need(args, "data")
    return io.load_csv(args.data, response=args.response, standardize=args.standardize)


def _prior(args, p):
    h = args.h
    if h is None and args.h_beta is None:
        h = min(10.0 / p, 0.5)
    return PriorSpec(g=args.g, h=h, h_beta=args.h_beta, g_halfcauchy_scale=args.g_halfcauchy,
                     htilde_rule=args.htilde_rule)


def _run_config(args, algo, seed, n_iters=None, burn_in=None):
    pt = None
    if args.pt is not None:
        if args.pt < 1:
            raise UsageError("--pt needs at least one level")
        pt = PtConfig(m=args.pt, adapt=not args.pt_fixed, share_params=args.pt_share)
    return RunConfig(
        n_chains=args.chains, burn_in=args.burnin if burn_in is None else burn_in,
        n_iters=args.iters if n_iters is None else n_iters, thin=args.thin, seed=seed,
        algorithm=algo, pt=pt, eps=args.eps, tau_l=args.tau_l, tau_u=args.tau_u,
        tau=args.tau, kappa=args.kappa, lam=args.lam,
        adapt_after_burnin=not args.freeze_after_burnin,
        rb_burnin_only=True if args.rb_burnin_only else None, init=args.init,
        max_size=args.max_size, preset=args.preset)


def _pip_pair(out):
    emp = pip_empirical(out) if out.n_samples else None
    rb = None
    if out.rb_means is not None and np.all(out.rb_counts > 0):
        rb = pip_rb(out)
    return emp, rb


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    _need(args, "n", "p")
    seed = entropy_seed() if args.seed is None else args.seed
    spec = io.SynthSpec(n=args.n, p=args.p, rho=args.rho, snr=args.snr, sigma2=args.sigma2,
                        seed=seed)
    ds, truth = io.generate_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_dataset_csv(out, ds)
    truth_path = out.with_name(out.stem + ".truth.json")
    io.write_truth(truth_path, truth)
    print(f"wrote {out} ({ds.n} rows, {ds.p + 1} columns) and {truth_path}; seed {seed}")
    return EXIT_OK


def cmd_run(args):
    ds = _load(args)
    prior = _prior(args, ds.p)
    seed = entropy_seed() if args.seed is None else args.seed
    cfg = _run_config(args, args.algo, seed)
    out = run(ds, prior, cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = run_summary(out)
    emp, rb = (None, None)
    if out.n_samples:
        emp, rb = _pip_pair(out)
        io.write_pips(outdir / "pips.csv", ds.names, emp, rb)
        if not args.no_trace:
            io.write_trace(outdir / "trace.csv", out)
    meta = out.meta
    extra = {"defaults": meta["defaults"], "prior": meta["prior"],
             "data": {"n": ds.n, "p": ds.p, "source": str(args.data),
                      "standardized": bool(args.standardize)},
             "max_size": meta["max_size"], "final": _final_params(out)}
    io.write_summary(outdir / "summary.json", summary, meta["config"], meta["seed"], extra)
    print(f"{args.algo}: {summary['n_iters']} iterations x {summary['n_chains']} chains, "
          f"seed {meta['seed']}, results in {outdir}")
    if summary["mean_acceptance_rate"] is not None:
        print(f"mean acceptance {summary['mean_acceptance_rate']:.3f}, "
              f"mean model size {summary['mean_model_size']:.2f}")
    if out.counters.get("numerical_errors"):
        log.warning("%d moves were rejected after numerical failures",
                    out.counters["numerical_errors"])
    return EXIT_OK


def _final_params(out):
    fp = out.final_params
    d = {}
    if "zeta" in fp:
        d["zeta"] = fp["zeta"]
    if "temps" in fp:
        d["temps"] = fp["temps"]
    return d


def _pilot_iters(ds, prior, cfg, seconds):
    """Iteration cap for a time-budgeted run, from a short timed pilot."""
    pilot = run(ds, prior, replace(cfg, burn_in=0, n_iters=200, seed=0, time_budget=None))
    per = max(pilot.timings["total_seconds"], 1e-9) / 200
    return max(10, int(math.ceil(1.5 * seconds / per)))


def cmd_compare(args):
    if args.replicates < 2:
        raise UsageError("--replicates must be at least 2 (the variance needs two runs)")
    ds = _load(args)
    prior = _prior(args, ds.p)
    seed = entropy_seed() if args.seed is None else args.seed
    jobs = []
    for side, algo in (("a", args.algo_a), ("b", args.algo_b)):
        if args.budget == "iters":
            iters = args.iters if side == "a" or args.iters_b is None else args.iters_b
            burn = args.burnin if side == "a" or args.burnin_b is None else args.burnin_b
            base = _run_config(args, algo, 0, n_iters=iters, burn_in=burn)
        else:
            base = _run_config(args, algo, 0)
            cap = _pilot_iters(ds, prior, base, args.seconds)
            frac = base.burn_in / max(1, base.burn_in + base.n_iters)
            burn = int(frac * cap)
            base = replace(base, burn_in=burn, n_iters=cap - burn, time_budget=args.seconds)
        for k in range(args.replicates):
            # replicate k of side a uses seed + 2k, side b seed + 2k + 1
            s = (seed + 2 * k + (side == "b")) % 2**64
            jobs.append((side, k, replace(base, seed=s)))

    def one(job):
        side, k, cfg = job
        out = run(ds, prior, cfg)
        emp, rb = _pip_pair(out)
        est = rb if args.estimator == "rb" else emp
        if est is None:
            raise EmptyOutputError(f"replicate {k} of sampler {side.upper()} produced no "
                                   f"{args.estimator} estimate")
        return side, k, est, out.timings["total_seconds"]

    with ThreadPoolExecutor(max_workers=_threads(args)) as ex:
        results = list(ex.map(one, jobs))
    pa = np.array([r[2] for r in results if r[0] == "a"])
    ta = [r[3] for r in results if r[0] == "a"]
    pb = np.array([r[2] for r in results if r[0] == "b"])
    tb = [r[3] for r in results if r[0] == "b"]
    rep = relative_efficiency(pa, ta, pb, tb)
    print(f"r_hat({args.algo_a.upper()}, {args.algo_b.upper()}) over {args.replicates} "
          f"replicates, budget={args.budget}, estimator={args.estimator}")
    print(f"median run time: A {rep.time_a:.4g}s, B {rep.time_b:.4g}s")
    print(f"median r_hat: {rep.median:.4g}  (+inf: {rep.n_inf}, undefined: {rep.n_undefined})")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "rhat.csv", "w") as fh:
            fh.write("variable_index,variable_name,var_a,var_b,r_hat\n")
            va = pa.var(axis=0, ddof=1)
            vb = pb.var(axis=0, ddof=1)
            for j, name in enumerate(ds.names):
                r = rep.ratios[j]
                rs = "" if np.isnan(r) else ("inf" if np.isinf(r) else io.fmt(r))
                fh.write(f"{j + 1},{name},{io.fmt(va[j])},{io.fmt(vb[j])},{rs}\n")
        rec = {"algo_a": args.algo_a, "algo_b": args.algo_b, "replicates": args.replicates,
               "budget": args.budget, "estimator": args.estimator, "seed": seed,
               "median_r_hat": rep.median, "n_inf": rep.n_inf,
               "n_undefined": rep.n_undefined,
               "timings": {"median_time_a": rep.time_a, "median_time_b": rep.time_b},
               "version": __version__}
        with open(outdir / "compare.json", "w") as fh:
            json.dump(io._jsonable(rec), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_enumerate(args):
    ds = _load(args)
    prior = _prior(args, ds.p)
    res = ideal.enumerate_posterior(ds, prior)
    if res.n_singular:
        log.warning("%d models were singular and given probability zero", res.n_singular)
    if ds.p <= 6:
        print("model  probability")
        for bits, pr in res.model_table():
            print("".join(str(b) for b in bits), f" {pr:.6g}")
    print("variable  pip")
    for name, v in zip(ds.names, res.pips):
        print(f"{name}  {v:.6g}")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "pips.csv", "w") as fh:
            fh.write("variable_index,variable_name,pip_exact\n")
            for j, (name, v) in enumerate(zip(ds.names, res.pips)):
                fh.write(f"{j + 1},{name},{io.fmt(v)}\n")
        with open(outdir / "models.csv", "w") as fh:
            fh.write("model,probability\n")
            for bits, pr in res.model_table():
                fh.write("".join(str(b) for b in bits) + f",{io.fmt(pr)}\n")
    return EXIT_OK


def cmd_idealized_check(args):
    if args.p < 1:
        raise UsageError("--p must be >= 1")
    if args.steps < 100:
        raise UsageError("--steps must be >= 100")
    variants = {"both": ("independent", "random_walk"), "rw": ("random_walk",),
                "independent": ("independent",)}[args.variant]
    ok = True
    print(f"{'quantity':<22}{'variant':<14}{'closed form':>14}{'estimate':>14}{'3 SE':>12}  result")
    for v in variants:
        for row in ideal.idealized_check(args.p, v, n_steps=args.steps, seed=args.seed):
            ok &= row.passed
            print(f"{row.quantity:<22}{v:<14}{row.closed_form:>14.6g}{row.estimate:>14.6g}"
                  f"{3 * row.se:>12.3g}  {'pass' if row.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "compare": cmd_compare,
            "enumerate": cmd_enumerate, "idealized-check": cmd_idealized_check}


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config_file(parser, sys.argv[1:] if argv is None else argv)
    except UsageError as err:
        print(f"adaptbvs: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:
        return int(err.code) if err.code is not None else EXIT_OK
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, io.DataFormatError, FileNotFoundError) as err:
        print(f"adaptbvs: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, ArithmeticError, EmptyOutputError) as err:
        print(f"adaptbvs: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        print(f"adaptbvs: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
