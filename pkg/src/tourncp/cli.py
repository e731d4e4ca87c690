"""Command-line experiment runner.

Subcommands::

    tourncp simulate        coverage / length sweep, one CSV row per trial
    tourncp stability       (nu, epsilon) stability curves
    tourncp demo-rejection  shared rejection sampler on a small instance

CSV bodies depend only on the flags and ``--seed``; run-varying information
(timestamps, timings) goes to the manifest written next to ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional

import numpy as np

from . import __version__, kernels
from .bayes import (BayesConfig, LikelihoodFloorViolation, ProposalBudgetExhausted,
                    conjugate_posterior, energy_two_sample_test, region_floor,
                    sample_posterior, shared_rejection_loo_draws, toy_rejection_preset)
from .conformal import DEFAULT_EVALUATOR, EVALUATORS, EngineSpec, build_games, LikelihoodGames
from .models import SimConfig, generate_trial
from .scores import ScoreFamily
from .seeding import int_seed
from .stability import trial_approx_deltas, trial_tournament_deltas, stability_curve, _indices_for

METHODS = ("delete", "round", "onestep", "bayes")
VARIANTS = ("approx", "tournament")
_KIND = {"delete": "deletion", "round": "rounding", "onestep": "one-step", "bayes": "bayes-ppd"}
_VARIANT = {"approx": "approximate", "tournament": "tournament"}

SIM_HEADER = ["method", "variant", "inflation", "n", "p", "trial", "covered", "length",
              "wall_seconds"]
STAB_HEADER = ["method", "condition", "nu", "epsilon"]

PRESETS = {
    "fig1": dict(n=100, alpha=0.1, p_list=list(range(20, 101, 5)), trials=100),
    "fig2": dict(n=100, alpha=0.1, p_list=[20], trials=200),
}
DEFAULT_NUS = [round(0.01 * k, 2) for k in range(1, 51)]


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class TrialRecord:
    method: str
    variant: str
    inflation: float
    n: int
    p: int
    trial: int
    covered: int
    length: float
    wall_seconds: float

    def row(self, timing: bool) -> list[str]:
        return [self.method, self.variant, _fmt(self.inflation), str(self.n), str(self.p),
                str(self.trial), str(self.covered), _fmt(self.length),
                _fmt(self.wall_seconds) if timing else ""]


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".12g")


def _csv_list(cast):
    def parse(text: str):
        try:
            return [cast(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _p_list(text: str) -> list[int]:
    """``20,25,30`` or ``20:100:5`` (inclusive stop)."""
    try:
        if ":" in text:
            a, b, *c = (int(t) for t in text.split(":"))
            return list(range(a, b + 1, c[0] if c else 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _methods(text: str) -> list[str]:
    vals = [t.strip() for t in text.split(",") if t.strip()]
    for v in vals:
        if v not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {v!r}; choose from {METHODS}")
    return vals


def _variants(text: str) -> list[str]:
    vals = [t.strip() for t in text.split(",") if t.strip()]
    for v in vals:
        if v not in VARIANTS:
            raise argparse.ArgumentTypeError(f"unknown variant {v!r}; choose from {VARIANTS}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tourncp", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, methods_default):
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--method", type=_methods, default=None,
                        help=f"comma list from {','.join(METHODS)} (default: {methods_default})")
        sp.add_argument("--n", type=int)
        sp.add_argument("--p", type=int, help="single dimension")
        sp.add_argument("--p-list", type=_p_list, help="e.g. 20,25,30 or 20:100:5")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", help="CSV path (default: stdout)")
        sp.add_argument("--eta", type=float, default=10.0, help="one-step step size")
        sp.add_argument("--grid-size", type=int, default=10, help="rounding grid points")
        sp.add_argument("--K", type=int, default=100, help="posterior draws")
        sp.add_argument("--bayes-sampler", choices=("direct", "shared-rejection"),
                        default="direct")
        sp.add_argument("--noise-sd", type=float, default=1.0)
        sp.add_argument("--beta-norm", type=float, default=math.sqrt(10.0))

    sim = sub.add_parser("simulate", help="coverage and length sweep")
    common(sim, ",".join(METHODS))
    sim.add_argument("--variant", type=_variants, default=list(VARIANTS))
    sim.add_argument("--inflation", type=_csv_list(float), default=[0.0],
                     help="epsilon values (comma list); the set uses a 2*epsilon margin")
    sim.add_argument("--evaluator", choices=EVALUATORS,
                     help="force an evaluator; must suit every selected method")
    sim.add_argument("--timing", action="store_true",
                     help="fill wall_seconds (makes the CSV run-dependent)")

    stab = sub.add_parser("stability", help="stability curves")
    common(stab, ",".join(METHODS))
    stab.add_argument("--nu", type=_csv_list(float), default=DEFAULT_NUS)
    stab.add_argument("--indices", type=int, default=None,
                      help="training indices per trial for the tournament condition")

    demo = sub.add_parser("demo-rejection", help="shared rejection sampling demo")
    demo.add_argument("--k", type=int, default=2000)
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--floor-scale", type=float, default=1.0,
                      help="multiply the likelihood floor; values above 1 break it")
    demo.add_argument("--max-proposals", type=int, default=1_000_000)
    demo.add_argument("--resamples", type=int, default=1999)
    return parser


def _resolve(args, parser, command):
    preset = PRESETS.get(args.preset or "", {})
    n = args.n if args.n is not None else preset.get("n", 100)
    alpha = args.alpha if args.alpha is not None else preset.get("alpha", 0.1)
    trials = args.trials if args.trials is not None else preset.get("trials", 100)
    if args.p is not None and args.p_list is not None:
        parser.error("use either --p or --p-list")
    if args.p is not None:
        p_list = [args.p]
    elif args.p_list is not None:
        p_list = args.p_list
    else:
        p_list = preset.get("p_list", [20])
    methods = args.method or list(METHODS)
    if not 0 < alpha < 1:
        parser.error("--alpha must lie in (0, 1)")
    if n < 2 or trials < 1 or any(p < 1 for p in p_list) or args.workers < 1:
        parser.error("need n >= 2, trials >= 1, p >= 1 and workers >= 1")
    if args.K < 1 or args.grid_size < 2 or args.eta <= 0:
        parser.error("need K >= 1, grid-size >= 2 and eta > 0")
    return dict(n=n, alpha=alpha, trials=trials, p_list=list(p_list), methods=methods)


def _family(method: str, args) -> ScoreFamily:
    kind = _KIND[method]
    if kind == "deletion":
        return ScoreFamily.deletion()
    if kind == "rounding":
        return ScoreFamily.rounding(M=args["grid_size"])
    if kind == "one-step":
        return ScoreFamily.one_step(args["eta"])
    return ScoreFamily.bayes_ppd(BayesConfig(K=args["K"], sampler=args["bayes_sampler"]))


def _simulate_job(job) -> list[TrialRecord]:
    p, t, opts = job
    cfg = SimConfig(n=opts["n"], p=p, alpha=opts["alpha"], trials=opts["trials"],
                    beta_star_norm=opts["beta_norm"], noise_sd=opts["noise_sd"],
                    master_seed=opts["seed"])
    trial = generate_trial(cfg, t)
    cache: dict = {}
    out = []
    for method in opts["methods"]:
        fam = _family(method, opts)
        for variant in opts["variants"]:
            for eps in opts["inflation"]:
                start = time.perf_counter()
                spec = EngineSpec(fam, _VARIANT[variant], eps, opts["evaluator"], cfg.alpha,
                                  seed=int_seed(opts["seed"], p, t, "bayes", variant))
                games = build_games(spec, trial.data, trial.test.x, cache)
                covered = int(games.accepts([trial.test.y])[0])
                if isinstance(games, LikelihoodGames):
                    length = games.estimate().length
                else:
                    length = games.prediction_set().length
                out.append(TrialRecord(method, variant, float(eps), cfg.n, p, t, covered,
                                       float(length), time.perf_counter() - start))
    return out


def _run_jobs(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (8 * workers))))


def run_simulate(argv: Optional[Iterable[str]] = None) -> list[TrialRecord]:
    """Parse ``simulate`` flags, run the sweep and write CSV; returns the records."""
    parser = build_parser()
    args = parser.parse_args(["simulate", *(argv or [])])
    return _simulate(args, parser)


def _simulate(args, parser) -> list[TrialRecord]:
    res = _resolve(args, parser, "simulate")
    if args.evaluator:
        bad = [m for m in res["methods"] if DEFAULT_EVALUATOR[_KIND[m]] != args.evaluator]
        if bad:
            parser.error(f"evaluator {args.evaluator} cannot be used with method(s) "
                         f"{','.join(bad)}")
    if any(e < 0 for e in args.inflation):
        parser.error("--inflation values must be nonnegative")
    opts = dict(res, variants=args.variant, inflation=args.inflation, evaluator=args.evaluator,
                seed=args.seed, eta=args.eta, grid_size=args.grid_size, K=args.K,
                bayes_sampler=args.bayes_sampler, noise_sd=args.noise_sd,
                beta_norm=args.beta_norm)
    jobs = [(p, t, opts) for p in res["p_list"] for t in range(res["trials"])]
    started = time.time()
    records = [r for batch in _run_jobs(_simulate_job, jobs, args.workers) for r in batch]
    m_ord = {m: k for k, m in enumerate(METHODS)}
    v_ord = {v: k for k, v in enumerate(VARIANTS)}
    records.sort(key=lambda r: (m_ord[r.method], v_ord[r.variant], r.inflation, r.p, r.trial))
    body = io.StringIO()
    w = csv.writer(body, lineterminator="\n")
    w.writerow(SIM_HEADER)
    for r in records:
        w.writerow(r.row(args.timing))
    _emit(body.getvalue(), args, "simulate", opts, started)
    for line in summarize(records):
        print(line, file=sys.stderr)
    return records


def summarize(records: list[TrialRecord]) -> list[str]:
    """Mean coverage with binomial standard error and mean finite length per cell."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.method, r.variant, r.inflation, r.p), []).append(r)
    lines = []
    for (m, v, e, p), rs in groups.items():
        cov = np.mean([r.covered for r in rs])
        se = math.sqrt(max(cov * (1 - cov), 0.0) / len(rs))
        lengths = [r.length for r in rs if math.isfinite(r.length)]
        skipped = len(rs) - len(lengths)
        mean_len = float(np.mean(lengths)) if lengths else math.nan
        note = f" (skipped {skipped} unbounded)" if skipped else ""
        lines.append(f"{m:8s} {v:10s} eps={e:<5g} p={p:<4d} coverage={cov:.3f} "
                     f"(se {se:.3f}) length={mean_len:.4f}{note}")
    return lines


def _emit(text: str, args, command: str, params: dict, started: float) -> None:
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
        manifest = {
            "command": command,
            "master_seed": args.seed,
            "version": __version__,
            "kernel_backend": kernels.BACKEND,
            "parameters": params,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "elapsed_seconds": round(time.time() - started, 3),
        }
        with open(args.out + ".manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    else:
        sys.stdout.write(text)


def _stability_job(job):
    p, t, opts = job
    cfg = SimConfig(n=opts["n"], p=p, alpha=opts["alpha"], trials=opts["trials"],
                    beta_star_norm=opts["beta_norm"], noise_sd=opts["noise_sd"],
                    master_seed=opts["seed"])
    trial = generate_trial(cfg, t)
    out = {}
    for method in opts["methods"]:
        fam = _family(method, opts)
        bseed = int_seed(opts["seed"], p, t, "stability-bayes")
        idx = _indices_for(fam, cfg, t, opts["indices"])
        tour = trial_tournament_deltas(fam, trial, idx, bseed)
        i = int(np.random.default_rng(int_seed(opts["seed"], p, t, "train-index")).integers(cfg.n))
        test_d, train_d = trial_approx_deltas(fam, trial, i, bseed)
        out[method] = (tour, test_d, train_d)
    return out


def run_stability(argv: Optional[Iterable[str]] = None):
    parser = build_parser()
    args = parser.parse_args(["stability", *(argv or [])])
    return _stability(args, parser)


def _stability(args, parser):
    res = _resolve(args, parser, "stability")
    if len(res["p_list"]) != 1:
        parser.error("stability takes a single --p")
    if any(not 0 <= nu <= 1 for nu in args.nu):
        parser.error("--nu values must lie in [0, 1]")
    if args.indices is not None and not 1 <= args.indices <= res["n"]:
        parser.error("--indices must lie in [1, n]")
    opts = dict(res, seed=args.seed, eta=args.eta, grid_size=args.grid_size, K=args.K,
                bayes_sampler=args.bayes_sampler, noise_sd=args.noise_sd,
                beta_norm=args.beta_norm, indices=args.indices)
    p = res["p_list"][0]
    started = time.time()
    per_trial = _run_jobs(_stability_job, [(p, t, opts) for t in range(res["trials"])],
                          args.workers)
    rows = []
    curves = {}
    for method in res["methods"]:
        tour = np.concatenate([pt[method][0] for pt in per_trial])
        test_d = np.array([pt[method][1] for pt in per_trial])
        train_d = np.array([pt[method][2] for pt in per_trial])
        for cond, d in (("tournament", tour), ("approx-test", test_d), ("approx-train", train_d)):
            curve = stability_curve(d, cond)
            curves[(method, cond)] = curve
            for nu in args.nu:
                rows.append([method, cond, _fmt(nu), _fmt(curve.epsilon(nu))])
    body = io.StringIO()
    w = csv.writer(body, lineterminator="\n")
    w.writerow(STAB_HEADER)
    w.writerows(rows)
    opts["pooling"] = "tournament deltas pooled over (trial, index) pairs"
    _emit(body.getvalue(), args, "stability", opts, started)
    return curves


def run_demo_rejection(argv: Optional[Iterable[str]] = None, out=None) -> dict:
    parser = build_parser()
    args = parser.parse_args(["demo-rejection", *(argv or [])])
    return _demo(args, parser, out or sys.stdout)


def _demo(args, parser, out) -> dict:
    if args.k < 1 or args.floor_scale <= 0 or args.max_proposals < 1:
        parser.error("need --k >= 1, --floor-scale > 0 and --max-proposals >= 1")
    preset = toy_rejection_preset()
    data, prior = preset.data, preset.prior
    post = conjugate_posterior(prior, data)
    floor = region_floor(post, data, preset.region_radius, prior.sigma_lik)
    if args.floor_scale != 1.0:
        floor = floor.scaled(args.floor_scale)
    res = shared_rejection_loo_draws(data, prior, args.k, floor, args.seed,
                                     args.max_proposals, preset.region_radius)
    print(f"shared rejection sampling: n={data.n} p={data.p} K={args.k} "
          f"proposals={res.proposals}", file=out)
    print("  i  accept_rate  expected_rate  mean      exact_mean  var       exact_var  "
          "energy_p", file=out)
    report = {"proposals": res.proposals, "rows": []}
    for i, draws in enumerate(res.draws):
        loo = conjugate_posterior(prior, data.drop(i))
        th = draws.thetas[:, 0]
        exact = sample_posterior(loo, args.k, int_seed(args.seed, "demo-reference", i))
        if args.k >= 2:
            _, pval = energy_two_sample_test(th, exact.thetas[:, 0], args.resamples,
                                             int_seed(args.seed, "demo-perm", i) % (2**32))
            var = float(th.var(ddof=1))
        else:
            pval, var = math.nan, math.nan
        row = dict(i=i, accept_rate=float(res.acceptance_rates[i]),
                   expected_rate=float(res.mean_ratio[i]), mean=float(th.mean()),
                   exact_mean=float(loo.mu_n[0]), var=var,
                   exact_var=float(loo.Sigma_n[0, 0]), energy_p=pval, accepted=draws.K)
        report["rows"].append(row)
        print(f"{i:3d}  {row['accept_rate']:.4f}       {row['expected_rate']:.4f}         "
              f"{row['mean']:+.4f}   {row['exact_mean']:+.4f}     {var:.4f}    "
              f"{row['exact_var']:.4f}     {pval:.4f}", file=out)
    return report


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            _simulate(args, parser)
        elif args.command == "stability":
            _stability(args, parser)
        else:
            _demo(args, parser, sys.stdout)
    except (LikelihoodFloorViolation, ProposalBudgetExhausted, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
