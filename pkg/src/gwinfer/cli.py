"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 capacity exceeded, 4 inconsistent input.
The catalog cache directory defaults to ``$GWINFER_CATALOG_DIR``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .enumeration import DEFAULT_BUDGET, get_catalog, catalog_filename
from .errors import CapacityError, EmptySampleError, InconsistentSampleError, InsufficientPilotError
from .evaluation import ExperimentSpec, empirical_estimator, named_distribution, run_experiment
from .exact import OptimizerConfig, estimate_exact
from .io import read_tree, write_json
from .mcmc import estimate_approximate, write_trace_csv
from .sampling import draw_sample
from .tree import OffspringDistribution, SampleTree, gw_generate

EXIT_USAGE = 2
EXIT_CAPACITY = 3
EXIT_INCONSISTENT = 4

CATALOG_ENV = "GWINFER_CATALOG_DIR"

log = logging.getLogger("gwinfer")


class UsageError(Exception):
    pass


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}")


def _theta_from_args(args) -> OffspringDistribution:
    try:
        if args.theta:
            return OffspringDistribution(_floats(args.theta))
        if args.dist:
            if args.W is None and args.dist != "theta1":
                raise UsageError("--W is required with --dist")
            params = {}
            if args.alpha is not None:
                params["alpha"] = args.alpha
            if args.lam is not None:
                params["lambda"] = args.lam
            return named_distribution(args.dist, args.W or 3, params)
    except ValueError as exc:
        raise UsageError(f"invalid offspring distribution: {exc}")
    raise UsageError("give --theta or --dist")


def _emit(obj, out) -> None:
    text = write_json(obj, out)
    if out is None or out == "-":
        sys.stdout.write(text)


def cmd_generate(args) -> int:
    theta = _theta_from_args(args)
    if args.L < 1:
        raise UsageError("--L must be at least 1")
    tree = gw_generate(theta, args.L, args.seed)
    _emit(tree, args.out)
    return 0


def cmd_sample(args) -> int:
    tree = read_tree(args.tree)
    if not 0 < args.p <= 1:
        raise UsageError("--p must lie in (0, 1]")
    for attempt in range(args.retries + 1):
        seed = args.seed if attempt == 0 else [args.seed, attempt]
        try:
            sample = draw_sample(tree, args.p, seed)
            break
        except EmptySampleError:
            log.info("empty sample on attempt %d", attempt)
    else:
        print(f"error: empty sample after {args.retries + 1} attempts", file=sys.stderr)
        return EXIT_INCONSISTENT
    _emit(sample, args.out)
    return 0


def _optimizer(args) -> OptimizerConfig:
    return OptimizerConfig(starts=args.starts, box=args.box, maxiter=args.maxiter,
                           reltol=args.reltol, refine=args.refine, seed=args.seed)


def cmd_estimate(args) -> int:
    sample = read_tree(args.sample)
    if not isinstance(sample, SampleTree):
        raise UsageError("sample file has no 'p' field")
    W = args.W or sample.max_degree()
    out = {"method": args.method, "W": W, "L": sample.L, "p": sample.p}
    if args.method == "exact":
        fit, table = estimate_exact(sample, W, _optimizer(args), args.catalog_dir, args.budget)
        out.update(theta_hat=list(fit.theta.probs), objective=fit.value,
                   meta={"n_terms": len(table), "iterations": fit.n_iter,
                         "starts": args.starts})
    elif args.method == "mcmc":
        params = None
        if args.mcmc_params:
            vals = [int(x) for x in _floats(args.mcmc_params)]
            if len(vals) != 3:
                raise UsageError("--mcmc-params takes M,N,k")
            params = tuple(vals)
        theta0 = args.theta0
        if theta0 not in ("uniform", "binomial"):
            theta0 = OffspringDistribution(_floats(theta0))
        res = estimate_approximate(sample, W, theta0=theta0, seed=args.seed, pilot=args.pilot,
                                   min_samples=args.min_samples, max_samples=args.max_samples,
                                   mcmc_params=params, optimizer=_optimizer(args))
        diag = res.diagnostic
        out.update(theta_hat=list(res.theta.probs), objective=res.fit.value, meta={
            "theta0": list(res.theta0.probs),
            "samples_used": res.n_samples,
            "burn_in": res.burn_in,
            "thin": res.thin,
            "acceptance_rate": res.acceptance_rate,
            "raftery_lewis": None if diag is None else {
                "M": diag.burn_in, "N": diag.total, "k": diag.thin,
                "n_min": diag.n_min, "dependence_factor": diag.dependence_factor,
                "degenerate": diag.degenerate, "q": 0.025, "r": 0.005, "s": 0.95,
            },
        })
        if args.trace_csv:
            write_trace_csv(res.run, args.trace_csv, res.thin)
    else:
        est = empirical_estimator(sample, args.top_k, W)
        out.update(theta_hat=list(est.probs), objective=None, meta={"top_k": args.top_k})
    _emit(out, args.out)
    return 0


def cmd_experiment(args) -> int:
    with open(args.spec) as fh:
        data = json.load(fh)
    try:
        spec = ExperimentSpec(**data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid experiment spec: {exc}")
    if args.jobs:
        spec.n_jobs = args.jobs
    if spec.catalog_dir is None:
        spec.catalog_dir = args.catalog_dir

    def progress(row):
        log.info("%s %s kl=%.4g %s", row["dataset_id"], row["estimator"], row["kl"], row["status"])

    result = run_experiment(spec, args.out, resume=args.resume, progress=progress)
    if args.aggregate:
        result.write_aggregate(args.aggregate)
    return 0


def cmd_catalog(args) -> int:
    if args.catalog_dir is None:
        raise UsageError(f"set --catalog-dir or ${CATALOG_ENV}")
    cat = get_catalog(args.L, args.W, args.catalog_dir, args.budget)
    print(f"{os.path.join(args.catalog_dir, catalog_filename(args.L, args.W))}: {len(cat)} entries")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gwinfer", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_theta(p):
        p.add_argument("--theta", help="comma-separated theta_1..theta_W")
        p.add_argument("--dist", choices=["theta1", "trunc-poisson", "zipf"])
        p.add_argument("--W", type=int)
        p.add_argument("--alpha", type=float, help="Zipf exponent")
        p.add_argument("--lambda", dest="lam", type=float, help="Poisson rate")

    def add_catalog(p):
        p.add_argument("--catalog-dir", default=os.environ.get(CATALOG_ENV))
        p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)

    g = sub.add_parser("generate", help="simulate a GW tree")
    add_theta(g)
    g.add_argument("--L", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sample", help="observe a tree's nodes with probability p")
    s.add_argument("--tree", required=True)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--retries", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("estimate", help="estimate theta from a sample")
    e.add_argument("--sample", required=True)
    e.add_argument("--method", choices=["exact", "mcmc", "empirical"], required=True)
    e.add_argument("--W", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--starts", type=int, default=10_000)
    e.add_argument("--box", type=float, default=10.0)
    e.add_argument("--maxiter", type=int, default=100)
    e.add_argument("--reltol", type=float, default=1e-8)
    e.add_argument("--refine", type=int, default=5)
    e.add_argument("--top-k", type=int, default=1)
    e.add_argument("--theta0", default="uniform",
                   help="uniform, binomial or comma-separated probabilities")
    e.add_argument("--pilot", type=int, default=10_000)
    e.add_argument("--min-samples", type=int, default=0)
    e.add_argument("--max-samples", type=int)
    e.add_argument("--mcmc-params", help="M,N,k to skip the pilot run")
    e.add_argument("--trace-csv")
    e.add_argument("--out")
    add_catalog(e)
    e.set_defaults(func=cmd_estimate)

    x = sub.add_parser("experiment", help="run an experiment grid from a JSON spec")
    x.add_argument("--spec", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--aggregate")
    x.add_argument("--resume", action="store_true")
    x.add_argument("--jobs", type=int)
    x.add_argument("--catalog-dir", default=os.environ.get(CATALOG_ENV))
    x.set_defaults(func=cmd_experiment)

    c = sub.add_parser("catalog", help="pre-build a non-isomorphic tree catalog")
    c.add_argument("--L", type=int, required=True)
    c.add_argument("--W", type=int, required=True)
    add_catalog(c)
    c.set_defaults(func=cmd_catalog)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (InconsistentSampleError, EmptySampleError, InsufficientPilotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
