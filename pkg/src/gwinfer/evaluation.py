"""Metrics, baseline estimators, named distributions and the experiment harness.

An experiment draws ``n_trees`` trees per distribution, ``n_samples``
samples per (tree, p) pair, and treats each sample as an independent
estimation problem ("dataset").  Results go to an append-only CSV so long
runs can resume.
"""

from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from .errors import EmptySampleError, GWError
from .exact import OptimizerConfig, estimate_exact
from .mcmc import estimate_approximate
from .sampling import draw_sample
from .tree import OffspringDistribution, Tree, gw_generate

__all__ = [
    "kl_divergence_discounted",
    "mse_per_parameter",
    "squared_errors",
    "empirical_estimator",
    "truncated_poisson",
    "zipf",
    "named_distribution",
    "ExperimentSpec",
    "ExperimentResult",
    "generate_datasets",
    "run_experiment",
    "SCHEMA_VERSION",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
THETA1 = (0.2, 0.5, 0.3)


# --------------------------------------------------------------------------
# metrics


def kl_divergence_discounted(theta, theta_hat, eps: float = 1e-7) -> float:
    """KL divergence ``D(theta || theta_hat)`` with absolute discounting.

    When ``theta_hat`` has zero entries, a total mass ``eps`` is spread evenly
    over them and taken evenly from the non-zero entries.
    """
    t = np.asarray(getattr(theta, "probs", theta), dtype=float)
    h = np.asarray(getattr(theta_hat, "probs", theta_hat), dtype=float).copy()
    if t.shape != h.shape:
        raise ValueError("distributions differ in length")
    zero = h <= 0.0
    if zero.any():
        if zero.all():
            raise ValueError("estimate has no mass")
        h[zero] = eps / zero.sum()
        h[~zero] -= eps / (~zero).sum()
    support = t > 0
    return float(max(0.0, np.sum(t[support] * (np.log(t[support]) - np.log(h[support])))))


def squared_errors(theta_hat, theta) -> np.ndarray:
    a = np.asarray(getattr(theta_hat, "probs", theta_hat), dtype=float)
    b = np.asarray(getattr(theta, "probs", theta), dtype=float)
    return (a - b) ** 2


def mse_per_parameter(estimates, theta) -> np.ndarray:
    """Mean over estimates of ``(theta_hat_i - theta_i)**2`` for each i."""
    if len(estimates) == 0:
        raise ValueError("no estimates")
    return np.mean([squared_errors(e, theta) for e in estimates], axis=0)


# --------------------------------------------------------------------------
# baseline and distributions


def empirical_estimator(sample: Tree, top_k: int, W: int) -> OffspringDistribution:
    """Histogram of observed child counts at depths ``0..top_k-1``."""
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    hist = np.zeros(W)
    for v in range(sample.n_nodes):
        d = len(sample.children[v])
        if d and sample.depth[v] < top_k:
            if d > W:
                raise ValueError(f"sample node has {d} children, more than W={W}")
            hist[d - 1] += 1
    if hist.sum() == 0:
        raise ValueError(f"no internal sample nodes in the top {top_k} levels; increase top_k")
    return OffspringDistribution(hist / hist.sum())


def truncated_poisson(lam: float, W: int) -> OffspringDistribution:
    """Poisson(lam) restricted to ``{1..W}`` and renormalized."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    pmf = poisson.pmf(np.arange(1, W + 1), lam)
    return OffspringDistribution(pmf, normalize=True)


def zipf(alpha: float, W: int) -> OffspringDistribution:
    """Mass proportional to ``i**-alpha`` on ``{1..W}``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return OffspringDistribution(np.arange(1, W + 1, dtype=float) ** -alpha, normalize=True)


def named_distribution(dist_id: str, W: int, params: dict | None = None) -> OffspringDistribution:
    params = params or {}
    if dist_id == "theta1":
        if W != 3:
            raise ValueError("theta1 is defined for W=3")
        return OffspringDistribution(THETA1)
    if dist_id == "trunc-poisson":
        return truncated_poisson(params.get("lambda", 3.0), W)
    if dist_id == "zipf":
        return zipf(params.get("alpha", 1.132), W)
    if dist_id == "custom":
        return OffspringDistribution(params["theta"])
    raise ValueError(f"unknown distribution id {dist_id!r}")


# --------------------------------------------------------------------------
# experiment harness


@dataclass
class ExperimentSpec:
    """One experiment grid.

    ``L`` is the number of offspring generations, so leaves sit at depth ``L``
    and the tree has ``L + 1`` levels counting the root.
    """

    distributions: tuple = ("theta1",)
    W: int = 3
    L: int = 3
    p_grid: tuple = (0.1, 0.2, 0.5)
    n_trees: int = 10
    n_samples: int = 10
    estimators: tuple = ("exact", "approximate")
    master_seed: int = 0
    dist_params: dict = field(default_factory=dict)
    theta0: str = "auto"
    pilot: int = 10_000
    min_mcmc_samples: int = 0
    max_mcmc_samples: int | None = None
    optimizer: dict = field(default_factory=dict)
    catalog_dir: str | None = None
    n_jobs: int = 1

    def __post_init__(self):
        self.distributions = tuple(self.distributions)
        self.p_grid = tuple(float(p) for p in self.p_grid)
        self.estimators = tuple(self.estimators)
        if not self.distributions or not self.p_grid or not self.estimators:
            raise ValueError("distributions, p_grid and estimators must be non-empty")
        if self.n_trees < 1 or self.n_samples < 1:
            raise ValueError("n_trees and n_samples must be positive")
        for name in self.estimators:
            if name not in ("exact", "approximate") and not name.startswith("empirical-"):
                raise ValueError(f"unknown estimator {name!r}")

    @property
    def n_datasets(self) -> int:
        return len(self.distributions) * self.n_trees * len(self.p_grid) * self.n_samples

    def theta(self, dist_id: str) -> OffspringDistribution:
        return named_distribution(dist_id, self.W, self.dist_params.get(dist_id))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distributions"] = list(self.distributions)
        d["p_grid"] = list(self.p_grid)
        d["estimators"] = list(self.estimators)
        return d


def derive_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1)[0])


@dataclass
class Dataset:
    dataset_id: str
    dist_id: str
    tree_idx: int
    p: float
    sample_idx: int
    sample: object
    seed: int
    empty_draws: int


def generate_datasets(spec: ExperimentSpec):
    """Yield every dataset of the grid in a fixed order."""
    for di, dist_id in enumerate(spec.distributions):
        theta = spec.theta(dist_id)
        for ti in range(spec.n_trees):
            tree = gw_generate(theta, spec.L, derive_seed(spec.master_seed, di, ti))
            for pi, p in enumerate(spec.p_grid):
                for si in range(spec.n_samples):
                    attempt = 0
                    while True:
                        seed = derive_seed(spec.master_seed, di, ti, pi + 1, si, attempt)
                        try:
                            sample = draw_sample(tree, p, seed)
                            break
                        except EmptySampleError:
                            attempt += 1
                            log.info("empty sample for %s tree %d p=%g sample %d; redrawing",
                                     dist_id, ti, p, si)
                    yield Dataset(f"{dist_id}-t{ti}-p{pi}-s{si}", dist_id, ti, p, si,
                                  sample, seed, attempt)


def _theta0_choice(spec: ExperimentSpec) -> str:
    if spec.theta0 != "auto":
        return spec.theta0
    return "uniform" if spec.W <= 3 else "binomial"


def run_estimator(name: str, sample, spec: ExperimentSpec, seed: int):
    """Return ``(theta_hat, meta)`` for one estimator on one sample."""
    if name == "exact":
        opt = OptimizerConfig(**{**spec.optimizer, "seed": seed})
        fit, table = estimate_exact(sample, spec.W, opt, spec.catalog_dir)
        return fit.theta, {"objective": fit.value, "n_terms": len(table)}
    if name == "approximate":
        opt = OptimizerConfig(**{**spec.optimizer, "seed": seed})
        res = estimate_approximate(
            sample, spec.W, theta0=_theta0_choice(spec), seed=seed, pilot=spec.pilot,
            min_samples=spec.min_mcmc_samples, max_samples=spec.max_mcmc_samples,
            optimizer=opt,
        )
        meta = {"objective": res.fit.value, "n_mcmc": res.n_samples,
                "burn_in": res.burn_in, "thin": res.thin,
                "acceptance": res.acceptance_rate}
        return res.theta, meta
    k = int(name.split("-", 1)[1])
    return empirical_estimator(sample, k, spec.W), {}


def _columns(W: int) -> list:
    return (["dataset_id", "dist_id", "tree_idx", "p", "sample_idx", "estimator",
             "theta_hat", "kl"] + [f"se_{i}" for i in range(1, W + 1)]
            + ["wall_ms", "seed", "status"])


def _solve(args):
    ds, name, spec, theta = args
    seed = derive_seed(spec.master_seed, 7919, zlib.crc32(name.encode()),
                       zlib.crc32(ds.dataset_id.encode()))
    t0 = time.perf_counter()
    row = {
        "dataset_id": ds.dataset_id, "dist_id": ds.dist_id, "tree_idx": ds.tree_idx,
        "p": ds.p, "sample_idx": ds.sample_idx, "estimator": name, "seed": seed,
    }
    try:
        est, _ = run_estimator(name, ds.sample, spec, seed)
        row["theta_hat"] = list(est.probs)
        row["kl"] = kl_divergence_discounted(theta, est)
        row["se"] = squared_errors(est, theta).tolist()
        row["status"] = "ok"
    except (GWError, ValueError, RuntimeError) as exc:
        row["theta_hat"] = []
        row["kl"] = math.nan
        row["se"] = [math.nan] * spec.W
        row["status"] = f"error: {exc}"
    row["wall_ms"] = (time.perf_counter() - t0) * 1e3
    return row


def _flatten(row: dict, W: int) -> list:
    return ([row["dataset_id"], row["dist_id"], row["tree_idx"], repr(row["p"]),
             row["sample_idx"], row["estimator"],
             ";".join(repr(x) for x in row["theta_hat"]), repr(row["kl"])]
            + [repr(x) for x in row["se"]]
            + [f"{row['wall_ms']:.1f}", row["seed"], row["status"]])


def _parse(rec: dict, W: int) -> dict:
    return {
        "dataset_id": rec["dataset_id"], "dist_id": rec["dist_id"],
        "tree_idx": int(rec["tree_idx"]), "p": float(rec["p"]),
        "sample_idx": int(rec["sample_idx"]), "estimator": rec["estimator"],
        "theta_hat": [float(x) for x in rec["theta_hat"].split(";")] if rec["theta_hat"] else [],
        "kl": float(rec["kl"]),
        "se": [float(rec[f"se_{i}"]) for i in range(1, W + 1)],
        "wall_ms": float(rec["wall_ms"]), "seed": int(rec["seed"]), "status": rec["status"],
    }


@dataclass
class ExperimentResult:
    W: int
    rows: list = field(default_factory=list)

    def select(self, dist_id=None, p=None, estimator=None, ok_only=True) -> list:
        out = []
        for r in self.rows:
            if dist_id is not None and r["dist_id"] != dist_id:
                continue
            if p is not None and not math.isclose(r["p"], p):
                continue
            if estimator is not None and r["estimator"] != estimator:
                continue
            if ok_only and r["status"] != "ok":
                continue
            out.append(r)
        return out

    def median_kl(self, dist_id, p, estimator) -> float:
        return float(np.median([r["kl"] for r in self.select(dist_id, p, estimator)]))

    def median_se(self, dist_id, p, estimator) -> np.ndarray:
        """Median over datasets of the squared error of each parameter."""
        return np.median([r["se"] for r in self.select(dist_id, p, estimator)], axis=0)

    def aggregate(self) -> list:
        """Five-number summaries of squared errors per (dist, p, estimator, parameter)."""
        keys = sorted({(r["dist_id"], r["p"], r["estimator"]) for r in self.rows})
        out = []
        for dist_id, p, est in keys:
            rows = self.select(dist_id, p, est)
            if not rows:
                continue
            se = np.array([r["se"] for r in rows])
            for i in range(self.W):
                q = np.quantile(se[:, i], [0.0, 0.25, 0.5, 0.75, 1.0])
                out.append({
                    "dist_id": dist_id, "p": p, "estimator": est, "parameter": i + 1,
                    "n": len(rows), "min": q[0], "q1": q[1], "median": q[2],
                    "q3": q[3], "max": q[4], "mean": float(se[:, i].mean()),
                })
        return out

    def write_aggregate(self, path) -> None:
        rows = self.aggregate()
        cols = ["dist_id", "p", "estimator", "parameter", "n", "min", "q1", "median",
                "q3", "max", "mean"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)

    @classmethod
    def read_csv(cls, path, W: int) -> "ExperimentResult":
        path = Path(path)
        rows = []
        if path.exists():
            with open(path, newline="") as fh:
                lines = [ln for ln in fh if not ln.startswith("#")]
            for rec in csv.DictReader(lines):
                rows.append(_parse(rec, W))
        return cls(W, rows)


def run_experiment(spec: ExperimentSpec, out_path=None, resume: bool = False,
                   progress=None) -> ExperimentResult:
    """Run every selected estimator on every dataset of ``spec``.

    With ``out_path`` rows are appended to a CSV as they finish; with
    ``resume`` rows already present for a (dataset, estimator) pair are kept
    and not recomputed.  Estimator failures become rows with an error status.
    """
    done = ExperimentResult(spec.W)
    if out_path is not None and resume:
        done = ExperimentResult.read_csv(out_path, spec.W)
    finished = {(r["dataset_id"], r["estimator"]) for r in done.rows}

    writer = fh = None
    if out_path is not None:
        out_path = Path(out_path)
        fresh = not out_path.exists() or not resume
        fh = open(out_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            fh.write(f"# schema_version={SCHEMA_VERSION}\n")
            writer.writerow(_columns(spec.W))
            fh.flush()

    thetas = {d: spec.theta(d) for d in spec.distributions}
    jobs = [
        (ds, name, spec, thetas[ds.dist_id])
        for ds in generate_datasets(spec)
        for name in spec.estimators
        if (ds.dataset_id, name) not in finished
    ]
    result = ExperimentResult(spec.W, list(done.rows))
    try:
        if spec.n_jobs > 1:
            with ProcessPoolExecutor(spec.n_jobs) as pool:
                rows = pool.map(_solve, jobs, chunksize=1)
                for row in rows:
                    _record(result, row, writer, fh, spec.W, progress)
        else:
            for job in jobs:
                _record(result, _solve(job), writer, fh, spec.W, progress)
    finally:
        if fh is not None:
            fh.close()
    return result


def _record(result, row, writer, fh, W, progress):
    result.rows.append(row)
    if writer is not None:
        writer.writerow(_flatten(row, W))
        fh.flush()
    if progress is not None:
        progress(row)
