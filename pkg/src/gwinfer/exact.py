"""Exact likelihood over the non-isomorphic catalog and its maximization.

The likelihood of a sample as a function of the offspring distribution is a
sum over catalog trees of ``m_i P(S|G_i) P(G_i|theta)``.  Trees sharing an
offspring census share ``P(G|theta)``, so terms are merged by census into a
table of ``(log c_j, x_j, y_j)`` rows.  Maximization uses the softmax
parameterization ``theta_i = exp(alpha_i) / Z`` with ``alpha_W`` pinned to 1.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .enumeration import NonIsoCatalog, class_multiplicity, get_catalog, DEFAULT_BUDGET
from .errors import InconsistentSampleError
from .sampling import LEAF_CLASS, SampleIndex, log_sample_factor, mapping_count
from .tree import OffspringDistribution, SampleTree, as_rng, offspring_census

__all__ = [
    "LikelihoodTermTable",
    "OptimizerConfig",
    "MaximizeResult",
    "build_term_table",
    "table_from_terms",
    "alpha_to_theta",
    "theta_to_alpha",
    "objective",
    "objective_batch",
    "gradient",
    "log_likelihood_theta",
    "maximize",
    "estimate_exact",
]

log = logging.getLogger(__name__)

ALPHA_PIN = 1.0


@dataclass(frozen=True)
class LikelihoodTermTable:
    """Grouped likelihood terms ``sum_j c_j prod_i theta_i**x_ji``.

    ``log_coef[j] = log c_j``; ``X[j]`` is the census row and ``y = X.sum(1)``.
    """

    log_coef: np.ndarray
    X: np.ndarray
    L: int
    W: int
    p: float | None = None

    @property
    def y(self) -> np.ndarray:
        return self.X.sum(axis=1)

    def __len__(self) -> int:
        return len(self.log_coef)


def _log_sum(values) -> float:
    """Max-shifted log-sum-exp with compensated summation of the exponentials."""
    values = [v for v in values if v != -math.inf]
    if not values:
        return -math.inf
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def table_from_terms(terms, L: int, W: int, p: float | None = None) -> LikelihoodTermTable:
    """Merge ``(census, log_term)`` pairs into a table; ``-inf`` terms are dropped."""
    grouped = defaultdict(list)
    for census, lt in terms:
        if lt != -math.inf:
            grouped[tuple(census)].append(lt)
    if not grouped:
        raise InconsistentSampleError(
            f"sample inconsistent with (L={L}, W={W}): no tree has positive likelihood"
        )
    keys = sorted(grouped)
    X = np.array(keys, dtype=np.int64).reshape(len(keys), W)
    log_coef = np.array([_log_sum(grouped[k]) for k in keys])
    return LikelihoodTermTable(log_coef, X, L, W, p)


def _catalog_counts(index: SampleIndex, catalog: NonIsoCatalog) -> list:
    """Embedding-count tables for every catalog entry at every height."""
    L = catalog.L
    per_level = [[{}]]
    for h in range(1, L + 1):
        depth = L - h
        prev = per_level[-1]
        if depth >= len(index.at_depth) or not index.at_depth[depth]:
            per_level.append([{}] * len(catalog.levels[h]))
            continue
        per_level.append([
            index.counts_for(depth, [prev[c] for c in e.children])
            for e in catalog.levels[h]
        ])
    return per_level


def build_term_table(sample: SampleTree, catalog: NonIsoCatalog | None = None,
                     W: int | None = None) -> LikelihoodTermTable:
    """Grouped exact-likelihood terms for ``sample``.

    With ``p == 1`` only trees isomorphic to the sample contribute (any other
    tree has an unobserved node), so no catalog is needed.
    """
    if catalog is not None:
        W = catalog.W
    if W is None:
        raise ValueError("either a catalog or W must be given")
    if sample.max_degree() > W:
        raise InconsistentSampleError(f"sample has a node with more than W={W} children")
    if sample.p >= 1.0:
        return _full_observation_table(sample, W)
    if catalog is None:
        raise ValueError("a catalog is required when p < 1")
    if catalog.L != sample.L:
        raise ValueError(f"catalog height {catalog.L} differs from sample L={sample.L}")
    index = SampleIndex(sample)
    counts = _catalog_counts(index, catalog)[catalog.L]
    n_obs = sample.n_observed
    terms = []
    for e in catalog.entries:
        if index.root_class == LEAF_CLASS:
            c = 1
        else:
            c = counts[e.id].get(index.root_class, 0)
        if c == 0:
            continue
        factor = log_sample_factor(n_obs, e.n_nodes - n_obs, sample.p)
        terms.append((e.census, math.log(e.multiplicity) + math.log(c) + factor))
    return table_from_terms(terms, sample.L, W, sample.p)


def _full_observation_table(sample: SampleTree, W: int) -> LikelihoodTermTable:
    if not sample.is_complete(W) or sample.n_observed != sample.n_nodes:
        raise InconsistentSampleError(
            "with p = 1 every node is observed, so the sample must be a complete tree"
        )
    count = mapping_count(sample, sample)
    log_c = math.log(class_multiplicity(sample)) + math.log(count)
    census = offspring_census(sample, W).counts
    return table_from_terms([(census, log_c)], sample.L, W, 1.0)


# --------------------------------------------------------------------------
# objective in the softmax parameterization


def _full_alpha(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    return np.concatenate([alpha, np.full(alpha.shape[:-1] + (1,), ALPHA_PIN)], axis=-1)


def alpha_to_theta(alpha) -> np.ndarray:
    full = _full_alpha(alpha)
    full = full - full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


def theta_to_alpha(theta) -> np.ndarray:
    """Inverse of :func:`alpha_to_theta` for strictly positive ``theta``."""
    lt = np.log(np.asarray(theta, dtype=float))
    return lt[:-1] - lt[-1] + ALPHA_PIN


def _row_logs(full: np.ndarray, table: LikelihoodTermTable):
    log_z = logsumexp(full)
    return table.log_coef + table.X @ full - table.y * log_z, log_z


def objective(alpha, table: LikelihoodTermTable) -> float:
    """``log l(alpha)``, the log of the grouped likelihood."""
    vals, _ = _row_logs(_full_alpha(alpha), table)
    return float(logsumexp(vals))


def objective_batch(alphas: np.ndarray, table: LikelihoodTermTable,
                    chunk: int = 2048) -> np.ndarray:
    """:func:`objective` evaluated at each row of ``alphas``."""
    alphas = np.atleast_2d(alphas)
    out = np.empty(len(alphas))
    Xf = table.X.astype(float).T
    y = table.y.astype(float)
    for lo in range(0, len(alphas), chunk):
        full = _full_alpha(alphas[lo:lo + chunk])
        log_z = logsumexp(full, axis=1)
        vals = table.log_coef[None, :] + full @ Xf - log_z[:, None] * y[None, :]
        out[lo:lo + chunk] = logsumexp(vals, axis=1)
    return out


def gradient(alpha, table: LikelihoodTermTable) -> np.ndarray:
    """Gradient of ``log l`` with respect to ``alpha_1..alpha_{W-1}``.

    ``sum_j w_j (x_ji - y_j theta_i)`` where ``w`` are the row weights
    normalized to sum to one.
    """
    full = _full_alpha(alpha)
    vals, log_z = _row_logs(full, table)
    w = np.exp(vals - logsumexp(vals))
    theta = np.exp(full - log_z)
    g = w @ table.X - (w @ table.y) * theta
    return g[:-1]


def log_likelihood_theta(theta, table: LikelihoodTermTable) -> float:
    """``log sum_j c_j prod_i theta_i**x_ji`` directly in theta-space."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lt = np.log(np.asarray(theta, dtype=float))
        terms = table.X * lt
    terms[table.X == 0] = 0.0
    return float(logsumexp(table.log_coef + terms.sum(axis=1)))


# --------------------------------------------------------------------------
# maximization


@dataclass(frozen=True)
class OptimizerConfig:
    """Multistart quasi-Newton settings.

    ``starts`` points are drawn uniformly from ``[-box, box]^(W-1)``; the
    ``refine`` best of them are polished with BFGS capped at ``maxiter``
    iterations and stopped once the relative objective change drops below
    ``reltol``.
    """

    starts: int = 10_000
    box: float = 10.0
    maxiter: int = 100
    reltol: float = 1e-8
    refine: int = 5
    seed: int = 0


@dataclass(frozen=True)
class MaximizeResult:
    alpha: np.ndarray
    theta: OffspringDistribution
    value: float
    best_start_value: float
    n_failed: int
    n_iter: int


class _RelTolStop:
    """BFGS callback stopping on a small relative change of the objective."""

    def __init__(self, reltol):
        self.reltol = reltol
        self.prev = None

    def __call__(self, intermediate_result):
        f = intermediate_result.fun
        if self.prev is not None and abs(self.prev - f) <= self.reltol * (abs(self.prev) + self.reltol):
            raise StopIteration
        self.prev = f


def _refine(start: np.ndarray, table: LikelihoodTermTable, config: OptimizerConfig):
    def fun(a):
        return -objective(a, table), -gradient(a, table)

    res = minimize(
        fun,
        start,
        jac=True,
        method="BFGS",
        callback=_RelTolStop(config.reltol),
        options={"maxiter": config.maxiter, "gtol": 1e-10},
    )
    return res


def maximize(table: LikelihoodTermTable, config: OptimizerConfig | None = None,
             rng=None) -> MaximizeResult:
    """Maximize ``log l(alpha)`` by uniform multistart screening plus BFGS."""
    config = config or OptimizerConfig()
    W = table.W
    if len(table) == 0:
        raise ValueError("empty likelihood table")
    if W == 1:
        return MaximizeResult(np.zeros(0), OffspringDistribution([1.0]),
                              objective(np.zeros(0), table), objective(np.zeros(0), table), 0, 0)
    rng = as_rng(config.seed if rng is None else rng)
    starts = rng.uniform(-config.box, config.box, size=(config.starts, W - 1))
    values = objective_batch(starts, table)
    order = np.argsort(-values, kind="stable")
    best_start_value = float(values[order[0]])

    best_alpha, best_value, best_iter = starts[order[0]], best_start_value, 0
    n_failed = 0
    for k in order[: max(1, config.refine)]:
        try:
            res = _refine(starts[k], table, config)
        except (FloatingPointError, ValueError, OverflowError) as exc:
            log.debug("start %d failed: %s", k, exc)
            n_failed += 1
            continue
        val = -float(res.fun)
        if not np.all(np.isfinite(res.x)) or not np.isfinite(val):
            n_failed += 1
            continue
        if val > best_value:
            best_alpha, best_value, best_iter = res.x, val, int(res.nit)
    if n_failed == max(1, config.refine) and not np.isfinite(best_start_value):
        raise RuntimeError("optimizer failed from every start")
    theta = OffspringDistribution(alpha_to_theta(best_alpha))
    return MaximizeResult(np.asarray(best_alpha), theta, best_value,
                          best_start_value, n_failed, best_iter)


def estimate_exact(sample: SampleTree, W: int, config: OptimizerConfig | None = None,
                   catalog_dir=None, budget: int = DEFAULT_BUDGET):
    """Maximum-likelihood offspring distribution using the exact likelihood.

    Returns ``(MaximizeResult, LikelihoodTermTable)``.  Raises
    :class:`~gwinfer.errors.CapacityError` when the catalog is over budget.
    """
    if sample.max_degree() > W:
        raise InconsistentSampleError(f"sample has a node with more than W={W} children")
    sample.validate(W)
    if sample.p >= 1.0:
        table = build_term_table(sample, None, W)
    else:
        catalog = get_catalog(sample.L, W, catalog_dir, budget)
        table = build_term_table(sample, catalog)
    return maximize(table, config), table
