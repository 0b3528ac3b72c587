"""Metropolis-Hastings over complete trees and the importance-sampling estimator.

The chain targets ``g(G) ~ P(S|G) P(G|theta0)`` on ordered trees of height
``L``.  Each move picks an internal node ``v`` uniformly, then either grafts
a fresh GW(theta0) branch into a uniformly chosen child slot of ``v`` or
prunes a uniformly chosen child branch.  Embedding counts and subtree
statistics are cached per node, so a move only recomputes the path from
``v`` to the root.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field
from itertools import accumulate

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .errors import InconsistentSampleError, InsufficientPilotError
from .exact import MaximizeResult, OptimizerConfig, maximize, table_from_terms
from .sampling import LEAF_CLASS, SampleIndex, log_sample_factor, mapping_count
from .tree import (OffspringDistribution, SampleTree, Tree, as_rng,
                   log_prob_tree, offspring_census)

__all__ = [
    "ChainState",
    "Proposal",
    "McmcConfig",
    "ChainRun",
    "RafteryLewisResult",
    "init_chain",
    "propose",
    "acceptance_log_ratio",
    "step",
    "run_chain",
    "raftery_lewis",
    "raftery_lewis_nmin",
    "importance_objective",
    "importance_table",
    "theta0_from_sample",
    "shifted_binomial",
    "estimate_approximate",
    "write_trace_csv",
]

log = logging.getLogger(__name__)

_LOG_HALF = math.log(0.5)
_BATCH = 4096


class _Uniforms:
    """Batched U(0,1) draws from a numpy Generator."""

    __slots__ = ("rng", "buf", "i")

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.buf = rng.random(_BATCH).tolist()
        self.i = 0

    def __call__(self) -> float:
        if self.i == _BATCH:
            self.buf = self.rng.random(_BATCH).tolist()
            self.i = 0
        u = self.buf[self.i]
        self.i += 1
        return u


class ChainState:
    """Current chain tree with cached likelihood pieces.

    Nodes live in parallel lists indexed by id; pruned ids go on a free list
    and are reused by later grafts.  ``counts[v]`` maps sample classes to
    embedding counts into the subtree at ``v``.
    """

    def __init__(self, sample: SampleTree, theta0: OffspringDistribution, W: int):
        if W < 2:
            raise ValueError("W must be at least 2: with W = 1 the chain has no moves")
        if theta0.W != W:
            raise ValueError(f"theta0 has W={theta0.W}, expected {W}")
        self.sample = sample
        self.index = SampleIndex(sample)
        self.theta0 = theta0
        self.W = W
        self.L = sample.L
        self.log_theta0 = [-math.inf] + [math.log(x) if x > 0 else -math.inf
                                         for x in theta0.probs]
        self.cum_theta0 = list(accumulate(theta0.probs))
        self.cum_theta0[-1] = 1.0
        self.n_observed = sample.n_observed
        self.p = sample.p

        self.parent: list = []
        self.children: list = []
        self.depth: list = []
        self.counts: list = []
        self.sub_size: list = []
        self.sub_leaves: list = []
        self.sub_logp: list = []
        self.alive: list = []
        self.free: list = []
        self.internal: list = []
        self.int_pos: dict = {}
        self.census = [0] * (W + 1)   # index j = nodes with j children
        self.n_nodes = 0
        self.n_leaves = 0
        self.log_ps = -math.inf
        self.log_p0 = -math.inf
        self.step = 0
        self.n_accepted = 0

    # -- derived quantities ------------------------------------------------

    @property
    def n_internal(self) -> int:
        return len(self.internal)

    @property
    def log_g(self) -> float:
        return self.log_ps + self.log_p0

    def census_tuple(self) -> tuple:
        return tuple(self.census[1:])

    def root_count(self, root_counts: dict) -> int:
        if self.index.root_class == LEAF_CLASS:
            return 1
        return root_counts.get(self.index.root_class, 0)

    def log_ps_from(self, count: int, n_nodes: int) -> float:
        if count == 0:
            return -math.inf
        f = log_sample_factor(self.n_observed, n_nodes - self.n_observed, self.p)
        return -math.inf if f == -math.inf else math.log(count) + f

    def _counts_at(self, depth: int, kids) -> dict:
        if not kids or depth >= len(self.index.at_depth) or not self.index.at_depth[depth]:
            return {}
        return self.index.counts_for(depth, kids)

    # -- node storage ------------------------------------------------------

    def _new_node(self) -> int:
        if self.free:
            v = self.free.pop()
            self.alive[v] = True
            return v
        self.parent.append(-1)
        self.children.append([])
        self.depth.append(0)
        self.counts.append({})
        self.sub_size.append(1)
        self.sub_leaves.append(1)
        self.sub_logp.append(0.0)
        self.alive.append(True)
        return len(self.parent) - 1

    def _add_internal(self, v: int) -> None:
        self.int_pos[v] = len(self.internal)
        self.internal.append(v)

    def _drop_internal(self, v: int) -> None:
        i = self.int_pos.pop(v)
        last = self.internal.pop()
        if last != v:
            self.internal[i] = last
            self.int_pos[last] = i

    # -- export and checks -------------------------------------------------

    def to_tree(self) -> Tree:
        """Compact copy of the current tree (breadth-first ids)."""
        parents = [None]
        queue = [(0, 0)]
        for u, nu in queue:
            for c in self.children[u]:
                parents.append(nu)
                queue.append((c, len(parents) - 1))
        return Tree(parents, self.L)

    def ordered_form(self, v: int = 0) -> tuple:
        """Nested tuple of the subtree at ``v`` keeping child order."""
        return tuple(self.ordered_form(c) for c in self.children[v])

    def check(self, tol: float = 1e-9) -> None:
        """Recompute cached values from scratch and compare."""
        tree = self.to_tree()
        tree.validate(self.W)
        fresh_p0 = log_prob_tree(tree, self.theta0)
        count = mapping_count(self.sample, tree, self.index)
        fresh_ps = self.log_ps_from(count, tree.n_nodes)
        if abs(fresh_p0 - self.log_p0) > tol * max(1.0, abs(fresh_p0)):
            raise AssertionError(f"cached log P(X|theta0) {self.log_p0} != {fresh_p0}")
        if abs(fresh_ps - self.log_ps) > tol * max(1.0, abs(fresh_ps)):
            raise AssertionError(f"cached log P(S|X) {self.log_ps} != {fresh_ps}")
        if tree.n_nodes != self.n_nodes or len(tree.leaves()) != self.n_leaves:
            raise AssertionError("cached node or leaf count is stale")
        if tuple(offspring_census(tree, self.W).counts) != self.census_tuple():
            raise AssertionError("cached census is stale")
        if self.n_internal != self.n_nodes - self.n_leaves:
            raise AssertionError("internal-node list is stale")


def _grow(state: ChainState, depth: int, uniform) -> tuple:
    """GW(theta0) branch whose root sits at ``depth``.

    Returns ``(parents, degrees, logp)`` in breadth-first order with local
    indices; ``parents[0]`` is -1.
    """
    cum = state.cum_theta0
    logt = state.log_theta0
    parents = [-1]
    degrees = []
    logp = 0.0
    level = [0]
    for _ in range(state.L - depth):
        nxt = []
        for u in level:
            k = bisect.bisect_right(cum, uniform()) + 1
            if k > state.W:
                k = state.W
            degrees.append(k)
            logp += logt[k]
            for _ in range(k):
                parents.append(u)
                nxt.append(len(parents) - 1)
        level = nxt
    degrees.extend([0] * len(level))
    return parents, degrees, logp


def _branch_counts(state: ChainState, parents, degrees, depth: int) -> list:
    """Embedding-count tables for every node of a freshly grown branch."""
    n = len(parents)
    kids = [[] for _ in range(n)]
    for i in range(1, n):
        kids[parents[i]].append(i)
    # breadth-first order: depth is non-decreasing with index
    node_depth = [depth] * n
    for i in range(1, n):
        node_depth[i] = node_depth[parents[i]] + 1
    counts: list = [None] * n
    for i in range(n - 1, -1, -1):
        counts[i] = state._counts_at(node_depth[i], [counts[c] for c in kids[i]])
    return counts


def init_chain(sample: SampleTree, theta0: OffspringDistribution, W: int, seed=None) -> ChainState:
    """Initial state: the sample, with each shallow leaf grown down to depth L."""
    if sample.max_degree() > W:
        raise InconsistentSampleError(f"sample has a node with more than W={W} children")
    sample.validate(W)
    state = ChainState(sample, theta0, W)
    rng = as_rng(seed)
    uniform = _Uniforms(rng)
    L = sample.L
    ids = {}
    for v in sorted(range(sample.n_nodes), key=lambda x: sample.depth[x]):
        nv = state._new_node()
        ids[v] = nv
        par = sample.parent[v]
        state.parent[nv] = -1 if par is None else ids[par]
        if par is not None:
            state.children[ids[par]].append(nv)
        state.depth[nv] = sample.depth[v]
    for v in range(sample.n_nodes):
        if not sample.children[v] and sample.depth[v] < L:
            nv = ids[v]
            parents, degrees, _ = _grow(state, sample.depth[v], uniform)
            local = [nv]
            for i in range(1, len(parents)):
                u = state._new_node()
                local.append(u)
                pu = local[parents[i]]
                state.parent[u] = pu
                state.children[pu].append(u)
                state.depth[u] = state.depth[pu] + 1
    _recompute_all(state)
    return state


def _recompute_all(state: ChainState) -> None:
    """Rebuild every cached quantity from the node lists."""
    alive = [v for v in range(len(state.parent)) if state.alive[v]]
    order = sorted(alive, key=lambda v: -state.depth[v])
    state.census = [0] * (state.W + 1)
    state.internal = []
    state.int_pos = {}
    lt = state.log_theta0
    for v in order:
        kids = state.children[v]
        d = len(kids)
        state.counts[v] = state._counts_at(state.depth[v], [state.counts[c] for c in kids])
        if d:
            state.sub_size[v] = 1 + sum(state.sub_size[c] for c in kids)
            state.sub_leaves[v] = sum(state.sub_leaves[c] for c in kids)
            state.sub_logp[v] = lt[d] + sum(state.sub_logp[c] for c in kids)
            state.census[d] += 1
            state._add_internal(v)
        else:
            state.sub_size[v] = 1
            state.sub_leaves[v] = 1
            state.sub_logp[v] = 0.0
    state.n_nodes = state.sub_size[0]
    state.n_leaves = state.sub_leaves[0]
    state.log_p0 = state.sub_logp[0]
    state.log_ps = state.log_ps_from(state.root_count(state.counts[0]), state.n_nodes)


@dataclass
class Proposal:
    """A single add/remove move and everything needed to accept it.

    ``log_q_forward`` / ``log_q_reverse`` are the probabilities of this exact
    move and of its inverse move under the kernel.
    """

    action: str
    v: int
    slot: int
    log_q_forward: float
    log_q_reverse: float
    log_ps_new: float
    log_p0_new: float
    branch_logp: float
    branch: tuple = None               # (parents, degrees, counts) for add
    path_counts: list = field(default_factory=list)   # [(node, new counts)]


def propose(state: ChainState, uniform) -> Proposal:
    """Draw a move from the transition kernel (does not modify ``state``)."""
    W = state.W
    v = state.internal[int(uniform() * state.n_internal)]
    kids = state.children[v]
    d = len(kids)
    if d == 1:
        action = "add"
    elif d == W:
        action = "remove"
    else:
        action = "add" if uniform() < 0.5 else "remove"
    n_int = state.n_internal
    lt = state.log_theta0
    depth_v = state.depth[v]

    if action == "add":
        slot = int(uniform() * (d + 1))
        parents, degrees, blogp = _grow(state, depth_v + 1, uniform)
        bcounts = _branch_counts(state, parents, degrees, depth_v + 1)
        b_size = len(parents)
        b_internal = sum(1 for k in degrees if k)
        n_int_new = n_int + b_internal
        log_q_f = -math.log(n_int) + (_LOG_HALF if d > 1 else 0.0) + blogp - math.log(d + 1)
        log_q_r = -math.log(n_int_new) + (_LOG_HALF if d + 1 < W else 0.0) - math.log(d + 1)
        log_p0_new = state.log_p0 + blogp - lt[d] + lt[d + 1]
        child_counts = [state.counts[c] for c in kids]
        child_counts.insert(slot, bcounts[0])
        n_new = state.n_nodes + b_size
        branch = (parents, degrees, bcounts)
    else:
        slot = int(uniform() * d)
        c = kids[slot]
        blogp = state.sub_logp[c]
        b_internal = state.sub_size[c] - state.sub_leaves[c]
        n_int_new = n_int - b_internal
        log_q_f = -math.log(n_int) + (_LOG_HALF if d < W else 0.0) - math.log(d)
        log_q_r = -math.log(n_int_new) + (_LOG_HALF if d - 1 > 1 else 0.0) + blogp - math.log(d)
        log_p0_new = state.log_p0 - blogp - lt[d] + lt[d - 1]
        child_counts = [state.counts[x] for i, x in enumerate(kids) if i != slot]
        n_new = state.n_nodes - state.sub_size[c]
        branch = None

    # embedding counts along the path from v to the root
    path = []
    u = v
    new = state._counts_at(depth_v, child_counts)
    while True:
        if new == state.counts[u]:
            root_counts = state.counts[0]
            break
        path.append((u, new))
        par = state.parent[u]
        if par < 0:
            root_counts = new
            break
        sib = [new if x == u else state.counts[x] for x in state.children[par]]
        u = par
        new = state._counts_at(state.depth[u], sib)
    log_ps_new = state.log_ps_from(state.root_count(root_counts), n_new)
    return Proposal(action, v, slot, log_q_f, log_q_r, log_ps_new, log_p0_new,
                    blogp, branch, path)


def acceptance_log_ratio(state: ChainState, proposal: Proposal) -> float:
    """``log min(1, g(X') q(X'->X) / (g(X) q(X->X')))``; ``-inf`` if X' leaves the support."""
    if proposal.log_ps_new == -math.inf or proposal.log_p0_new == -math.inf:
        return -math.inf
    num = proposal.log_ps_new + proposal.log_p0_new + proposal.log_q_reverse
    den = state.log_ps + state.log_p0 + proposal.log_q_forward
    return min(0.0, num - den)


def _apply(state: ChainState, prop: Proposal) -> None:
    v = prop.v
    d = len(state.children[v])
    lt = state.log_theta0
    if prop.action == "add":
        parents, degrees, bcounts = prop.branch
        local = []
        base_depth = state.depth[v] + 1
        for i in range(len(parents)):
            u = state._new_node()
            local.append(u)
            state.children[u] = []
            state.counts[u] = bcounts[i]
            if i == 0:
                state.parent[u] = v
                state.depth[u] = base_depth
            else:
                pu = local[parents[i]]
                state.parent[u] = pu
                state.children[pu].append(u)
                state.depth[u] = state.depth[pu] + 1
        # subtree statistics bottom-up within the branch
        for i in range(len(parents) - 1, -1, -1):
            u = local[i]
            k = degrees[i]
            if k:
                ch = state.children[u]
                state.sub_size[u] = 1 + sum(state.sub_size[x] for x in ch)
                state.sub_leaves[u] = sum(state.sub_leaves[x] for x in ch)
                state.sub_logp[u] = lt[k] + sum(state.sub_logp[x] for x in ch)
                state.census[k] += 1
                state._add_internal(u)
            else:
                state.sub_size[u] = 1
                state.sub_leaves[u] = 1
                state.sub_logp[u] = 0.0
        root = local[0]
        state.children[v].insert(prop.slot, root)
        d_size, d_leaves = state.sub_size[root], state.sub_leaves[root]
        d_logp = prop.branch_logp - lt[d] + lt[d + 1]
        state.census[d] -= 1
        state.census[d + 1] += 1
    else:
        c = state.children[v].pop(prop.slot)
        d_size, d_leaves = -state.sub_size[c], -state.sub_leaves[c]
        d_logp = -state.sub_logp[c] - lt[d] + lt[d - 1]
        stack = [c]
        while stack:
            u = stack.pop()
            k = len(state.children[u])
            if k:
                state.census[k] -= 1
                state._drop_internal(u)
                stack.extend(state.children[u])
            state.alive[u] = False
            state.children[u] = []
            state.counts[u] = {}
            state.free.append(u)
        state.census[d] -= 1
        state.census[d - 1] += 1
    u = v
    while u >= 0:
        state.sub_size[u] += d_size
        state.sub_leaves[u] += d_leaves
        state.sub_logp[u] += d_logp
        u = state.parent[u]
    for u, cnt in prop.path_counts:
        state.counts[u] = cnt
    state.n_nodes = state.sub_size[0]
    state.n_leaves = state.sub_leaves[0]
    state.log_p0 = prop.log_p0_new
    state.log_ps = prop.log_ps_new


def step(state: ChainState, uniform) -> bool:
    """One Metropolis-Hastings transition; returns whether the move was accepted."""
    prop = propose(state, uniform)
    log_r = acceptance_log_ratio(state, prop)
    state.step += 1
    if log_r == -math.inf:
        return False
    if log_r >= 0.0 or math.log(uniform()) < log_r:
        _apply(state, prop)
        state.n_accepted += 1
        return True
    return False


# --------------------------------------------------------------------------
# running chains


@dataclass(frozen=True)
class McmcConfig:
    """Chain settings.

    ``burn_in`` transitions are discarded, then every ``thin``-th state is
    recorded until ``n_samples`` states are kept.
    """

    theta0: OffspringDistribution
    burn_in: int = 0
    thin: int = 1
    n_samples: int = 10_000
    seed: int = 0
    rl_q: float = 0.025
    rl_r: float = 0.005
    rl_s: float = 0.95
    debug_every: int = 0

    def __post_init__(self):
        if self.burn_in < 0 or self.thin < 1 or self.n_samples < 1:
            raise ValueError("burn_in must be >= 0, thin and n_samples >= 1")


@dataclass
class ChainRun:
    censuses: list          # recorded census tuples
    log_p0: np.ndarray      # log P(G_i | theta0)
    log_g: np.ndarray       # unnormalized log target of recorded states
    acceptance_rate: float
    n_steps: int
    state: ChainState = field(repr=False, default=None)

    @property
    def samples(self) -> list:
        return list(zip(self.censuses, self.log_p0.tolist()))


def run_chain(sample: SampleTree, config: McmcConfig, W: int | None = None,
              state: ChainState | None = None, rng=None, record_forms: bool = False):
    """Run the sampler and record censuses and target values.

    Passing ``state`` (and its ``rng``) continues an existing chain.  With
    ``record_forms`` the ordered shape of each recorded tree is returned too.
    """
    W = config.theta0.W if W is None else W
    rng = as_rng(config.seed) if rng is None else rng
    if state is None:
        state = init_chain(sample, config.theta0, W, rng)
    uniform = _Uniforms(rng)
    acc0, steps0 = state.n_accepted, state.step
    for _ in range(config.burn_in):
        step(state, uniform)
    censuses = []
    log_p0 = np.empty(config.n_samples)
    log_g = np.empty(config.n_samples)
    forms = [] if record_forms else None
    debug = config.debug_every
    for i in range(config.n_samples):
        for _ in range(config.thin):
            step(state, uniform)
            if debug and state.step % debug == 0:
                state.check()
        censuses.append(state.census_tuple())
        log_p0[i] = state.log_p0
        log_g[i] = state.log_ps + state.log_p0
        if record_forms:
            forms.append(state.ordered_form())
    n_steps = state.step - steps0
    rate = (state.n_accepted - acc0) / n_steps if n_steps else 0.0
    run = ChainRun(censuses, log_p0, log_g, rate, n_steps, state)
    return (run, forms) if record_forms else run


def write_trace_csv(run: ChainRun, path, thin: int = 1) -> None:
    """Write ``step, c_1..c_W, log_g`` rows for offline diagnostics."""
    W = len(run.censuses[0]) if run.censuses else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"c_{j}" for j in range(1, W + 1)] + ["log_g"])
        for i, (c, lg) in enumerate(zip(run.censuses, run.log_g.tolist())):
            w.writerow([(i + 1) * thin, *c, repr(lg)])


# --------------------------------------------------------------------------
# Raftery-Lewis diagnostic


@dataclass(frozen=True)
class RafteryLewisResult:
    burn_in: int
    total: int
    thin: int
    n_min: int
    dependence_factor: float
    degenerate: bool = False


def raftery_lewis_nmin(q: float = 0.025, r: float = 0.005, s: float = 0.95) -> int:
    phi = norm.ppf(0.5 * (1.0 + s))
    return int(math.ceil(q * (1.0 - q) * phi**2 / r**2))


def _second_order_g2(z: np.ndarray) -> float:
    """Likelihood-ratio statistic of a 2nd- vs 1st-order Markov chain fit."""
    a, b, c = z[:-2], z[1:-1], z[2:]
    table = np.zeros((2, 2, 2))
    np.add.at(table, (a, b, c), 1)
    g2 = 0.0
    for i1 in range(2):
        for i2 in range(2):
            for i3 in range(2):
                obs = table[i1, i2, i3]
                if obs:
                    fitted = table[i1, i2, :].sum() * table[:, i2, i3].sum() / table[:, i2, :].sum()
                    g2 += 2.0 * obs * math.log(obs / fitted)
    return g2


def raftery_lewis(trace, q: float = 0.025, r: float = 0.005, s: float = 0.95,
                  eps: float = 0.001) -> RafteryLewisResult:
    """Burn-in, total length and thinning needed to estimate the ``q`` quantile.

    The trace is dichotomized at its empirical ``q`` quantile.  The thinning
    ``k`` is the smallest for which a first-order Markov chain is preferred
    over second order by BIC; the two-state transition rates of the thinned
    indicator then give the burn-in ``M`` and the total length ``N``.
    """
    x = np.asarray(trace, dtype=float)
    n_min = raftery_lewis_nmin(q, r, s)
    if len(x) < n_min:
        raise InsufficientPilotError(n_min, len(x))
    phi = norm.ppf(0.5 * (1.0 + s))
    quant = np.quantile(x, q)
    z = (x <= quant).astype(np.int64)
    if z.min() == z.max():
        return RafteryLewisResult(0, n_min, 1, n_min, 1.0, degenerate=True)

    k = 0
    while True:
        k += 1
        zk = z[::k]
        if len(zk) < 3:
            break
        bic = _second_order_g2(zk) - 2.0 * math.log(len(zk) - 2)
        if bic < 0:
            break
    zk = z[::k]
    trans = np.zeros((2, 2))
    np.add.at(trans, (zk[:-1], zk[1:]), 1)
    row0, row1 = trans[0].sum(), trans[1].sum()
    if row0 == 0 or row1 == 0:
        return RafteryLewisResult(0, n_min, k, n_min, 1.0, degenerate=True)
    alpha = trans[0, 1] / row0
    beta = trans[1, 0] / row1
    if alpha + beta == 0:
        return RafteryLewisResult(0, n_min, k, n_min, 1.0, degenerate=True)
    lam = abs(1.0 - alpha - beta)
    if lam == 0:
        m_burn = 1.0
    else:
        m_burn = math.log(eps * (alpha + beta) / max(alpha, beta)) / math.log(lam)
    burn = int(math.ceil(max(m_burn, 0.0)) * k)
    prec = (2.0 - alpha - beta) * alpha * beta * phi**2 / ((alpha + beta) ** 3 * r**2)
    keep = int(math.ceil(prec) * k)
    total = burn + keep
    return RafteryLewisResult(burn, total, k, n_min, total / n_min)


# --------------------------------------------------------------------------
# importance-sampling estimator


def importance_objective(theta, samples, theta0: OffspringDistribution | None = None) -> float:
    """``log sum_i P(G_i|theta) / P(G_i|theta0)`` over recorded samples.

    ``samples`` holds ``(census, log P(G_i|theta0))`` pairs; when ``theta0``
    is given the second entries are recomputed from the censuses.
    """
    if not samples:
        raise ValueError("no samples")
    with np.errstate(divide="ignore"):
        lt = np.log(np.asarray(theta.probs if hasattr(theta, "probs") else theta, float))
    C = np.array([c for c, _ in samples], dtype=float)
    if theta0 is not None:
        with np.errstate(divide="ignore"):
            l0 = np.log(theta0.array)
        lp0 = np.where(C > 0, C * l0, 0.0).sum(axis=1)
    else:
        lp0 = np.array([lp for _, lp in samples])
    lpt = np.where(C > 0, C * lt, 0.0).sum(axis=1)
    return float(logsumexp(lpt - lp0))


def importance_table(samples, W: int):
    """Term table with one row per distinct census, coefficient ``n / P(G|theta0)``."""
    return table_from_terms(((c, -lp) for c, lp in samples), 0, W)


def shifted_binomial(mean: float, W: int) -> OffspringDistribution:
    """``1 + Binomial(W-1, (mean-1)/(W-1))`` on ``{1..W}``; ``mean`` clamped to ``[1, W]``."""
    if W == 1:
        return OffspringDistribution([1.0])
    mean = min(max(mean, 1.0), float(W))
    q = (mean - 1.0) / (W - 1)
    from scipy.stats import binom
    return OffspringDistribution(binom.pmf(np.arange(W), W - 1, q), normalize=True)


def theta0_from_sample(sample: Tree, W: int, k_levels: int = 2) -> OffspringDistribution:
    """Shifted binomial whose mean is the average observed degree near the root.

    Uses sample nodes with children at depths ``0..k_levels-1``; falls back
    to uniform when there are none.
    """
    degs = [len(sample.children[v]) for v in range(sample.n_nodes)
            if sample.depth[v] < k_levels and sample.children[v]]
    if not degs:
        log.warning("no internal sample nodes in the top %d levels; using uniform theta0", k_levels)
        return OffspringDistribution.uniform(W)
    return shifted_binomial(sum(degs) / len(degs), W)


@dataclass
class ApproximateResult:
    fit: MaximizeResult
    theta0: OffspringDistribution
    diagnostic: RafteryLewisResult | None
    burn_in: int
    thin: int
    n_samples: int
    acceptance_rate: float
    run: ChainRun = field(repr=False, default=None)

    @property
    def theta(self) -> OffspringDistribution:
        return self.fit.theta


def estimate_approximate(sample: SampleTree, W: int, theta0="uniform", seed=0,
                         pilot: int = 10_000, min_samples: int = 0,
                         max_samples: int | None = None, mcmc_params=None,
                         optimizer: OptimizerConfig | None = None,
                         rl=(0.025, 0.005, 0.95)) -> ApproximateResult:
    """Importance-sampling maximum-likelihood estimate from one chain.

    A pilot run of ``pilot`` states feeds the Raftery-Lewis diagnostic on
    ``log g``; the chain then continues with the recommended burn-in and
    thinning and records ``(N - M) / k`` states, clamped to
    ``[min_samples, max_samples]``.  ``mcmc_params=(M, N, k)`` skips the pilot.
    ``theta0`` is ``"uniform"``, ``"binomial"`` (mean from the sample) or an
    :class:`OffspringDistribution`.
    """
    if isinstance(theta0, str):
        if theta0 == "uniform":
            theta0 = OffspringDistribution.uniform(W)
        elif theta0 == "binomial":
            theta0 = theta0_from_sample(sample, W)
        else:
            raise ValueError(f"unknown theta0 choice {theta0!r}")
    rng = as_rng(seed)
    state = init_chain(sample, theta0, W, rng)
    diag = None
    if mcmc_params is None:
        pilot_cfg = McmcConfig(theta0, burn_in=0, thin=1, n_samples=pilot)
        pilot_run = run_chain(sample, pilot_cfg, W, state=state, rng=rng)
        diag = raftery_lewis(pilot_run.log_g, *rl)
        burn, total, thin = diag.burn_in, diag.total, diag.thin
    else:
        burn, total, thin = mcmc_params
    n = max(1, math.ceil(max(total - burn, 0) / thin))
    n = max(n, min_samples)
    if max_samples is not None:
        n = min(n, max_samples)
    cfg = McmcConfig(theta0, burn_in=burn, thin=thin, n_samples=n)
    run = run_chain(sample, cfg, W, state=state, rng=rng)
    table = importance_table(run.samples, W)
    fit = maximize(table, optimizer, rng=rng)
    return ApproximateResult(fit, theta0, diag, burn, thin, n, run.acceptance_rate, run)
