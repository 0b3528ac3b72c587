"""Observed-path sampling and the sample likelihood ``P(S | G)``.

The likelihood of a sample tree ``S`` given a complete tree ``G`` is
``C(G, S) * p**|V'| * (1 - p)**(|V_G| - |V'|)`` where ``C(G, S)`` counts the
root-preserving embeddings of ``S`` into ``G`` in which sibling subtrees of
``S`` land on distinct sibling subtrees of ``G``.  Counts are exact Python
integers; logs are taken only at the end.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySampleError
from .tree import SampleTree, Tree, as_rng

__all__ = [
    "SampleIndex",
    "sample_nodes",
    "build_sample",
    "draw_sample",
    "rect_permanent",
    "expand_first_row",
    "mapping_count",
    "mapping_matrix",
    "log_prob_sample_given_tree",
    "log_sample_factor",
]

LEAF_CLASS = 0
_DP_MAX_COLUMNS = 20


def sample_nodes(tree: Tree, p: float, seed=None) -> set[int]:
    """Include each node independently with probability ``p``."""
    if not 0 < p <= 1:
        raise ValueError(f"sampling probability must lie in (0, 1], got {p}")
    rng = as_rng(seed)
    draws = rng.random(tree.n_nodes)
    return {int(v) for v in np.flatnonzero(draws < p)}


def build_sample(tree: Tree, observed: Iterable[int], p: float) -> SampleTree:
    """Union of the root paths of ``observed`` nodes, as a :class:`SampleTree`.

    Sample node ids are assigned breadth-first; sibling order follows ``tree``.
    """
    observed = set(observed)
    if not observed:
        raise EmptySampleError("empty sample: no node was observed")
    bad = [v for v in observed if not 0 <= v < tree.n_nodes]
    if bad:
        raise ValueError(f"observed ids {bad[:5]} are not nodes of the tree")
    keep = set()
    for v in observed:
        while v is not None and v not in keep:
            keep.add(v)
            v = tree.parent[v]
    new_id = {0: 0}
    parents = [None]
    flags = [0 in observed]
    queue = [0]
    for u in queue:
        for c in tree.children[u]:
            if c in keep:
                new_id[c] = len(parents)
                parents.append(new_id[u])
                flags.append(c in observed)
                queue.append(c)
    return SampleTree(parents, tree.L, flags, p)


def draw_sample(tree: Tree, p: float, seed=None) -> SampleTree:
    """``sample_nodes`` followed by ``build_sample``; may raise EmptySampleError."""
    return build_sample(tree, sample_nodes(tree, p, seed), p)


# --------------------------------------------------------------------------
# permanents of rectangular count matrices


def expand_first_row(rows: Sequence[Sequence[int]]) -> int:
    """First-row expansion over minors: ``sum_j c_1j * |C_1j|``.

    Zero when there are more rows than columns.  Exponential; used as the
    fallback for wide matrices and as a cross-check.
    """
    n = len(rows)
    if n == 0:
        return 1
    m = len(rows[0])
    if n > m:
        return 0
    first, rest = rows[0], rows[1:]
    if n == 1:
        return sum(first)
    total = 0
    for j, c in enumerate(first):
        if c:
            minor = [r[:j] + r[j + 1:] for r in rest]
            total += c * expand_first_row(minor)
    return total


def rect_permanent(rows: Sequence[Sequence[int]]) -> int:
    """Sum over injective row-to-column assignments of the entry products.

    Uses a subset DP over used columns for up to 20 columns.
    """
    n = len(rows)
    if n == 0:
        return 1
    m = len(rows[0])
    if n > m:
        return 0
    if n == 1:
        return sum(rows[0])
    if m > _DP_MAX_COLUMNS:
        return expand_first_row([list(r) for r in rows])
    dp = {0: 1}
    for row in rows:
        nz = [(1 << j, c) for j, c in enumerate(row) if c]
        if not nz:
            return 0
        nxt: dict = {}
        for mask, val in dp.items():
            for bit, c in nz:
                if not mask & bit:
                    key = mask | bit
                    nxt[key] = nxt.get(key, 0) + val * c
        if not nxt:
            return 0
        dp = nxt
    return sum(dp.values())


# --------------------------------------------------------------------------
# sample structure


class SampleIndex:
    """Isomorphism classes of the sample's subtrees, grouped by depth.

    Class 0 is the single-node subtree (it embeds in any node in one way).
    ``children[c]`` is the sorted tuple of child classes of internal class
    ``c`` and ``at_depth[d]`` lists the internal classes occurring at depth d.
    """

    def __init__(self, sample: Tree):
        self.sample = sample
        forms: dict = {(): LEAF_CLASS}
        self.children: list = [()]
        node_class = [0] * sample.n_nodes
        order = sorted(range(sample.n_nodes), key=lambda v: -sample.depth[v])
        for v in order:
            key = tuple(sorted((node_class[c] for c in sample.children[v]), reverse=True))
            if key not in forms:
                forms[key] = len(self.children)
                self.children.append(key)
            node_class[v] = forms[key]
        self.node_class = node_class
        self.root_class = node_class[0]
        height = sample.height
        at_depth: list = [[] for _ in range(max(height, sample.L) + 1)]
        for v in range(sample.n_nodes):
            c = node_class[v]
            if c != LEAF_CLASS and c not in at_depth[sample.depth[v]]:
                at_depth[sample.depth[v]].append(c)
        self.at_depth = at_depth
        self.height = height

    def counts_for(self, depth: int, child_counts: Sequence[dict]) -> dict:
        """Embedding counts of every internal class at ``depth`` into a node.

        ``child_counts[j]`` maps class -> count for the node's j-th child.
        Classes with zero embeddings are omitted.
        """
        out = {}
        if depth >= len(self.at_depth):
            return out
        m = len(child_counts)
        for cls in self.at_depth[depth]:
            kids = self.children[cls]
            if len(kids) > m:
                continue
            if all(k == LEAF_CLASS for k in kids):
                # falling factorial m!/(m-n)!
                val = math.perm(m, len(kids))
            else:
                rows = [
                    [1] * m if k == LEAF_CLASS else [cc.get(k, 0) for cc in child_counts]
                    for k in kids
                ]
                val = rect_permanent(rows)
            if val:
                out[cls] = val
        return out


def _node_counts(index: SampleIndex, tree: Tree) -> list:
    """Per-node class->count tables for ``tree``, computed bottom-up."""
    counts: list = [None] * tree.n_nodes
    empty: dict = {}
    order = sorted(range(tree.n_nodes), key=lambda v: -tree.depth[v])
    for v in order:
        d = tree.depth[v]
        kids = tree.children[v]
        if not kids or d >= len(index.at_depth) or not index.at_depth[d]:
            counts[v] = empty
        else:
            counts[v] = index.counts_for(d, [counts[c] for c in kids])
    return counts


def mapping_count(sample: Tree, tree: Tree, index: SampleIndex | None = None) -> int:
    """Number of ways ``sample`` embeds into ``tree`` (exact integer)."""
    if sample.height > tree.height:
        return 0
    index = SampleIndex(sample) if index is None else index
    if index.root_class == LEAF_CLASS:
        return 1
    if len(sample.children[0]) > len(tree.children[0]):
        return 0
    return _node_counts(index, tree)[0].get(index.root_class, 0)


def mapping_matrix(sample: Tree, tree: Tree) -> list:
    """The matrix ``c_ij`` of counts for sample root-subtree i into tree root-subtree j."""
    index = SampleIndex(sample)
    counts = _node_counts(index, tree)
    out = []
    for s in sample.children[0]:
        cls = index.node_class[s]
        if cls == LEAF_CLASS:
            out.append([1] * len(tree.children[0]))
        else:
            out.append([counts[g].get(cls, 0) for g in tree.children[0]])
    return out


def log_sample_factor(n_observed: int, n_unobserved: int, p: float) -> float:
    """``log(p**n_observed * (1-p)**n_unobserved)`` with ``0**0 = 1``."""
    if n_unobserved < 0:
        return -math.inf
    total = n_observed * math.log(p)
    if n_unobserved:
        if p >= 1.0:
            return -math.inf
        total += n_unobserved * math.log1p(-p)
    return total


def log_prob_sample_given_tree(sample: SampleTree, tree: Tree,
                               index: SampleIndex | None = None) -> float:
    """``log C(G,S) + |V'| log p + |V_G \\ V'| log(1-p)``; ``-inf`` if no embedding."""
    count = mapping_count(sample, tree, index)
    if count == 0:
        return -math.inf
    n_obs = sample.n_observed
    factor = log_sample_factor(n_obs, tree.n_nodes - n_obs, sample.p)
    if factor == -math.inf:
        return factor
    return math.log(count) + factor
