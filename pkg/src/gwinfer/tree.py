"""Rooted trees and the Galton-Watson generative process.

Trees have a fixed height ``L``: every leaf of a complete tree sits at depth
``L`` and internal nodes have between 1 and ``W`` children (no extinction).
Node ids are dense integers with the root at id 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "OffspringDistribution",
    "OffspringCensus",
    "Tree",
    "SampleTree",
    "as_rng",
    "gw_generate",
    "gw_subtree",
    "log_prob_tree",
    "offspring_census",
    "canonical_form",
]

_SUM_TOL = 1e-12


def as_rng(seed) -> np.random.Generator:
    """Return a Generator; pass existing generators through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class OffspringDistribution:
    """Offspring probabilities ``(theta_1, ..., theta_W)``; ``theta_0`` is 0."""

    probs: tuple

    def __init__(self, probs: Iterable[float], normalize: bool = False):
        p = np.asarray(list(probs), dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("offspring distribution needs at least one entry")
        if normalize:
            if np.any(~np.isfinite(p)) or np.any(p < 0) or p.sum() <= 0:
                raise ValueError(f"weights must be non-negative with a positive sum: {p.tolist()}")
            p = p / p.sum()
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1 + _SUM_TOL):
            raise ValueError(f"probabilities must lie in [0, 1]: {p.tolist()}")
        if abs(p.sum() - 1.0) > _SUM_TOL * max(1, p.size):
            raise ValueError(f"probabilities must sum to 1, got {p.sum()!r}")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @property
    def W(self) -> int:
        return len(self.probs)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.probs)

    @property
    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.array)

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.W + 1), self.array))

    @classmethod
    def uniform(cls, W: int) -> "OffspringDistribution":
        return cls(np.full(W, 1.0 / W))

    def __repr__(self):
        return f"OffspringDistribution({list(self.probs)})"


@dataclass(frozen=True)
class OffspringCensus:
    """Counts ``c_j`` of internal nodes having exactly ``j`` children."""

    counts: tuple

    @property
    def W(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def __getitem__(self, j: int) -> int:
        # 1-based, matching offspring counts
        return self.counts[j - 1]


class Tree:
    """Immutable rooted tree of height ``L`` with ordered child lists.

    Parameters
    ----------
    parents : sequence of int or None
        ``parents[i]`` is the parent id of node ``i``; exactly the root
        (id 0) has ``None``.  Child lists keep the order in which ids appear.
    L : int
        Height bound.  Complete trees have every leaf at depth ``L``.
    observed : sequence of bool, optional
        Per-node observation flags (all ``False`` by default).
    """

    __slots__ = ("L", "parent", "children", "depth", "observed")

    def __init__(self, parents: Sequence, L: int, observed: Sequence[bool] | None = None):
        n = len(parents)
        if n == 0:
            raise ValueError("tree must have at least one node")
        if parents[0] is not None:
            raise ValueError("node 0 must be the root")
        children = [[] for _ in range(n)]
        for i in range(1, n):
            par = parents[i]
            if par is None:
                raise ValueError(f"node {i} has no parent; only one root is allowed")
            if not 0 <= par < n or par == i:
                raise ValueError(f"node {i} has invalid parent {par}")
            children[par].append(i)
        depth = [-1] * n
        depth[0] = 0
        stack = [0]
        seen = 1
        while stack:
            u = stack.pop()
            for c in children[u]:
                depth[c] = depth[u] + 1
                seen += 1
                stack.append(c)
        if seen != n:
            raise ValueError("parent links contain a cycle or unreachable nodes")
        if observed is None:
            observed = [False] * n
        if len(observed) != n:
            raise ValueError("observed flags must have one entry per node")
        self.L = int(L)
        self.parent = tuple(parents)
        self.children = tuple(tuple(c) for c in children)
        self.depth = tuple(depth)
        self.observed = tuple(bool(o) for o in observed)

    # construction helpers -------------------------------------------------

    @classmethod
    def from_nested(cls, nested, L: int | None = None, observed: Iterable[int] = ()):
        """Build from nested lists, e.g. ``[[[], []], [[]]]``.

        Node ids are assigned in preorder.  ``observed`` lists preorder ids.
        """
        parents = [None]
        stack = [(nested, 0)]
        order = []
        while stack:
            sub, nid = stack.pop()
            order.append(nid)
            kids = []
            for child in sub:
                parents.append(nid)
                kids.append((child, len(parents) - 1))
            stack.extend(reversed(kids))
        # preorder renumbering so ids follow the nesting as written
        relabel = {old: new for new, old in enumerate(order)}
        new_parents = [None] * len(parents)
        for old, par in enumerate(parents):
            if par is not None:
                new_parents[relabel[old]] = relabel[par]
        height = _nested_height(nested)
        obs = set(observed)
        tree = cls(new_parents, height if L is None else L,
                   [i in obs for i in range(len(parents))])
        return tree

    # basic queries --------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    def __len__(self) -> int:
        return len(self.parent)

    @property
    def height(self) -> int:
        return max(self.depth)

    def is_leaf(self, v: int) -> bool:
        return not self.children[v]

    def leaves(self) -> list[int]:
        return [v for v in range(self.n_nodes) if not self.children[v]]

    def internal_nodes(self) -> list[int]:
        return [v for v in range(self.n_nodes) if self.children[v]]

    def max_degree(self) -> int:
        return max((len(c) for c in self.children), default=0)

    def observed_nodes(self) -> list[int]:
        return [v for v, o in enumerate(self.observed) if o]

    def is_complete(self, W: int | None = None) -> bool:
        """True when every leaf is at depth ``L`` and degrees are within ``W``."""
        if any(self.depth[v] != self.L for v in self.leaves()):
            return False
        return W is None or self.max_degree() <= W

    def validate(self, W: int | None = None) -> None:
        """Raise ``ValueError`` unless this is a complete tree of height ``L``."""
        if self.L < 1:
            raise ValueError("height L must be at least 1")
        bad = [v for v in self.leaves() if self.depth[v] != self.L]
        if bad:
            raise ValueError(f"leaves {bad[:5]} are not at depth L={self.L}")
        if W is not None and self.max_degree() > W:
            raise ValueError(f"a node has {self.max_degree()} children, more than W={W}")

    def with_observed(self, observed: Iterable[int]) -> "Tree":
        obs = set(observed)
        return Tree(self.parent, self.L, [v in obs for v in range(self.n_nodes)])

    def to_nested(self, v: int = 0):
        return [self.to_nested(c) for c in self.children[v]]

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "nodes": [
                {
                    "id": v,
                    "parent": self.parent[v],
                    "children": list(self.children[v]),
                    "observed": self.observed[v],
                }
                for v in range(self.n_nodes)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        parents, observed = _parse_nodes(data)
        tree = cls(parents, data["L"], observed)
        _check_children(tree, data)
        return tree

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.L == other.L
            and self.parent == other.parent
            and self.observed == other.observed
        )

    def __hash__(self):
        return hash((self.L, self.parent, self.observed))

    def __repr__(self):
        return f"{type(self).__name__}(n_nodes={self.n_nodes}, L={self.L})"


class SampleTree(Tree):
    """Union of observed root paths, plus the sampling probability ``p``.

    Leaves may sit above depth ``L``; every leaf must be observed.
    """

    __slots__ = ("p",)

    def __init__(self, parents: Sequence, L: int, observed: Sequence[bool], p: float):
        super().__init__(parents, L, observed)
        if not 0 < p <= 1:
            raise ValueError(f"sampling probability must lie in (0, 1], got {p}")
        self.p = float(p)

    def validate(self, W: int | None = None) -> None:
        if not any(self.observed):
            raise ValueError("sample has no observed node")
        unobserved_leaves = [v for v in self.leaves() if not self.observed[v]]
        if unobserved_leaves:
            raise ValueError(f"sample leaves {unobserved_leaves[:5]} are not observed")
        if self.height > self.L:
            raise ValueError(f"sample depth {self.height} exceeds L={self.L}")
        if W is not None and self.max_degree() > W:
            raise ValueError(f"a node has {self.max_degree()} children, more than W={W}")

    @property
    def n_observed(self) -> int:
        return sum(self.observed)

    @classmethod
    def from_nested(cls, nested, L: int, observed: Iterable[int] = (), p: float = 0.5):
        base = Tree.from_nested(nested, L, observed)
        return cls(base.parent, L, base.observed, p)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["p"] = self.p
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SampleTree":
        parents, observed = _parse_nodes(data)
        tree = cls(parents, data["L"], observed, data["p"])
        _check_children(tree, data)
        return tree

    def __eq__(self, other):
        return super().__eq__(other) and self.p == other.p

    def __hash__(self):
        return hash((self.L, self.parent, self.observed, self.p))


def _nested_height(nested) -> int:
    if not nested:
        return 0
    return 1 + max(_nested_height(c) for c in nested)


def _parse_nodes(data: dict):
    nodes = sorted(data["nodes"], key=lambda nd: nd["id"])
    if [nd["id"] for nd in nodes] != list(range(len(nodes))):
        raise ValueError("node ids must be dense integers 0..n-1")
    parents = [nd["parent"] for nd in nodes]
    observed = [bool(nd.get("observed", False)) for nd in nodes]
    return parents, observed


def _check_children(tree: Tree, data: dict) -> None:
    for nd in data["nodes"]:
        if "children" in nd and sorted(nd["children"]) != sorted(tree.children[nd["id"]]):
            raise ValueError(f"children of node {nd['id']} disagree with parent links")


# --------------------------------------------------------------------------
# generation and likelihood


def gw_subtree(theta: OffspringDistribution, height: int, rng: np.random.Generator):
    """Grow a GW subtree of the given height.

    Returns ``(parents, degrees)`` in breadth-first order with the subtree root
    at index 0 and ``parents[0] = None``.  ``degrees`` holds child counts.
    """
    parents: list = [None]
    degrees: list = []
    level = [0]
    probs = theta.array
    for _ in range(height):
        counts = rng.choice(theta.W, size=len(level), p=probs) + 1
        nxt = []
        for u, k in zip(level, counts.tolist()):
            degrees.append(k)
            for _ in range(k):
                parents.append(u)
                nxt.append(len(parents) - 1)
        level = nxt
    degrees.extend([0] * len(level))
    return parents, degrees


def gw_generate(theta: OffspringDistribution, L: int, seed=None) -> Tree:
    """Sample a complete tree of height ``L`` from the GW process."""
    if L < 1:
        raise ValueError("L must be at least 1")
    parents, _ = gw_subtree(theta, L, as_rng(seed))
    return Tree(parents, L)


def offspring_census(tree: Tree, W: int | None = None) -> OffspringCensus:
    """Count internal nodes by number of children (leaves are not counted)."""
    W = tree.max_degree() if W is None else W
    counts = [0] * W
    for kids in tree.children:
        if kids:
            if len(kids) > W:
                raise ValueError(f"node has {len(kids)} children, more than W={W}")
            counts[len(kids) - 1] += 1
    return OffspringCensus(tuple(counts))


def log_prob_tree(tree: Tree, theta: OffspringDistribution) -> float:
    """Log of the product of ``theta_j ** c_j`` over the tree's census."""
    if tree.max_degree() > theta.W:
        raise ValueError(
            f"tree has a node with {tree.max_degree()} children but W={theta.W}"
        )
    census = offspring_census(tree, theta.W)
    total = 0.0
    for c, p in zip(census.counts, theta.probs):
        if c:
            if p == 0.0:
                return -math.inf
            total += c * math.log(p)
    return total


def canonical_form(tree: Tree, v: int = 0) -> tuple:
    """Order-independent nested-tuple encoding of the subtree at ``v``.

    Child forms are sorted in non-increasing order, so two subtrees are
    isomorphic exactly when their forms compare equal.
    """
    forms: dict = {}
    stack = [(v, False)]
    while stack:
        u, done = stack.pop()
        if done:
            forms[u] = tuple(sorted((forms[c] for c in tree.children[u]), reverse=True))
        else:
            stack.append((u, True))
            stack.extend((c, False) for c in tree.children[u])
    return forms[v]
