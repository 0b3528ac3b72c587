"""Counting and enumerating trees of bounded height and degree.

Two spaces are involved.  The *labeled* space holds every ordered tree of
height ``L`` whose internal nodes have 1..W children.  The *non-isomorphic*
catalog keeps one representative per isomorphism class together with its
multiplicity, the number of ordered trees in the class.

Catalog entries of height ``h`` are multisets of height ``h-1`` entry ids,
stored as non-increasing tuples, so no two entries can be isomorphic.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path

from .errors import CapacityError
from .tree import Tree

__all__ = [
    "CatalogEntry",
    "NonIsoCatalog",
    "count_all",
    "count_noniso",
    "enumerate_noniso",
    "multiplicity",
    "class_multiplicity",
    "automorphism_count",
    "catalog_filename",
    "save_catalog",
    "load_catalog",
    "get_catalog",
    "DEFAULT_BUDGET",
]

DEFAULT_BUDGET = 100_000


def count_all(L: int, W: int) -> int:
    """Number of ordered trees of height ``L`` with out-degrees in 1..W."""
    if L < 1 or W < 1:
        raise ValueError("L and W must be at least 1")
    n = W
    for _ in range(L - 1):
        n = sum(n**i for i in range(1, W + 1))
    return n


def count_noniso(L: int, W: int) -> int:
    """Number of isomorphism classes among the trees counted by :func:`count_all`."""
    if L < 1 or W < 1:
        raise ValueError("L and W must be at least 1")
    n = W
    for _ in range(L - 1):
        # (W+1) * C(W+n, W+1) / n - 1, always an exact division
        num = (W + 1) * math.comb(W + n, W + 1)
        q, r = divmod(num, n)
        assert r == 0
        n = q - 1
    return n


@dataclass(frozen=True)
class CatalogEntry:
    id: int
    height: int
    children: tuple          # child ids at height-1, non-increasing
    multiplicity: int
    census: tuple            # c_1..c_W over internal nodes
    n_nodes: int


@dataclass
class NonIsoCatalog:
    """Non-isomorphic trees for every height ``0..L`` with width ``W``.

    ``levels[h]`` lists the entries of height ``h``; ``levels[0]`` holds the
    single-node tree.  ``entries`` is the top level.
    """

    L: int
    W: int
    levels: list
    _index: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = [{e.children: e.id for e in lvl} for lvl in self.levels]

    @property
    def entries(self) -> list:
        return self.levels[self.L]

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, children, height: int | None = None) -> int:
        """Id of the entry whose root has the given child-id multiset."""
        h = self.L if height is None else height
        key = tuple(sorted(children, reverse=True))
        return self._index[h][key]

    def entry_tree(self, entry_id: int, height: int | None = None) -> Tree:
        """Expand an entry into a :class:`Tree` (children in stored order)."""
        h = self.L if height is None else height
        parents = [None]
        stack = [(h, entry_id, 0)]
        while stack:
            lvl, eid, node = stack.pop()
            if lvl == 0:
                continue
            for cid in self.levels[lvl][eid].children:
                parents.append(node)
                stack.append((lvl - 1, cid, len(parents) - 1))
        return Tree(parents, h)

    def entry_form(self, entry_id: int, height: int | None = None) -> tuple:
        """Nested-tuple form with children in non-increasing id order."""
        h = self.L if height is None else height
        if h == 0:
            return ()
        return tuple(self.entry_form(c, h - 1) for c in self.levels[h][entry_id].children)

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "W": self.W,
            "levels": [
                [
                    {
                        "id": e.id,
                        "children": list(e.children),
                        "multiplicity": str(e.multiplicity),
                        "census": list(e.census),
                        "n_nodes": e.n_nodes,
                    }
                    for e in lvl
                ]
                for lvl in self.levels
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NonIsoCatalog":
        levels = []
        for h, lvl in enumerate(data["levels"]):
            levels.append([
                CatalogEntry(
                    id=e["id"],
                    height=h,
                    children=tuple(e["children"]),
                    multiplicity=int(e["multiplicity"]),
                    census=tuple(e["census"]),
                    n_nodes=e["n_nodes"],
                )
                for e in lvl
            ])
        return cls(data["L"], data["W"], levels)


def multiplicity(entry: CatalogEntry, prev_level) -> int:
    """Ordered trees collapsing to ``entry`` given the previous level's entries.

    ``j! * prod(m_child) / prod(repeats!)``; 1 for a height-1 or single-node tree.
    """
    if entry.height <= 1:
        return 1
    j = len(entry.children)
    num = math.factorial(j)
    for cid in entry.children:
        num *= prev_level[cid].multiplicity
    den = 1
    for rep in Counter(entry.children).values():
        den *= math.factorial(rep)
    return num // den


def _magnitude(n: int) -> str:
    """Readable size of a possibly enormous integer."""
    if n < 10**15:
        return str(n)
    digits = n.bit_length() * math.log10(2)
    if digits < 300:
        return f"{float(n):.3g}"
    return f"about 10^{int(digits)}"


def enumerate_noniso(L: int, W: int, budget: int = DEFAULT_BUDGET) -> NonIsoCatalog:
    """Enumerate representatives of all isomorphism classes for ``(L, W)``.

    Raises :class:`CapacityError` when the top level would exceed ``budget``.
    """
    if W < 1 or L < 1:
        raise ValueError("L and W must be at least 1")
    size = count_noniso(L, W)
    if size > budget:
        raise CapacityError(
            f"(L={L}, W={W}) has {_magnitude(size)} non-isomorphic trees, "
            f"over the budget of {budget}"
        )
    leaf = CatalogEntry(0, 0, (), 1, (0,) * W, 1)
    levels = [[leaf]]
    for h in range(1, L + 1):
        prev = levels[-1]
        ids_desc = range(len(prev) - 1, -1, -1)
        level = []
        for j in range(1, W + 1):
            for combo in combinations_with_replacement(ids_desc, j):
                census = [0] * W
                census[j - 1] = 1
                n_nodes = 1
                for cid in combo:
                    child = prev[cid]
                    n_nodes += child.n_nodes
                    for k, c in enumerate(child.census):
                        census[k] += c
                entry = CatalogEntry(len(level), h, combo, 0, tuple(census), n_nodes)
                mult = multiplicity(entry, prev)
                level.append(CatalogEntry(entry.id, h, combo, mult, entry.census, n_nodes))
        levels.append(level)
    return NonIsoCatalog(L, W, levels)


def _class_counts(tree: Tree, v: int):
    """Return (canonical form, multiplicity, automorphisms) for subtree ``v``."""
    info = {}
    stack = [(v, False)]
    while stack:
        u, done = stack.pop()
        if not done:
            stack.append((u, True))
            stack.extend((c, False) for c in tree.children[u])
            continue
        kids = [info[c] for c in tree.children[u]]
        form = tuple(sorted((k[0] for k in kids), reverse=True))
        mult = math.factorial(len(kids))
        aut = 1
        for _, m, a in kids:
            mult *= m
            aut *= a
        for rep in Counter(k[0] for k in kids).values():
            mult //= math.factorial(rep)
            aut *= math.factorial(rep)
        info[u] = (form, mult, aut)
    return info[v]


def class_multiplicity(tree: Tree, v: int = 0) -> int:
    """Number of ordered trees isomorphic to the subtree rooted at ``v``."""
    return _class_counts(tree, v)[1]


def automorphism_count(tree: Tree, v: int = 0) -> int:
    """Size of the automorphism group of the unordered subtree at ``v``."""
    return _class_counts(tree, v)[2]


# --------------------------------------------------------------------------
# persistence


def catalog_filename(L: int, W: int) -> str:
    return f"catalog_L{L}_W{W}.json"


def save_catalog(catalog: NonIsoCatalog, directory) -> Path:
    path = Path(directory) / catalog_filename(catalog.L, catalog.W)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w") as fh:
        json.dump(catalog.to_dict(), fh)
    os.replace(tmp, path)
    return path


def load_catalog(path) -> NonIsoCatalog:
    with open(path) as fh:
        return NonIsoCatalog.from_dict(json.load(fh))


_MEMORY_CACHE: dict = {}


def get_catalog(L: int, W: int, cache_dir=None, budget: int = DEFAULT_BUDGET) -> NonIsoCatalog:
    """Load the ``(L, W)`` catalog from ``cache_dir`` or enumerate and store it."""
    key = (L, W)
    if key in _MEMORY_CACHE:
        catalog = _MEMORY_CACHE[key]
        if cache_dir is not None and not (Path(cache_dir) / catalog_filename(L, W)).exists():
            save_catalog(catalog, cache_dir)
        return catalog
    if count_noniso(L, W) > budget:
        raise CapacityError(
            f"(L={L}, W={W}) has {_magnitude(count_noniso(L, W))} non-isomorphic trees, "
            f"over the budget of {budget}"
        )
    catalog = None
    if cache_dir is not None:
        path = Path(cache_dir) / catalog_filename(L, W)
        if path.exists():
            catalog = load_catalog(path)
    if catalog is None:
        catalog = enumerate_noniso(L, W, budget)
        if cache_dir is not None:
            save_catalog(catalog, cache_dir)
    _MEMORY_CACHE[key] = catalog
    return catalog
