"""Shared brute-force oracles.

Everything here is written independently of the package internals: trees
are plain nested tuples and counts come from explicit enumeration.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from gwinfer import Tree


def ordered_trees(L: int, W: int):
    """All ordered trees with leaves at depth ``L`` and out-degrees in 1..W."""
    if L == 0:
        return [()]
    sub = ordered_trees(L - 1, W)
    out = []
    for d in range(1, W + 1):
        out.extend(itertools.product(sub, repeat=d))
    return out


def nested_census(t, W: int) -> list:
    c = [0] * W
    stack = [t]
    while stack:
        node = stack.pop()
        if node:
            c[len(node) - 1] += 1
            stack.extend(node)
    return c


def nested_size(t) -> int:
    return 1 + sum(nested_size(c) for c in t)


def nested_prob(t, theta) -> float:
    return math.prod(th**k for th, k in zip(theta, nested_census(t, len(theta))))


def embeddings(s, g) -> int:
    """Root-preserving maps of nested tree ``s`` into ``g`` that keep parent
    links and send siblings to distinct siblings."""
    if len(s) > len(g):
        return 0
    total = 0
    for cols in itertools.permutations(range(len(g)), len(s)):
        prod = 1
        for sc, j in zip(s, cols):
            prod *= embeddings(sc, g[j])
            if prod == 0:
                break
        total += prod
    return total


def canon(t):
    return tuple(sorted((canon(c) for c in t), reverse=True))


def automorphisms(t) -> int:
    """Automorphism count by brute force: permutations of each node's children
    that map every child onto an isomorphic one.  These are exactly the
    embeddings of the tree into itself."""
    return embeddings(t, t)


def brute_likelihood(sample_nested, n_obs: int, p: float, theta, L: int, W: int) -> float:
    """``sum_G P(G|theta) C_{G,S} p^|V'| (1-p)^(|V_G|-|V'|)`` over ordered trees."""
    total = 0.0
    for g in ordered_trees(L, W):
        c = embeddings(sample_nested, g)
        if c:
            n = nested_size(g)
            total += nested_prob(g, theta) * c * p**n_obs * (1 - p) ** (n - n_obs)
    return total


def example_tree() -> Tree:
    return Tree.from_nested([[[], []], [[]]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report -------------------------------------------------------

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
