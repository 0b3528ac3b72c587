import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gwinfer import (OffspringDistribution, SampleTree, Tree, canonical_form, gw_generate,
                     log_prob_tree, offspring_census)
from gwinfer.tree import OffspringCensus

from conftest import canon, example_tree, nested_census, ordered_trees


def test_distribution_validation():
    with pytest.raises(ValueError):
        OffspringDistribution([0.5, 0.6])
    with pytest.raises(ValueError):
        OffspringDistribution([-0.1, 1.1])
    d = OffspringDistribution([1, 1, 2], normalize=True)
    assert d.probs == pytest.approx((0.25, 0.25, 0.5))
    assert d.W == 3
    assert d.mean() == pytest.approx(2.25)
    assert OffspringDistribution.uniform(4).probs == (0.25,) * 4


def test_census_indexing():
    c = OffspringCensus((2, 0, 5))
    assert c[1] == 2 and c[3] == 5
    assert c.total == 7


def test_example_tree_probability():
    g = example_tree()
    assert g.children == ((1, 4), (2, 3), (), (), (5,), ())
    assert offspring_census(g, 3).counts == (1, 2, 0)
    theta = OffspringDistribution([0.3, 0.6, 0.1])
    assert math.exp(log_prob_tree(g, theta)) == pytest.approx(0.108, abs=1e-15)


def test_log_prob_edge_cases():
    g = Tree.from_nested([[[], [], []]])
    with pytest.raises(ValueError):
        log_prob_tree(g, OffspringDistribution([0.5, 0.5]))
    assert log_prob_tree(g, OffspringDistribution([1.0, 0.0, 0.0])) == -math.inf


def test_validate_rejects_short_leaves():
    t = Tree.from_nested([[[]], []], L=2)
    assert not t.is_complete()
    with pytest.raises(ValueError):
        t.validate()
    with pytest.raises(ValueError):
        Tree([None, 0, None], 1)
    with pytest.raises(ValueError):
        Tree([None, 2, 1], 1)


def test_gw_generate_is_complete_and_seeded():
    theta = OffspringDistribution([0.2, 0.5, 0.3])
    a = gw_generate(theta, 3, seed=7)
    b = gw_generate(theta, 3, seed=7)
    assert a == b
    a.validate(3)
    assert a.height == 3


def test_theta_one_gives_a_path():
    t = gw_generate(OffspringDistribution([1.0, 0.0]), 4, seed=1)
    assert t.n_nodes == 5 and t.max_degree() == 1


def test_gw_generate_law_matches_enumeration():
    """Frequencies of generated (2,2) shapes match P(G|theta) times class size."""
    theta = OffspringDistribution([0.4, 0.6])
    rng = np.random.default_rng(3)
    n = 20000
    freq = {}
    for _ in range(n):
        t = gw_generate(theta, 2, rng)
        f = canonical_form(t)
        freq[f] = freq.get(f, 0) + 1
    expect = {}
    for g in ordered_trees(2, 2):
        expect[canon(g)] = expect.get(canon(g), 0) + math.prod(
            th**k for th, k in zip(theta.probs, nested_census(g, 2)))
    assert sum(expect.values()) == pytest.approx(1.0)
    for f, pr in expect.items():
        assert freq.get(f, 0) / n == pytest.approx(pr, abs=0.015)


def test_mean_size_small_class():
    theta = OffspringDistribution([0.2, 0.5, 0.3])
    rng = np.random.default_rng(0)
    sizes = [gw_generate(theta, 3, rng).n_nodes for _ in range(4000)]
    # 1 + m + m^2 + m^3 with m = 2.1
    assert np.mean(sizes) == pytest.approx(1 + 2.1 + 2.1**2 + 2.1**3, rel=0.03)


def test_canonical_form_ignores_child_order():
    a = Tree.from_nested([[[], []], [[]]])
    b = Tree.from_nested([[[]], [[], []]])
    assert canonical_form(a) == canonical_form(b)
    assert canonical_form(a) != canonical_form(Tree.from_nested([[[]], [[]]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_tree_json_round_trip(seed, L):
    theta = OffspringDistribution([0.3, 0.4, 0.3])
    t = gw_generate(theta, L, seed)
    t = t.with_observed(range(0, t.n_nodes, 2))
    back = Tree.from_dict(json.loads(json.dumps(t.to_dict())))
    assert back == t and back.observed == t.observed
    assert Tree.from_nested(t.to_nested()).to_nested() == t.to_nested()


def test_sample_tree_round_trip_and_validation():
    s = SampleTree.from_nested([[[]], []], L=3, observed=[2, 3], p=0.25)
    s.validate()
    back = SampleTree.from_dict(json.loads(json.dumps(s.to_dict())))
    assert back == s and back.p == 0.25
    bad = SampleTree.from_nested([[[]], []], L=3, observed=[2], p=0.25)
    with pytest.raises(ValueError):
        bad.validate()


def test_from_dict_rejects_inconsistent_children():
    d = example_tree().to_dict()
    d["nodes"][0]["children"] = [1, 5]
    with pytest.raises(ValueError):
        Tree.from_dict(d)
