import math

import numpy as np
import pytest

from gwinfer import (OffspringDistribution, OptimizerConfig, build_sample, build_term_table,
                     draw_sample, estimate_exact, get_catalog, gw_generate, log_prob_tree,
                     log_prob_sample_given_tree, maximize, offspring_census)
from gwinfer.errors import EmptySampleError, InconsistentSampleError
from gwinfer.exact import (alpha_to_theta, gradient, log_likelihood_theta, objective,
                           objective_batch, table_from_terms, theta_to_alpha)
from gwinfer.tree import SampleTree

from conftest import brute_likelihood, example_tree

FAST = OptimizerConfig(starts=2000)


def random_samples(L, W, n, p, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        theta = OffspringDistribution(rng.dirichlet(np.ones(W)))
        try:
            out.append(draw_sample(gw_generate(theta, L, rng), p, rng))
        except EmptySampleError:
            pass
    return out


def test_softmax_round_trip(rng):
    for _ in range(20):
        a = rng.uniform(-5, 5, size=3)
        th = alpha_to_theta(a)
        assert th.sum() == pytest.approx(1.0)
        assert theta_to_alpha(th) == pytest.approx(a, abs=1e-10)
    assert alpha_to_theta(np.ones(2)) == pytest.approx([1 / 3] * 3)


def test_normalization_over_catalog(rng):
    cat = get_catalog(3, 3)
    for _ in range(5):
        theta = OffspringDistribution(rng.dirichlet(np.ones(3)))
        lt = np.log(theta.array)
        total = math.fsum(e.multiplicity * math.exp(float(np.dot(e.census, lt)))
                          for e in cat.entries)
        assert total == pytest.approx(1.0, abs=1e-9)


def test_grouped_table_matches_labeled_brute_force(rng):
    cat = get_catalog(2, 3)
    for s in random_samples(2, 3, 10, 0.5, seed=4):
        table = build_term_table(s, cat)
        nested = _tup(s.to_nested())
        for _ in range(3):
            theta = rng.dirichlet(np.ones(3))
            expect = brute_likelihood(nested, s.n_observed, s.p, theta, 2, 3)
            got = math.exp(log_likelihood_theta(theta, table))
            assert got == pytest.approx(expect, abs=1e-12, rel=1e-10)


def test_recombination_matches_ungrouped_sum(rng):
    cat = get_catalog(3, 3)
    s = random_samples(3, 3, 1, 0.3, seed=9)[0]
    table = build_term_table(s, cat)
    trees = [(e.multiplicity, cat.entry_tree(e.id)) for e in cat.entries]
    ps = [log_prob_sample_given_tree(s, t) for _, t in trees]
    for _ in range(5):
        theta = OffspringDistribution(rng.dirichlet(np.ones(3)))
        direct = math.fsum(m * math.exp(lp + log_prob_tree(t, theta))
                           for (m, t), lp in zip(trees, ps) if lp > -math.inf)
        assert math.exp(log_likelihood_theta(theta.array, table)) == pytest.approx(direct, rel=1e-10)


def test_table_is_grouped_and_consistent():
    s = build_sample(example_tree(), {1, 2, 4}, 0.5)
    table = build_term_table(s, get_catalog(2, 3))
    assert len({tuple(r) for r in table.X}) == len(table)
    assert np.all(table.y == table.X.sum(axis=1))


def test_inconsistent_samples():
    wide = SampleTree.from_nested([[[]], [[]], [[]]], L=2, observed=[2, 4, 6], p=0.5)
    with pytest.raises(InconsistentSampleError):
        build_term_table(wide, W=2)
    with pytest.raises(InconsistentSampleError):
        table_from_terms([((1, 0), -math.inf)], 1, 2)
    short = SampleTree.from_nested([[[]], []], L=2, observed=[0, 1, 2, 3], p=1.0)
    with pytest.raises(InconsistentSampleError):
        build_term_table(short, W=2)


def test_gradient_matches_finite_differences(rng):
    cat = get_catalog(3, 3)
    for s in random_samples(3, 3, 5, 0.3, seed=2):
        table = build_term_table(s, cat)
        for _ in range(4):
            a = rng.uniform(-3, 3, size=2)
            h = 1e-5
            fd = np.array([(objective(a + h * e, table) - objective(a - h * e, table)) / (2 * h)
                           for e in np.eye(2)])
            g = gradient(a, table)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


def test_objective_batch_agrees(rng):
    s = random_samples(3, 3, 1, 0.3, seed=5)[0]
    table = build_term_table(s, get_catalog(3, 3))
    pts = rng.uniform(-10, 10, size=(50, 2))
    assert objective_batch(pts, table) == pytest.approx([objective(a, table) for a in pts])
    theta = alpha_to_theta(pts[0])
    assert log_likelihood_theta(theta, table) == pytest.approx(objective(pts[0], table))


def test_maximize_beats_grid_search():
    cat = get_catalog(2, 3)
    grid = [(a, b, 1 - a - b) for a in np.linspace(0, 1, 201) for b in np.linspace(0, 1, 201)
            if a + b <= 1 + 1e-12]
    grid = np.clip(np.array(grid), 0, 1)
    for s in random_samples(2, 3, 4, 0.5, seed=11):
        table = build_term_table(s, cat)
        fit = maximize(table, FAST)
        vals = np.array([log_likelihood_theta(t, table) for t in grid])
        assert fit.value >= vals.max() - 1e-6
        assert fit.value == pytest.approx(log_likelihood_theta(fit.theta.array, table), abs=1e-9)


def test_maximize_is_seeded():
    s = random_samples(3, 3, 1, 0.2, seed=1)[0]
    table = build_term_table(s, get_catalog(3, 3))
    a = maximize(table, FAST)
    b = maximize(table, FAST)
    assert a.theta.probs == b.theta.probs


def test_full_observation_recovers_census():
    theta = OffspringDistribution([0.2, 0.5, 0.3])
    tree = gw_generate(theta, 6, seed=21)
    assert tree.n_nodes >= 100
    s = draw_sample(tree, 1.0, seed=0)
    fit, table = estimate_exact(s, 3, FAST)
    c = np.array(offspring_census(tree, 3).counts, dtype=float)
    assert len(table) == 1
    assert np.max(np.abs(fit.theta.array - c / c.sum())) < 1e-4


def test_single_child_width():
    s = draw_sample(gw_generate(OffspringDistribution([1.0]), 3, 0), 0.5, 2)
    fit, _ = estimate_exact(s, 1)
    assert fit.theta.probs == (1.0,)


def _tup(nested):
    return tuple(_tup(c) for c in nested)
