import json
import math

import numpy as np
import pytest
from hypothesis import given
from sklearn.metrics import roc_auc_score

from _oracles import transport_lp_value, trapezoid_auc
from conftest import random_distribution, random_weighted_tree, tree_and_distributions
from treeot.metrics import (
    DISTRIBUTION_METRICS,
    MetricReport,
    add_ranking_metrics,
    canberra,
    chebyshev,
    clark,
    cosine,
    distribution_report,
    intersection,
    kl_metric,
    pseudo_recall,
    rank_labels,
    roc_auc,
    top_k_cost,
    wasserstein_metric,
)
from treeot.objective import kl_loss
from treeot.transport import exact_wasserstein
from treeot.tree import build_tree

P = np.array([0.1, 0.2, 0.3, 0.4])


# -- identity and disjoint cases -----------------------------------------------------


def test_identity_cases():
    assert canberra(P, P) == 0.0
    assert chebyshev(P, P) == 0.0
    assert clark(P, P) == 0.0
    assert cosine(P, P) == pytest.approx(1.0, abs=1e-15)
    assert intersection(P, P) == pytest.approx(1.0, abs=1e-15)
    assert kl_metric(P, P) == 0.0


def test_disjoint_cases():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert canberra(a, b) == 2.0
    assert chebyshev(a, b) == 1.0
    assert clark(a, b) == math.sqrt(2)
    assert cosine(a, b) == 0.0
    assert intersection(a, b) == 0.0


def test_worked_values():
    assert chebyshev([0.6, 0.4], [0.5, 0.5]) == pytest.approx(0.1, abs=1e-15)
    assert cosine([0.5, 0.5], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert intersection(np.full(4, 0.25), np.eye(4)[2]) == 0.25
    assert kl_metric([0.5, 0.5], [1.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)


def test_zero_zero_coordinates_contribute_nothing():
    a, b = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    assert canberra(a, b) == 2.0
    assert clark(a, b) == math.sqrt(2)


def test_length_mismatch():
    for f in (canberra, chebyshev, clark, cosine, intersection):
        with pytest.raises(ValueError):
            f([0.5, 0.5], [1.0, 0.0, 0.0])


def test_kl_metric_is_the_training_loss():
    rng = np.random.default_rng(0)
    p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    assert kl_metric(p, q) == kl_loss(p, q)


@given(tree_and_distributions(count=2, max_nodes=30))
def test_ranges(case):
    _, p, q = case
    for f in (canberra, clark, kl_metric):
        assert f(p, q) >= 0
    for f in (chebyshev, cosine, intersection):
        assert -1e-15 <= f(p, q) <= 1 + 1e-15


def test_row_wise_batches():
    rng = np.random.default_rng(1)
    A, B = rng.dirichlet(np.ones(5), 4), rng.dirichlet(np.ones(5), 4)
    for f in (canberra, chebyshev, clark, cosine, intersection):
        np.testing.assert_allclose(f(A, B), [f(a, b) for a, b in zip(A, B)], rtol=0, atol=1e-15)


# -- Wasserstein ----------------------------------------------------------------------


def test_wasserstein_cases(animal_tree):
    I = np.eye(7)
    r = np.random.default_rng(5).dirichlet(np.ones(7))
    assert wasserstein_metric(animal_tree, r, r) == 0.0
    D = animal_tree.distance_matrix()
    for u in range(7):
        for v in range(7):
            assert wasserstein_metric(animal_tree, I[u], I[v]) == D[u, v]
    with pytest.raises(ValueError):
        wasserstein_metric(animal_tree, I[0], I[1], method="magic")


@pytest.mark.parametrize("seed", range(10))
def test_wasserstein_matches_lp(seed):
    rng = np.random.default_rng(seed)
    tree = random_weighted_tree(rng, int(rng.integers(2, 25)))
    p = random_distribution(rng, tree.node_count, sparse=True)
    q = random_distribution(rng, tree.node_count)
    tw = wasserstein_metric(tree, p, q)
    assert abs(tw - exact_wasserstein(tree.distance_matrix(), p, q)[0]) <= 1e-8
    assert abs(tw - wasserstein_metric(tree, p, q, method="lp")) <= 1e-8
    if tree.node_count <= 8:
        assert abs(tw - float(transport_lp_value(tree.distance_matrix(), p, q))) <= 1e-8


# -- ranking -------------------------------------------------------------------------


def test_rank_ties_go_to_lower_id():
    np.testing.assert_array_equal(rank_labels([0.2, 0.5, 0.5, 0.1]), [1, 2, 0, 3])


def test_pseudo_recall_cases():
    assert pseudo_recall([0.9, 0.8, 0.1, 0.0], {0, 1}) == 1.0
    assert pseudo_recall([0.0, 0.1, 0.8, 0.9], {0, 1}) == 0.0
    assert pseudo_recall([0.9, 0.1, 0.8, 0.0], {0, 1}) == 0.5
    # ties: labels 1 and 2 tie, 1 wins
    assert pseudo_recall([0.9, 0.5, 0.5, 0.0], {0, 2}) == 0.5
    with pytest.raises(ValueError):
        pseudo_recall([0.5, 0.5], set())
    with pytest.raises(ValueError):
        pseudo_recall([0.5, 0.5], {2})


def test_top_k_cost_cases(animal_tree):
    ids = {n: animal_tree.node_id(n) for n in animal_tree.labels}
    scores = np.zeros(7)
    scores[ids["dog"]] = 1.0
    assert top_k_cost(animal_tree, scores, {ids["dog"], ids["cat"]}, k=1) == 0.0
    # top label dog, nearest truth cat: dog - mammal - cat
    assert top_k_cost(animal_tree, scores, {ids["cat"], ids["snake"]}, k=1) == 2.0
    # equal scores: the top two are nodes 0 and 1 by index
    flat = np.full(7, 1 / 7)
    assert top_k_cost(animal_tree, flat, {ids["dog"]}, k=2) == (2.0 + 1.0) / 2
    with pytest.raises(ValueError):
        top_k_cost(animal_tree, flat, {0}, k=0)


def test_roc_auc_cases():
    truth = np.array([1, 1, 0, 0])
    assert roc_auc([0.9, 0.8, 0.2, 0.1], truth) == 1.0
    assert roc_auc([0.1, 0.2, 0.8, 0.9], truth) == 0.0
    assert roc_auc([0.5] * 4, truth) == 0.5
    assert math.isnan(roc_auc([0.1, 0.2], [1, 1]))
    assert math.isnan(roc_auc([0.1, 0.2], [0, 0]))
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 0, 1])


@pytest.mark.parametrize("seed", range(100))
def test_roc_auc_matches_roc_curve_area(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, 60))
    truth = rng.random(L) < rng.uniform(0.1, 0.9)
    truth[rng.integers(0, L)] = True
    truth[rng.integers(0, L)] ^= truth.all()
    if truth.all() or not truth.any():
        truth[0], truth[-1] = True, False
    # coarse scores so that ties occur
    scores = np.round(rng.random(L), int(rng.integers(1, 4)))
    got = roc_auc(scores, truth)
    assert abs(got - trapezoid_auc(scores, truth)) <= 1e-10
    assert abs(got - roc_auc_score(truth, scores)) <= 1e-10


def test_ranking_report(animal_tree):
    rng = np.random.default_rng(3)
    S = rng.dirichlet(np.ones(7), 3)
    truths = [{3, 4}, {6}, {0, 5, 6}]
    rep = add_ranking_metrics(distribution_report(animal_tree, S, S), animal_tree, S, truths, k=2)
    for i, t in enumerate(truths):
        assert rep.per_sample["pseudo_recall"][i] == pseudo_recall(S[i], t)
        assert rep.per_sample["top_k_cost"][i] == top_k_cost(animal_tree, S[i], t, 2)
    with pytest.raises(ValueError):
        add_ranking_metrics(rep, animal_tree, S, truths[:2])


# -- permutation equivariance ----------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_metrics_are_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(3, 20))
    tree = random_weighted_tree(rng, L)
    perm = rng.permutation(L)
    moved = tree.relabel(perm)

    def move(x):
        out = np.empty_like(x)
        out[perm] = x
        return out

    p, q = random_distribution(rng, L, sparse=True), random_distribution(rng, L)
    for f in (canberra, chebyshev, clark, cosine, intersection, kl_metric):
        assert abs(f(move(p), move(q)) - f(p, q)) <= 1e-12
    assert abs(wasserstein_metric(moved, move(p), move(q)) - wasserstein_metric(tree, p, q)) <= 1e-12
    truth = set(rng.choice(L, size=2, replace=False).tolist())
    moved_truth = {int(perm[t]) for t in truth}
    # distinct scores so no tie-breaking by id can differ
    s = rng.permutation(L) / L
    assert pseudo_recall(move(s), moved_truth) == pseudo_recall(s, truth)
    assert abs(top_k_cost(moved, move(s), moved_truth, 3) - top_k_cost(tree, s, truth, 3)) <= 1e-12
    mask = np.zeros(L, dtype=bool)
    mask[list(truth)] = True
    assert roc_auc(move(s), move(mask)) == roc_auc(s, mask)


# -- reports ---------------------------------------------------------------------------


def test_report_json_and_csv_agree(animal_tree):
    rng = np.random.default_rng(4)
    A, B = rng.dirichlet(np.ones(7), 6), rng.dirichlet(np.ones(7), 6)
    rep = distribution_report(animal_tree, A, B)
    assert tuple(rep.per_sample) == DISTRIBUTION_METRICS and rep.n == 6
    summary = json.loads(rep.to_json())
    back = MetricReport.from_csv(rep.to_csv())
    for name in DISTRIBUTION_METRICS:
        np.testing.assert_array_equal(back.per_sample[name], rep.per_sample[name])
        assert summary[name]["mean"] == pytest.approx(np.mean(back.per_sample[name]), rel=1e-15)
        assert summary[name]["n"] == 6
    lp = distribution_report(animal_tree, A, B, wasserstein_method="lp")
    np.testing.assert_allclose(lp.per_sample["wasserstein"], rep.per_sample["wasserstein"], atol=1e-8)


def test_report_skips_undefined_values_in_means():
    rep = MetricReport({"roc_auc": np.array([1.0, np.nan, 0.5])})
    assert rep["roc_auc"] == 0.75
    assert rep.summary()["roc_auc"]["n"] == 2
