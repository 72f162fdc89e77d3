import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starfcdc.metrics import (ari, contingency_table, evaluate_labels, hungarian_accuracy, nmi,
                              silhouette)


def brute_force_accuracy(pred, truth):
    """Best accuracy over every injective relabeling of predicted clusters."""
    clusters = sorted(set(pred))
    classes = sorted(set(truth))
    pad = classes + [None] * max(0, len(clusters) - len(classes))
    best = 0
    for perm in itertools.permutations(pad, len(clusters)):
        mapping = dict(zip(clusters, perm))
        best = max(best, sum(mapping[p] == t for p, t in zip(pred, truth)))
    return best / len(pred)


def pair_counting_ari(pred, truth):
    n = len(pred)
    pairs = list(itertools.combinations(range(n), 2))
    both = sum(pred[i] == pred[j] and truth[i] == truth[j] for i, j in pairs)
    same_p = sum(pred[i] == pred[j] for i, j in pairs)
    same_t = sum(truth[i] == truth[j] for i, j in pairs)
    expected = same_p * same_t / len(pairs)
    maximum = (same_p + same_t) / 2
    if maximum == expected:
        return None
    return (both - expected) / (maximum - expected)


def brute_silhouette(X, labels):
    n = len(X)
    out = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            out.append(0.0)
            continue
        a = sum(np.linalg.norm(X[i] - X[j]) for j in own) / len(own)
        b = min(
            sum(np.linalg.norm(X[i] - X[j]) for j in range(n) if labels[j] == c)
            / sum(1 for j in range(n) if labels[j] == c)
            for c in set(labels) if c != labels[i])
        out.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return sum(out) / n


class TestContingency:
    def test_marginals(self):
        t = contingency_table([0, 0, 1, 2, 2], [1, 1, 0, 0, 1])
        assert t.sum() == 5
        assert list(t.sum(axis=1)) == [2, 1, 2]
        assert list(t.sum(axis=0)) == [2, 3]


class TestAccuracy:
    def test_relabeling(self):
        assert hungarian_accuracy([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0

    def test_hand_value(self):
        assert hungarian_accuracy([0, 1, 1], [0, 0, 1]) == pytest.approx(2 / 3)
        assert brute_force_accuracy([0, 1, 1], [0, 0, 1]) == pytest.approx(2 / 3)

    def test_identity(self):
        assert hungarian_accuracy([2, 0, 1, 1], [2, 0, 1, 1]) == 1.0

    def test_matches_permutation_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 13))
            pred = list(rng.integers(0, int(rng.integers(1, 6)), n))
            truth = list(rng.integers(0, int(rng.integers(1, 6)), n))
            assert hungarian_accuracy(pred, truth) == pytest.approx(brute_force_accuracy(pred, truth))

    def test_errors(self):
        with pytest.raises(ValueError):
            hungarian_accuracy([0, 1], [0])
        with pytest.raises(ValueError):
            hungarian_accuracy([], [])


class TestARI:
    def test_identical(self):
        assert ari([0, 0, 1, 2], [5, 5, 3, 4]) == 1.0

    def test_pair_oracle_hand_case(self):
        assert ari([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(pair_counting_ari([0, 0, 1, 1], [0, 0, 0, 1]))

    def test_pair_oracle_random(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            n = int(rng.integers(2, 11))
            pred = list(rng.integers(0, 4, n))
            truth = list(rng.integers(0, 4, n))
            want = pair_counting_ari(pred, truth)
            got = ari(pred, truth)
            if want is None:
                assert got in (0.0, 1.0)
            else:
                assert got == pytest.approx(want, abs=1e-12)

    def test_chance_level(self):
        rng = np.random.default_rng(2)
        vals = [ari(rng.integers(0, 4, 200), rng.integers(0, 4, 200)) for _ in range(100)]
        assert abs(np.mean(vals)) <= 0.05

    def test_degenerate_conventions(self):
        assert ari([0, 0, 0], [1, 1, 1]) == 1.0
        assert ari([0, 1, 2], [0, 1, 2]) == 1.0
        assert ari([0, 0, 0], [0, 1, 2]) == 0.0

    def test_against_sklearn(self):
        sk = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(3)
        a, b = rng.integers(0, 5, 100), rng.integers(0, 3, 100)
        assert ari(a, b) == pytest.approx(sk.adjusted_rand_score(b, a), abs=1e-12)


class TestNMI:
    def test_identical(self):
        assert nmi([0, 0, 1, 1, 2], [3, 3, 4, 4, 5]) == pytest.approx(1.0)

    def test_single_cluster(self):
        assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0

    def test_both_constant(self):
        assert nmi([1, 1], [0, 0]) == 1.0

    def test_independent(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        # pred (0,0,1), truth (0,1,1): MI = (2/3) ln 2 - ... computed from the joint table
        joint = {(0, 0): 1 / 3, (0, 1): 1 / 3, (1, 1): 1 / 3}
        pp = {0: 2 / 3, 1: 1 / 3}
        pt = {0: 1 / 3, 1: 2 / 3}
        mi = sum(p * math.log(p / (pp[a] * pt[b])) for (a, b), p in joint.items())
        h = -(2 / 3 * math.log(2 / 3) + 1 / 3 * math.log(1 / 3))
        assert nmi([0, 0, 1], [0, 1, 1]) == pytest.approx(mi / h, rel=1e-12)

    def test_against_sklearn(self):
        sk = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(4)
        a, b = rng.integers(0, 5, 100), rng.integers(0, 3, 100)
        assert nmi(a, b) == pytest.approx(
            sk.normalized_mutual_info_score(b, a, average_method="arithmetic"), abs=1e-12)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=30),
       st.permutations(range(4)), st.permutations(range(4)))
def test_label_permutation_and_symmetry(pairs, perm_a, perm_b):
    pred = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    pred2 = [perm_a[p] for p in pred]
    truth2 = [perm_b[t] for t in truth]
    assert hungarian_accuracy(pred, truth) == pytest.approx(hungarian_accuracy(pred2, truth2))
    assert ari(pred, truth) == pytest.approx(ari(pred2, truth2))
    assert nmi(pred, truth) == pytest.approx(nmi(pred2, truth2))
    assert ari(pred, truth) == pytest.approx(ari(truth, pred))
    assert nmi(pred, truth) == pytest.approx(nmi(truth, pred))
    assert 0.0 <= nmi(pred, truth) <= 1.0
    assert -1.0 <= ari(pred, truth) <= 1.0


def test_perfect_clustering_all_one():
    labels = [0, 1, 1, 2, 2, 2]
    assert hungarian_accuracy(labels, labels) == ari(labels, labels) == nmi(labels, labels) == 1.0


class TestSilhouette:
    def test_two_tight_pairs(self):
        X = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
        s = silhouette(X, [0, 0, 1, 1])
        assert s > 0.9
        assert s == pytest.approx(brute_silhouette(X, [0, 0, 1, 1]))

    def test_identical_points(self):
        assert silhouette(np.zeros((4, 3)), [0, 0, 1, 1]) == 0.0

    def test_matches_reference(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            X = rng.normal(size=(50, 3))
            labels = list(rng.integers(0, 4, 50))
            assert silhouette(X, labels, chunk=17) == pytest.approx(brute_silhouette(X, labels), abs=1e-10)

    def test_singletons_score_zero(self):
        X = np.array([[0.0], [1.0], [5.0]])
        assert silhouette(X, [0, 0, 1]) == pytest.approx(brute_silhouette(X, [0, 0, 1]))

    def test_single_cluster_error(self):
        with pytest.raises(ValueError):
            silhouette(np.zeros((3, 2)), [0, 0, 0])

    def test_against_sklearn(self):
        sk = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(6)
        X = rng.normal(size=(80, 4))
        labels = rng.integers(0, 3, 80)
        assert silhouette(X, labels) == pytest.approx(sk.silhouette_score(X, labels), abs=1e-10)


def test_eval_report_ranges():
    rep = evaluate_labels([0, 0, 1, 1], [1, 1, 0, 0], np.array([[0.0], [0.1], [1.0], [1.1]]), K=2)
    assert (rep.acc, rep.ari, rep.nmi) == (1.0, 1.0, 1.0)
    assert '"mechanism": "clustering"' in rep.to_json()
