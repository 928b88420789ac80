import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

from streamglm.errors import InvalidInputError
from streamglm.glm import Family
from streamglm.metrics import accuracy, auc
from streamglm.simgen import BETA_LOGISTIC, gen_logistic_batch


def _pairwise_auc(y, s):
    pos, neg = s[y == 1], s[y == 0]
    diff = pos[:, None] - neg[None, :]
    return (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size


def test_perfect_separation():
    y = np.array([0, 0, 0, 1, 1.0])
    s = np.array([0.1, 0.2, 0.3, 0.8, 0.9])
    assert auc(y, s) == 1.0
    assert auc(y, -s) == 0.0
    assert accuracy(y, s) == 1.0


def test_null_scores_give_half():
    rng = np.random.default_rng(31)
    y = (rng.uniform(size=10_000) < 0.4).astype(float)
    assert abs(auc(y, rng.uniform(size=10_000)) - 0.5) < 0.02


def test_logistic_holdout_matches_reference():
    b = gen_logistic_batch(20_000, np.random.default_rng(32), all_observed=True)
    scores = Family.BERNOULLI.mean(b.x @ BETA_LOGISTIC)
    assert abs(auc(b.y, scores) - roc_auc_score(b.y, scores)) < 0.01
    assert auc(b.y, scores) == pytest.approx(roc_auc_score(b.y, scores), abs=1e-12)


def test_ties_count_half():
    y = np.array([0, 1, 0, 1.0])
    s = np.array([0.5, 0.5, 0.2, 0.9])
    assert auc(y, s) == pytest.approx(0.875)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 5)), min_size=2, max_size=40))
def test_matches_pairwise_count(rows):
    y = np.array([r[0] for r in rows], dtype=float)
    s = np.array([r[1] for r in rows], dtype=float)
    if y.min() == y.max():
        with pytest.raises(InvalidInputError):
            auc(y, s)
        return
    assert auc(y, s) == pytest.approx(_pairwise_auc(y, s), abs=1e-12)


def test_accuracy_threshold_inclusive():
    y = np.array([1, 0, 1, 0.0])
    s = np.array([0.5, 0.49, 0.7, 0.8])
    assert accuracy(y, s) == 0.75
    assert accuracy(y, s, threshold=0.75) == 0.25


@pytest.mark.parametrize("y", [[0, 2, 1], [0.5, 1, 0], [[0, 1]]])
def test_non_binary_labels_rejected(y):
    with pytest.raises(InvalidInputError):
        auc(np.array(y, dtype=float), np.zeros(np.size(y)))


def test_length_mismatch_rejected():
    with pytest.raises(InvalidInputError):
        auc(np.array([0, 1.0]), np.zeros(3))
