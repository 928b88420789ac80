import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize

from conftest import central_jacobian, random_batch
from streamglm.batch import Batch, concat
from streamglm.errors import InvalidInputError, NonConvergenceError
from streamglm.propensity import (PI_FLOOR, PropensityState, h_batch, propensity,
                                  update_alpha, v_batch, weight_denominator)
from streamglm.simgen import ALPHA_4D, generate_stream


def logistic_root(x, delta):
    """Independent MLE oracle: root of the logistic score by MINPACK."""
    def score(a):
        return x.T @ (delta - 1 / (1 + np.exp(-x @ a)))
    return optimize.root(score, np.zeros(x.shape[1]), tol=1e-14).x


def test_propensity_at_zero_predictor():
    assert propensity(np.zeros(4), ALPHA_4D) == 0.5


def test_propensity_hand_value():
    assert_allclose(propensity([1.0, 0, 0, 0], ALPHA_4D), 1 / (1 + np.exp(-0.5)), rtol=1e-15)
    assert_allclose(propensity([1.0, 0, 0, 0], ALPHA_4D), 0.62246, atol=5e-6)


def test_weight_denominator_floor():
    pi = propensity([1.0], [-40.0])
    assert pi < PI_FLOOR
    assert weight_denominator(pi) == PI_FLOOR


def test_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        propensity(np.zeros(3), ALPHA_4D)


def test_v_batch_zero_covariates():
    b = Batch([1.0, 0.0], [1.0, np.nan], np.zeros((2, 3)))
    assert_allclose(v_batch(b, [1.0, 2.0, 3.0]), 0.0)
    assert_allclose(h_batch(b, [1.0, 2.0, 3.0]), 0.0)


def test_single_observation_hand_values():
    b = Batch([1.0], [0.0], [[1.0, 0.0]])
    assert_allclose(v_batch(b, [0.0, 0.0]), [0.5, 0.0])
    assert_allclose(h_batch(b, [0.0, 0.0]), [[0.25, 0.0], [0.0, 0.0]])


def test_v_batch_matches_loop(rng):
    b = random_batch(rng, 50, 4)
    alpha = rng.normal(size=4)
    ref = np.zeros(4)
    for i in range(b.n):
        pi = 1.0 / (1.0 + np.exp(-np.dot(b.x[i], alpha)))
        ref += b.x[i] * (b.delta[i] - pi)
    assert_allclose(v_batch(b, alpha), ref / b.n, rtol=1e-12, atol=1e-14)


def test_h_is_negative_jacobian_of_v(rng):
    for _ in range(20):
        b = random_batch(rng, 40, 3)
        alpha = rng.normal(size=3)
        fd = -central_jacobian(lambda a: v_batch(b, a), alpha)
        assert_allclose(h_batch(b, alpha), fd, rtol=1e-6, atol=1e-9)


def test_empty_batch_rejected():
    b = Batch(np.zeros(0), np.zeros(0), np.zeros((0, 2)))
    with pytest.raises(InvalidInputError):
        v_batch(b, [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        update_alpha(PropensityState.initial(2), b)


def test_first_batch_is_logistic_mle(rng):
    b = random_batch(rng, 500, 4, miss=0.4)
    s = update_alpha(PropensityState.initial(4), b)
    assert_allclose(s.alpha_hat, logistic_root(b.x, b.delta), atol=1e-8)
    assert s.batch_count == 1 and s.n_total == 500


def test_repeated_batch_is_a_fixed_point(rng):
    b = random_batch(rng, 400, 3, miss=0.4)
    s1 = update_alpha(PropensityState.initial(3), b)
    s2 = update_alpha(s1, b)
    assert_allclose(s2.alpha_hat, s1.alpha_hat, atol=1e-6)


def test_information_is_symmetric_psd_and_grows(rng):
    s = PropensityState.initial(3)
    for _ in range(5):
        prev = s.H_tilde
        s = update_alpha(s, random_batch(rng, 100, 3))
        assert_allclose(s.H_tilde, s.H_tilde.T, atol=1e-12)
        assert np.linalg.eigvalsh(s.H_tilde - prev).min() > -1e-10
    assert np.linalg.eigvalsh(s.H_tilde).min() > 0
    assert s.n_total == 500


def test_stream_recovers_true_alpha():
    s = PropensityState.initial(4)
    for b in generate_stream("linear_4d", 100, 1000, seed=3):
        s = update_alpha(s, b)
    assert np.max(np.abs(s.alpha_hat - ALPHA_4D)) < 0.05


def test_stream_tracks_full_data_mle():
    gaps = []
    for rep in range(100):
        batches = generate_stream("linear_4d", 50, 1000, seed=17, replication=rep)
        s = PropensityState.initial(4)
        for b in batches:
            s = update_alpha(s, b)
        pooled = concat(batches)
        gaps.append(np.linalg.norm(s.alpha_hat - logistic_root(pooled.x, pooled.delta)))
    assert np.mean(gaps) < 0.01


def test_frozen_and_known_modes_only_count(rng):
    b = random_batch(rng, 30, 2)
    fixed = update_alpha(PropensityState.fixed([0.3, -0.2]), b)
    assert_allclose(fixed.alpha_hat, [0.3, -0.2])
    assert fixed.n_total == 30 and fixed.batch_count == 1
    known = update_alpha(PropensityState.known(0.7, 2), b)
    assert known.known_pi == 0.7
    assert_allclose(known.probabilities(b.x), 0.7)
    with pytest.raises(InvalidInputError):
        PropensityState.known(0.0, 2)


def test_iteration_cap_raises(rng):
    b = random_batch(rng, 200, 3, miss=0.4)
    with pytest.raises(NonConvergenceError) as err:
        update_alpha(PropensityState.initial(3), b, max_iter=1)
    assert err.value.last_iterate is not None
