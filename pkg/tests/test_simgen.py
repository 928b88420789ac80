import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate, optimize, special

from streamglm.errors import InvalidInputError
from streamglm.simgen import (ALPHA_4D, BETA_LINEAR, BETA_LOGISTIC, Design, DesignSpec,
                              batch_rng, gen_hetero_batch, gen_linear_batch, gen_logistic_batch,
                              generate_batch, generate_stream, hetero_gamma, run_experiment,
                              run_replication)

NODES, WEIGHTS = np.polynomial.hermite_e.hermegauss(80)


def _expected_expit(c):
    """E[expit(c[0] U1 + c[1] U2 + c[2] N1 + c[3] N2)], U ~ U(0,1), N ~ N(0,1)."""
    sd = np.hypot(c[2], c[3])

    def inner(u1, u2):
        return WEIGHTS @ special.expit(c[0] * u1 + c[1] * u2 + sd * NODES) / np.sqrt(2 * np.pi)

    return integrate.dblquad(inner, 0, 1, 0, 1, epsabs=1e-10)[0]


def _logistic_mle(x, y):
    def nll(b):
        eta = x @ b
        return np.sum(np.logaddexp(0, eta) - y * eta), x.T @ (special.expit(eta) - y)

    return optimize.minimize(nll, np.zeros(x.shape[1]), jac=True, method="BFGS",
                             options={"gtol": 1e-8}).x


@pytest.fixture(scope="module")
def big_linear():
    return gen_linear_batch(10**6, np.random.default_rng(1))


def test_missingness_rate_matches_quadrature(big_linear):
    expected = 1.0 - _expected_expit(ALPHA_4D)
    assert abs(np.mean(big_linear.delta == 0) - expected) < 0.005


def test_linear_residual_variance(big_linear):
    obs = big_linear.observed
    resid = big_linear.y[obs] - big_linear.x[obs] @ BETA_LINEAR
    assert abs(resid.var() - 1.0) < 0.02


def test_linear_complete_ols_recovers_coefficients():
    b = gen_linear_batch(10**6, np.random.default_rng(2), all_observed=True)
    assert np.all(b.delta == 1)
    beta, *_ = np.linalg.lstsq(b.x, b.y, rcond=None)
    assert np.max(np.abs(beta - BETA_LINEAR)) < 0.01


def test_logistic_mean_matches_quadrature():
    b = gen_logistic_batch(10**6, np.random.default_rng(3), all_observed=True)
    assert abs(b.y.mean() - _expected_expit(BETA_LOGISTIC)) < 0.005
    assert set(np.unique(b.y)) == {0.0, 1.0}


def test_logistic_complete_mle_recovers_coefficients():
    b = gen_logistic_batch(10**6, np.random.default_rng(4), all_observed=True)
    assert np.max(np.abs(_logistic_mle(b.x, b.y) - BETA_LOGISTIC)) < 0.02


def test_missing_rows_have_blank_response():
    b = gen_logistic_batch(500, np.random.default_rng(5))
    assert np.all(np.isnan(b.y[b.delta == 0]))
    assert np.all(np.isfinite(b.y[b.delta == 1]))


def test_missingness_rate_stable_across_batches():
    rates = [np.mean(b.delta == 0) for b in generate_stream("linear_4d", 20, 5000, seed=6)]
    assert np.std(rates) < 0.01


def test_hetero_confounder_mean():
    b = gen_hetero_batch(10**6, np.random.default_rng(7), 1)
    assert_allclose(b.z.mean(axis=0), [0.2, 0.2], atol=0.005)
    assert b.p == 2 and b.q == 2


def test_hetero_gamma_bounds_and_batch_dependence():
    draws = np.array([hetero_gamma(np.random.default_rng(8), j) for j in range(1, 2001)])
    assert np.all(np.abs(draws) < [1.0, 2.0])
    assert_allclose(draws.mean(axis=0), 0.0, atol=0.1)
    assert not np.array_equal(draws[0], draws[1])
    b1 = generate_batch(Design.HETERO_LOGISTIC, 50, 9, 0, 1)
    b2 = generate_batch(Design.HETERO_LOGISTIC, 50, 9, 0, 2)
    g1 = hetero_gamma(batch_rng(9, 0, 1), 1)
    g2 = hetero_gamma(batch_rng(9, 0, 2), 2)
    assert not np.array_equal(g1, g2)
    assert not np.array_equal(b1.x, b2.x)


def test_hetero_without_nuisance_is_plain_logistic():
    rng = np.random.default_rng(10)
    b = gen_hetero_batch(200_000, rng, 1, gamma=np.zeros(2))
    obs = b.observed
    x, y = b.x[obs], b.y[obs]
    est = _logistic_mle(x, y)
    mu = special.expit(x @ est)
    se = np.sqrt(np.diag(np.linalg.inv((x * (mu * (1 - mu))[:, None]).T @ x)))
    # MAR on x leaves the complete-case logistic fit consistent.
    assert np.all(np.abs(est - [0.5, 0.5]) < 4 * se)


def test_generators_reject_empty_batches():
    with pytest.raises(InvalidInputError):
        gen_linear_batch(0, np.random.default_rng(0))


def test_batches_reproducible_in_isolation():
    stream = generate_stream("logistic_4d", 5, 100, seed=11, replication=3)
    again = generate_batch(Design.LOGISTIC_4D, 100, 11, 3, 4)
    assert_array_equal(stream[3].x, again.x)
    assert_array_equal(stream[3].delta, again.delta)
    other = generate_batch(Design.LOGISTIC_4D, 100, 11, 4, 4)
    assert not np.array_equal(other.x, again.x)


def test_replication_independent_of_execution_order():
    spec = DesignSpec("linear_4d", 3, 300, replications=4, seed=12)
    report = run_experiment(spec)
    alone = run_replication(spec, 2)
    for name, est in alone.estimates.items():
        assert_array_equal(report.estimates[name][2], est)


def test_experiment_is_deterministic():
    spec = DesignSpec("logistic_4d", 3, 300, replications=3, seed=13)
    a = run_experiment(spec)
    b = run_experiment(spec)
    assert a.table_rows() == b.table_rows()
    for name in a.estimates:
        assert_array_equal(a.estimates[name], b.estimates[name])


def test_single_batch_uipw_equals_oracle():
    spec = DesignSpec("logistic_4d", 1, 2000, replications=5, seed=14)
    report = run_experiment(spec)
    assert_allclose(report.estimates["uipw"], report.estimates["oracle"], atol=1e-10)
    assert report.summaries["uipw"].mse == pytest.approx(report.summaries["oracle"].mse,
                                                         rel=1e-8)


def test_hetero_experiment_runs_every_estimator():
    spec = DesignSpec("hetero_logistic", 3, 300, replications=2, seed=15)
    report = run_experiment(spec)
    assert set(report.summaries) == {"oracle", "euipw", "average", "naive"}
    assert all(s.mse >= 0 and s.failures == 0 for s in report.summaries.values())
    assert report.coverage is None


def test_design_spec_echo_round_trip():
    spec = DesignSpec("hetero_logistic", 40, 500, replications=7, seed=3,
                      estimators=("euipw", "oracle"))
    echo = json.loads(json.dumps(spec.echo()))
    assert DesignSpec.from_echo(echo) == spec
    assert spec.N_K == 20_000
    assert spec.active_estimators == ("oracle", "euipw")


@pytest.mark.parametrize("kwargs", [dict(K=0), dict(n_k=0), dict(replications=0),
                                    dict(estimators=("uipw",)), dict(estimators=())])
def test_design_spec_validation(kwargs):
    args = dict(design="hetero_logistic", K=2, n_k=10) | kwargs
    with pytest.raises(InvalidInputError):
        DesignSpec(**args)
