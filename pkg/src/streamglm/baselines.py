"""Offline comparison estimators: pooled oracle, per-batch average, naive, SGD.

These retain raw batches on purpose; they exist to benchmark the streaming
estimators and to serve as oracles in tests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .batch import Batch, concat
from .errors import InvalidInputError, NonConvergenceError, NumericFailureError
from .glm import Family
from .propensity import PI_FLOOR, propensity

#: Batches smaller than this are fitted by SGD inside the average/naive baselines.
SMALL_BATCH = 200


class Method(enum.Enum):
    NEWTON_RAPHSON = "newton_raphson"
    SGD = "sgd"


@dataclass(frozen=True)
class SolverConfig:
    """Solver choice for the per-batch baselines.

    SGD takes step ``a / (t + b)`` at update ``t``; ``max_iter`` counts epochs
    for SGD and Newton iterations otherwise.
    """

    method: Method = Method.NEWTON_RAPHSON
    tol: float = 1e-10
    max_iter: int = 100
    sgd_rate: tuple[float, float] = (0.5, 10.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        a, b = self.sgd_rate
        if self.tol <= 0 or self.max_iter < 0 or a <= 0 or b <= 0:
            raise InvalidInputError(f"invalid solver configuration {self}")


SGD_DEFAULT = SolverConfig(method=Method.SGD, tol=1e-6, max_iter=10)


def newton_glm(family, x, y, weights, tol=1e-10, max_iter=100, init=None):
    """Weighted GLM score root ``sum w_i (y_i - mu_i) x_i = 0`` by full Newton."""
    family = Family.parse(family)
    beta = np.zeros(x.shape[1]) if init is None else np.array(init, dtype=float)
    for _ in range(max_iter):
        mu = family.mean(x @ beta)
        score = x.T @ (weights * (y - mu))
        info = (x * (weights * family.unit_variance(mu))[:, None]).T @ x
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise NumericFailureError("singular information matrix", np.inf) from None
        if not np.all(np.isfinite(step)):
            raise NumericFailureError("non-finite Newton step", np.linalg.cond(info))
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            return beta
    raise NonConvergenceError("Newton-Raphson did not converge", beta,
                              float(np.linalg.norm(score)))


def logistic_mle(x, delta, tol=1e-10, max_iter=100):
    """Maximum-likelihood logistic coefficients for the response indicator."""
    return newton_glm(Family.BERNOULLI, x, delta, np.ones(len(delta)), tol, max_iter)


def _ipw_weights(batch, alpha, known_pi):
    if known_pi is not None:
        pi = np.full(batch.n, float(known_pi))
    else:
        pi = propensity(batch.x, alpha)
    return batch.delta / np.maximum(pi, PI_FLOOR)


def ipw_fit(family, batch: Batch, known_pi=None, tol=1e-10, max_iter=100):
    """Two-step offline IPW fit on one (possibly pooled) batch.

    Returns ``(beta, alpha)``; ``alpha`` is None under a known propensity.
    """
    family = Family.parse(family)
    alpha = None if known_pi is not None else logistic_mle(batch.x, batch.delta, tol, max_iter)
    w = _ipw_weights(batch, alpha, known_pi)
    beta = newton_glm(family, batch.x, batch.y_filled(), w, tol, max_iter)
    return beta, alpha


def oracle_fit(batches, family, known_pi=None):
    """Pooled IPW fit on all batches (logistic MLE propensity, Newton for beta)."""
    return ipw_fit(family, concat(batches), known_pi)[0]


def sgd_fit(family, batch: Batch, config: SolverConfig = SGD_DEFAULT, known_pi=None, init=None):
    """Two-step IPW fit by Robbins-Monro stochastic approximation.

    The propensity coefficients are fitted first on all rows, then the GLM
    coefficients on the observed rows with inverse-propensity weights.  Each
    epoch visits rows in a fresh random order.
    """
    family = Family.parse(family)
    rng = np.random.default_rng(config.seed)
    p = batch.p
    if known_pi is None:
        alpha = _sgd(Family.BERNOULLI, batch.x, batch.delta, np.ones(batch.n),
                     np.zeros(p), config, rng)
    else:
        alpha = None
    obs = batch.observed
    w = _ipw_weights(batch, alpha, known_pi)[obs]
    start = np.zeros(p) if init is None else np.array(init, dtype=float)
    return _sgd(family, batch.x[obs], batch.y[obs], w, start, config, rng)


def _sgd(family, x, y, w, beta, config, rng):
    a, b = config.sgd_rate
    beta = beta.copy()
    t = 0
    n = len(y)
    for _ in range(config.max_iter):
        before = beta.copy()
        with np.errstate(over="ignore", invalid="ignore"):
            for i in rng.permutation(n):
                xi = x[i]
                mu = family.mean(xi @ beta)
                beta += (a / (t + b)) * w[i] * (y[i] - mu) * xi
                t += 1
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 1e6:
            raise NumericFailureError("SGD diverged", np.inf)
        if np.max(np.abs(beta - before)) < config.tol:
            break
    return beta


def naive_fit(batch: Batch, family, known_pi=None, config: SolverConfig | None = None,
              small_batch=SMALL_BATCH):
    """IPW fit that uses only the given (current) batch."""
    if config is None:
        config = SGD_DEFAULT if batch.n < small_batch else SolverConfig()
    if config.method is Method.SGD:
        return sgd_fit(family, batch, config, known_pi)
    return ipw_fit(family, batch, known_pi, config.tol, config.max_iter)[0]


def average_fit(batches, family, known_pi=None, config: SolverConfig | None = None,
                small_batch=SMALL_BATCH):
    """Arithmetic mean of independent per-batch IPW fits."""
    fits = []
    for j, batch in enumerate(batches, start=1):
        try:
            fits.append(naive_fit(batch, family, known_pi, config, small_batch))
        except (NumericFailureError, NonConvergenceError, InvalidInputError) as exc:
            raise BatchFitError(j, exc) from exc
    return np.mean(fits, axis=0)


class BatchFitError(RuntimeError):
    """A per-batch baseline fit failed; ``batch_index`` is 1-based."""

    def __init__(self, batch_index, cause):
        super().__init__(f"per-batch fit failed on batch {batch_index}: {cause}")
        self.batch_index = batch_index
