"""Plug-in asymptotic covariance, Wald test and confidence regions.

The covariance of ``sqrt(N_k) (beta_hat - beta)`` is estimated by the sandwich

    B^{-1} Var{S_i - J_i} B^{-1},   B = E[v(mu) x x'],
    J_i = E[S V'] E[V V']^{-1} V_i,

with expectations replaced by empirical averages.  ``S_i`` is the IPW score
contribution of row ``i`` and ``V_i`` its propensity score; the ``J`` term
accounts for the propensity having been estimated.  Moments come either from
the current batch alone or from sums accumulated over the stream.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from .batch import Batch
from .errors import InvalidInputError, NumericFailureError
from .updater import UipwState, _weights

_MAX_CONDITION = 1e14


class Source(enum.Enum):
    CURRENT_BATCH = "current_batch"
    ACCUMULATED = "accumulated"


@dataclass(frozen=True)
class Moments:
    """Raw moment sums behind the sandwich estimate; addable across batches."""

    n: int
    bread: np.ndarray
    s_sum: np.ndarray
    v_sum: np.ndarray
    ss: np.ndarray
    sv: np.ndarray
    vv: np.ndarray
    propensity_estimated: bool = True

    @classmethod
    def zeros(cls, p: int, propensity_estimated: bool = True) -> Moments:
        z = np.zeros((p, p))
        return cls(0, z, np.zeros(p), np.zeros(p), z, z, z, propensity_estimated)

    def __add__(self, other: Moments) -> Moments:
        return Moments(self.n + other.n, self.bread + other.bread,
                       self.s_sum + other.s_sum, self.v_sum + other.v_sum,
                       self.ss + other.ss, self.sv + other.sv, self.vv + other.vv,
                       self.propensity_estimated and other.propensity_estimated)


def batch_moments(state: UipwState, batch: Batch) -> Moments:
    """Moment sums of one batch at the state's current ``(beta_hat, alpha_hat)``."""
    if batch.n == 0:
        raise InvalidInputError("empty batch")
    x = batch.x
    known = state.prop.known_pi
    w, _ = _weights(batch, state.alpha_hat, known)
    mu = state.family.mean(x @ state.beta_hat)
    s = x * (w * (batch.y_filled() - mu))[:, None]
    bread = (x * state.family.unit_variance(mu)[:, None]).T @ x
    estimated = state.prop.estimating
    if estimated:
        v = x * (batch.delta - state.prop.probabilities(x))[:, None]
    else:
        v = np.zeros_like(x)
    return Moments(batch.n, bread, s.sum(0), v.sum(0), s.T @ s, s.T @ v, v.T @ v, estimated)


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma_hat: np.ndarray
    n_effective: int
    source: Source


def _checked_inverse(matrix, what):
    cond = np.linalg.cond(matrix) if np.all(np.isfinite(matrix)) else np.inf
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise NumericFailureError(f"singular {what}", cond)
    return np.linalg.inv(matrix)


def sigma_from_moments(m: Moments, source=Source.ACCUMULATED) -> CovarianceEstimate:
    n = m.n
    bread_inv = _checked_inverse(m.bread / n, "bread matrix")
    if m.propensity_estimated:
        proj = (m.sv / n) @ _checked_inverse(m.vv / n, "propensity score second moment")
    else:
        proj = np.zeros_like(m.sv)
    # Second moment and mean of the corrected score S_i - proj V_i.
    second = (m.ss - proj @ m.sv.T - m.sv @ proj.T + proj @ m.vv @ proj.T) / n
    centre = (m.s_sum - proj @ m.v_sum) / n
    meat = second - np.outer(centre, centre)
    sigma = bread_inv @ meat @ bread_inv.T
    return CovarianceEstimate(0.5 * (sigma + sigma.T), n, Source(source))


def sigma_hat(state: UipwState, batch: Batch) -> CovarianceEstimate:
    """Sandwich covariance from the current batch, evaluated at the state's estimates."""
    return sigma_from_moments(batch_moments(state, batch), Source.CURRENT_BATCH)


def chi2_sf(x, df):
    """Upper tail of the chi-square law via the regularized incomplete gamma."""
    return special.gammaincc(df / 2.0, np.maximum(x, 0.0) / 2.0)


def chi2_cdf(x, df):
    return special.gammainc(df / 2.0, np.maximum(x, 0.0) / 2.0)


def chi2_quantile(level, df):
    return 2.0 * special.gammaincinv(df / 2.0, level)


def _quadratic(beta_hat, sigma, n_k, ref):
    d = np.asarray(beta_hat, dtype=float) - np.asarray(ref, dtype=float)
    s = sigma.sigma_hat if isinstance(sigma, CovarianceEstimate) else np.asarray(sigma)
    if s.shape != (d.size, d.size):
        raise InvalidInputError("covariance shape does not match beta")
    return float(n_k * d @ _checked_inverse(s, "covariance matrix") @ d)


def wald_test(beta_hat, sigma, n_k, beta_null):
    """Wald statistic ``N_k d' Sigma^{-1} d`` and its chi-square(p) p-value."""
    stat = _quadratic(beta_hat, sigma, n_k, beta_null)
    return stat, float(chi2_sf(stat, len(beta_hat)))


@dataclass(frozen=True)
class ConfidenceRegion:
    """Ellipsoid ``{b : (b - center)' shape^{-1} (b - center) < radius2}`` and marginal bands."""

    center: np.ndarray
    shape: np.ndarray
    radius2: float
    lower: np.ndarray
    upper: np.ndarray
    level: float

    def contains(self, beta) -> bool:
        d = np.asarray(beta, dtype=float) - self.center
        return bool(d @ np.linalg.solve(self.shape, d) < self.radius2)

    @property
    def half_width(self):
        return 0.5 * (self.upper - self.lower)


def confidence_region(beta_hat, sigma, n_k, level=0.95) -> ConfidenceRegion:
    if not 0.0 < level < 1.0:
        raise InvalidInputError("level must lie in (0, 1)")
    beta_hat = np.asarray(beta_hat, dtype=float)
    s = sigma.sigma_hat if isinstance(sigma, CovarianceEstimate) else np.asarray(sigma)
    _checked_inverse(s, "covariance matrix")
    shape = s / n_k
    z = special.ndtri(0.5 + level / 2.0)
    half = z * np.sqrt(np.diag(shape))
    return ConfidenceRegion(beta_hat, shape, float(chi2_quantile(level, beta_hat.size)),
                            beta_hat - half, beta_hat + half, level)
