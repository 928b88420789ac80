"""Logistic propensity model and its renewable (online-updated) estimator."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._linalg import chord_solve
from .batch import Batch
from .errors import InvalidInputError
from .glm import _expit

#: Floor applied to the propensity wherever it is inverted into a weight.
PI_FLOOR = 1e-6

TOL = 1e-8
MAX_ITER = 50


def propensity(x, alpha):
    """Logistic response probability ``1 / (1 + exp(-x @ alpha))`` (unclipped)."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if x.shape[-1] != alpha.shape[0]:
        raise InvalidInputError(f"x has {x.shape[-1]} columns but alpha has length {alpha.shape[0]}")
    return _expit(x @ alpha)


def weight_denominator(pi):
    """Propensity clipped to ``[PI_FLOOR, 1]`` for use as an IPW denominator."""
    return np.clip(pi, PI_FLOOR, 1.0)


def _require_rows(batch: Batch):
    if batch.n == 0:
        raise InvalidInputError("empty batch")


def v_batch(batch: Batch, alpha):
    """Mean propensity score ``(1/n) sum x_i (delta_i - pi_i)`` on one batch."""
    _require_rows(batch)
    return _v_sum(batch, alpha) / batch.n


def h_batch(batch: Batch, alpha):
    """Negative Jacobian of :func:`v_batch`, ``(1/n) sum x_i pi_i(1-pi_i) x_i'``."""
    _require_rows(batch)
    return _h_sum(batch, alpha) / batch.n


def _v_sum(batch, alpha):
    return batch.x.T @ (batch.delta - propensity(batch.x, alpha))


def _h_sum(batch, alpha):
    pi = propensity(batch.x, alpha)
    return (batch.x * (pi * (1.0 - pi))[:, None]).T @ batch.x


@dataclass(frozen=True)
class PropensityState:
    """Constant-size summary behind the online propensity estimate.

    ``H_tilde`` is stored as a raw sum over absorbed observations (not a sum
    of per-batch means), so unequal batch sizes weight like the pooled fit.

    Two non-estimating modes exist: ``frozen`` keeps a supplied ``alpha_hat``
    fixed, and ``known_pi`` replaces the logistic model by a constant
    response probability.  In both, :func:`update_alpha` only advances the
    counters.
    """

    alpha_hat: np.ndarray
    H_tilde: np.ndarray
    n_total: int = 0
    batch_count: int = 0
    frozen: bool = False
    known_pi: float | None = None

    @classmethod
    def initial(cls, p: int) -> PropensityState:
        return cls(np.zeros(p), np.zeros((p, p)))

    @classmethod
    def fixed(cls, alpha) -> PropensityState:
        alpha = np.asarray(alpha, dtype=float)
        p = alpha.shape[0]
        return cls(alpha.copy(), np.zeros((p, p)), frozen=True)

    @classmethod
    def known(cls, pi: float, p: int) -> PropensityState:
        if not 0.0 < pi <= 1.0:
            raise InvalidInputError("known propensity must lie in (0, 1]")
        return cls(np.zeros(p), np.zeros((p, p)), frozen=True, known_pi=float(pi))

    @property
    def p(self) -> int:
        return self.alpha_hat.shape[0]

    @property
    def estimating(self) -> bool:
        return not self.frozen

    def probabilities(self, x, alpha=None):
        """Response probabilities for rows of ``x`` (unclipped)."""
        if self.known_pi is not None:
            return np.full(np.shape(x)[0], self.known_pi)
        return propensity(x, self.alpha_hat if alpha is None else alpha)


def update_alpha(state: PropensityState, batch: Batch, tol=TOL, max_iter=MAX_ITER) -> PropensityState:
    """Absorb one batch into the propensity estimate.

    Solves ``H_tilde (alpha - alpha_prev) - V(batch, alpha) = 0`` with the
    Newton matrix frozen at the previous estimate, then adds the batch's
    information evaluated at the new estimate to ``H_tilde``.  On the first
    batch there is no previous estimate (only the zero start), so the matrix
    is refreshed at every iteration instead.  A frozen iteration that hits
    ``max_iter`` is retried with refreshed matrices before giving up.
    """
    _require_rows(batch)
    if batch.p != state.p:
        raise InvalidInputError(f"batch has p={batch.p}, state has p={state.p}")
    counters = dict(n_total=state.n_total + batch.n, batch_count=state.batch_count + 1)
    if state.frozen:
        return replace(state, **counters)

    prev = state.alpha_hat
    H_tilde = state.H_tilde

    def fun(alpha, need_jac):
        jac = H_tilde + _h_sum(batch, alpha) if need_jac else None
        return H_tilde @ (alpha - prev) - _v_sum(batch, alpha), jac

    alpha, _, _ = chord_solve(fun, prev, tol, max_iter, refresh_always=state.batch_count == 0,
                              what="propensity Newton matrix")
    return replace(state, alpha_hat=alpha, H_tilde=state.H_tilde + _h_sum(batch, alpha), **counters)
