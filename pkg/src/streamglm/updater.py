"""Streaming IPW estimation of GLM coefficients over a stream of batches.

Each ingest runs two steps.  The propensity estimate is renewed first
(:func:`streamglm.propensity.update_alpha`).  The coefficient estimate is then
renewed by solving

    sum_j L1_j (a_k - a_{k-1}) + sum_j L2_j (b - b_{k-1}) + S(b | d_k, a_k) = 0

where ``L1_j = R_alpha_j + R_ab_j . (b_{k-1} - b_j)`` and
``L2_j = R_beta_j + R_ab_j . (a_k - a_j)`` are built from derivatives of the
IPW score stored when batch ``j`` was absorbed.  The shifts depend on
estimates that do not exist yet when batch ``j`` arrives, so the state keeps
the shift-free sums ``sum R_ab``, ``sum R_ab . b_j`` and ``sum R_ab . a_j``
and rebuilds both aggregates exactly at every step.

All accumulators are raw sums over observations.  For equal batch sizes this
is a constant rescaling of the per-batch-mean form and gives the same root.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._linalg import chord_solve
from .batch import Batch
from .errors import InvalidInputError
from .glm import Family
from .propensity import PI_FLOOR, PropensityState, propensity, update_alpha

TOL = 1e-8
MAX_ITER = 50


def _weights(batch: Batch, alpha, known_pi=None):
    """IPW weights ``delta/pi`` and the log-weight slope ``-(d/d eta_alpha) log w``.

    The slope is ``1 - pi`` for the logistic propensity, and zero where the
    propensity is known or clipped (the weight does not move with alpha there).
    """
    if known_pi is not None:
        pi = np.full(batch.n, float(known_pi))
        slope = np.zeros(batch.n)
    else:
        pi = propensity(batch.x, alpha)
        slope = np.where(pi > PI_FLOOR, 1.0 - pi, 0.0)
    w = batch.delta / np.maximum(pi, PI_FLOOR)
    return w, slope


def _check(batch: Batch, beta, alpha):
    if batch.n == 0:
        raise InvalidInputError("empty batch")
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if beta.shape != (batch.p,) or alpha.shape != (batch.p,):
        raise InvalidInputError(
            f"beta {beta.shape} / alpha {alpha.shape} do not match p={batch.p}")
    return beta, alpha


def _score_sum(family, batch, beta, w):
    mu = family.mean(batch.x @ beta)
    return batch.x.T @ (w * (batch.y_filled() - mu))


def _r_beta_sum(family, batch, beta, w):
    mu = family.mean(batch.x @ beta)
    return -(batch.x * (w * family.unit_variance(mu))[:, None]).T @ batch.x


def s_batch(family, batch: Batch, beta, alpha, known_pi=None):
    """Mean IPW score ``(1/n) sum (delta_i/pi_i)(y_i - mu_i) x_i`` on one batch."""
    family = Family.parse(family)
    beta, alpha = _check(batch, beta, alpha)
    w, _ = _weights(batch, alpha, known_pi)
    return _score_sum(family, batch, beta, w) / batch.n


@dataclass(frozen=True)
class DerivativeBundle:
    """Batch score and its derivatives at one ``(beta, alpha)``.

    ``R_alphabeta[a, b, c]`` is the mixed derivative of score component ``a``
    with respect to ``beta[b]`` and ``alpha[c]``.
    """

    S: np.ndarray
    R_beta: np.ndarray
    R_alpha: np.ndarray
    R_alphabeta: np.ndarray

    def scaled(self, factor: float) -> DerivativeBundle:
        return DerivativeBundle(self.S * factor, self.R_beta * factor,
                                self.R_alpha * factor, self.R_alphabeta * factor)


def _bundle_sum(family, batch, beta, alpha, known_pi):
    x = batch.x
    n, p = x.shape
    w, slope = _weights(batch, alpha, known_pi)
    mu = family.mean(x @ beta)
    v = family.unit_variance(mu)
    resid = batch.y_filled() - mu
    wr = w * resid
    S = x.T @ wr
    R_beta = -(x * (w * v)[:, None]).T @ x
    R_alpha = -(x * (wr * slope)[:, None]).T @ x
    outer = (x[:, :, None] * x[:, None, :]).reshape(n, p * p)
    R_ab = ((x * (w * slope * v)[:, None]).T @ outer).reshape(p, p, p)
    return DerivativeBundle(S, R_beta, R_alpha, R_ab)


def derivative_bundle(family, batch: Batch, beta, alpha, known_pi=None) -> DerivativeBundle:
    """Analytic score derivatives for canonical families under a logistic propensity."""
    family = Family.parse(family)
    beta, alpha = _check(batch, beta, alpha)
    return _bundle_sum(family, batch, beta, alpha, known_pi).scaled(1.0 / batch.n)


def l_aggregates(bundle: DerivativeBundle, beta_shift, alpha_shift):
    """Return ``(L1, L2)`` for one batch given the two parameter shifts.

    ``L1[a, c] = R_alpha[a, c] + sum_b R_ab[a, b, c] beta_shift[b]`` acts on an
    alpha increment; ``L2[a, b] = R_beta[a, b] + sum_c R_ab[a, b, c]
    alpha_shift[c]`` acts on a beta increment.
    """
    beta_shift = np.asarray(beta_shift, dtype=float)
    alpha_shift = np.asarray(alpha_shift, dtype=float)
    p = bundle.R_beta.shape[0]
    if beta_shift.shape != (p,) or alpha_shift.shape != (p,):
        raise InvalidInputError("shift vectors must have length p")
    L1 = bundle.R_alpha + np.einsum("abc,b->ac", bundle.R_alphabeta, beta_shift)
    L2 = bundle.R_beta + np.einsum("abc,c->ab", bundle.R_alphabeta, alpha_shift)
    return L1, L2


def _zeros(p):
    return np.zeros((p, p))


@dataclass(frozen=True)
class UipwState:
    """Everything the estimator keeps between batches; size depends on p only.

    ``sum_Rab_beta[a, c] = sum_j sum_b R_ab_j[a, b, c] beta_j[b]`` and
    ``sum_Rab_alpha[a, b] = sum_j sum_c R_ab_j[a, b, c] alpha_j[c]``.
    """

    family: Family
    prop: PropensityState
    beta_hat: np.ndarray
    alpha_prev: np.ndarray
    sum_R_alpha: np.ndarray
    sum_R_beta: np.ndarray
    sum_R_ab: np.ndarray
    sum_Rab_beta: np.ndarray
    sum_Rab_alpha: np.ndarray
    n_total: int = 0
    batch_count: int = 0
    iterations: int = field(default=0, compare=False)
    refreshed_batches: int = field(default=0, compare=False)

    @classmethod
    def initial(cls, family, p: int, prop: PropensityState | None = None) -> UipwState:
        prop = PropensityState.initial(p) if prop is None else prop
        if prop.p != p:
            raise InvalidInputError("propensity state dimension does not match p")
        return cls(Family.parse(family), prop, np.zeros(p), prop.alpha_hat.copy(),
                   _zeros(p), _zeros(p), np.zeros((p, p, p)), _zeros(p), _zeros(p))

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.prop.alpha_hat

    def aggregates(self, beta_ref, alpha_ref):
        """Accumulated ``(sum L1, sum L2)`` with shifts taken to the given references."""
        L1 = (self.sum_R_alpha + np.einsum("abc,b->ac", self.sum_R_ab, beta_ref)
              - self.sum_Rab_beta)
        L2 = (self.sum_R_beta + np.einsum("abc,c->ab", self.sum_R_ab, alpha_ref)
              - self.sum_Rab_alpha)
        return L1, L2

    @property
    def L1_tilde(self):
        return self.aggregates(self.beta_hat, self.alpha_hat)[0]

    @property
    def L2_tilde(self):
        return self.aggregates(self.beta_hat, self.alpha_hat)[1]


def update_beta(state: UipwState, batch: Batch, prop_new: PropensityState,
                tol=TOL, max_iter=MAX_ITER) -> UipwState:
    """Step two: renew the coefficient estimate given the renewed propensity.

    ``prop_new`` is the output of :func:`update_alpha` on the same batch.  The
    Newton matrix ``L2_tilde + R_beta(b_{k-1} | d_k, a_k)`` is held fixed over
    the inner iterations, except on the first batch where it is refreshed
    (the starting point there is an arbitrary zero, not an estimate).  If the
    frozen iteration stalls at ``max_iter`` (it can cycle when ``b_{k-1}`` is
    far from the root), the solve restarts with refreshed matrices; the root
    is the same, and ``refreshed_batches`` counts these events.
    """
    if batch.p != state.p:
        raise InvalidInputError(f"batch has p={batch.p}, state has p={state.p}")
    family = state.family
    known = prop_new.known_pi
    alpha_new = prop_new.alpha_hat
    alpha_old = state.prop.alpha_hat
    beta_old = state.beta_hat
    w, _ = _weights(batch, alpha_new, known)

    L1, L2 = state.aggregates(beta_old, alpha_new)
    offset = L1 @ (alpha_new - alpha_old) - L2 @ beta_old

    def fun(beta, need_jac):
        jac = L2 + _r_beta_sum(family, batch, beta, w) if need_jac else None
        return offset + L2 @ beta + _score_sum(family, batch, beta, w), jac

    beta, it, refreshed = chord_solve(fun, beta_old, tol, max_iter,
                                      refresh_always=state.batch_count == 0,
                                      what="coefficient Newton matrix")
    refreshed = refreshed and state.batch_count > 0

    b = _bundle_sum(family, batch, beta, alpha_new, known)
    return replace(
        state,
        prop=prop_new,
        beta_hat=beta,
        alpha_prev=alpha_old.copy(),
        sum_R_alpha=state.sum_R_alpha + b.R_alpha,
        sum_R_beta=state.sum_R_beta + b.R_beta,
        sum_R_ab=state.sum_R_ab + b.R_alphabeta,
        sum_Rab_beta=state.sum_Rab_beta + np.einsum("abc,b->ac", b.R_alphabeta, beta),
        sum_Rab_alpha=state.sum_Rab_alpha + np.einsum("abc,c->ab", b.R_alphabeta, alpha_new),
        n_total=state.n_total + batch.n,
        batch_count=state.batch_count + 1,
        iterations=it,
        refreshed_batches=state.refreshed_batches + int(refreshed),
    )


def ingest(state: UipwState, batch: Batch) -> UipwState:
    """Absorb one batch: renew the propensity, then the coefficients."""
    if batch.n == 0:
        raise InvalidInputError("empty batch")
    if batch.p != state.p:
        raise InvalidInputError(f"batch has p={batch.p}, state has p={state.p}")
    return update_beta(state, batch, update_alpha(state.prop, batch))


def fit_stream(family, batches, prop: PropensityState | None = None, p: int | None = None) -> UipwState:
    """Convenience wrapper: ingest every batch from an iterable in order."""
    state = None
    for batch in batches:
        if state is None:
            state = UipwState.initial(family, p or batch.p, prop)
        state = ingest(state, batch)
    if state is None:
        raise InvalidInputError("no batches supplied")
    return state
