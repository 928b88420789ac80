"""Efficient-score updating for streams with batch-specific nuisance effects.

Batch ``j`` follows ``g(E[y | x, z]) = x'beta + z'gamma_j``.  ``beta`` and the
propensity are shared across batches; ``gamma_j`` is re-estimated on each
batch and then discarded.  The update equation replaces the IPW score by
the efficient score

    U = S - I_bg I_gg^{-1} T,

the residual of the beta-score after projecting out the nuisance score ``T``
with empirical outer-product information on the current batch.  Derivatives
of ``U`` come from central finite differences.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._linalg import chord_solve
from .batch import Batch, concat
from .errors import InvalidInputError, NonConvergenceError, NumericFailureError
from .glm import Family
from .propensity import PropensityState, update_alpha
from .updater import _weights

TOL = 1e-8
MAX_ITER = 50
_FD_STEP = 1e-6
# Outer step for the mixed second derivative; balances truncation against
# the rounding error carried by the inner first difference.
_FD_STEP_MIXED = 1e-4
_RIDGE = 1e-8
_MAX_CONDITION = 1e12


class ProjectionRidgeWarning(RuntimeWarning):
    """Nuisance information was near-singular and a ridge term was added."""


def _require_z(batch: Batch):
    if batch.z is None:
        raise InvalidInputError("batch has no z columns")
    if batch.n == 0:
        raise InvalidInputError("empty batch")


def _residual_terms(family, batch, beta, alpha, gamma, known_pi):
    w, _ = _weights(batch, alpha, known_pi)
    mu = family.mean(batch.x @ beta + batch.z @ gamma)
    return w * (batch.y_filled() - mu)


def t_batch(family, batch: Batch, beta, alpha, gamma, known_pi=None):
    """Mean nuisance score ``(1/n) sum (delta_i/pi_i)(y_i - mu_i) z_i``."""
    family = Family.parse(family)
    _require_z(batch)
    wr = _residual_terms(family, batch, np.asarray(beta, float), np.asarray(alpha, float),
                         np.asarray(gamma, float), known_pi)
    return batch.z.T @ wr / batch.n


def _projection(ibg, igg):
    """Stacked ``I_bg I_gg^{-1}`` with the ridge guard; returns (matrices, ridged)."""
    q = igg.shape[-1]
    scale = np.trace(igg, axis1=-2, axis2=-1) / q
    live = scale > 0.0
    eye = np.eye(q)
    # No nuisance variation on a batch means nothing to project out.
    igg = np.where(live[:, None, None], igg, eye)
    cond = np.linalg.cond(igg)
    bad = live & (~np.isfinite(cond) | (cond > _MAX_CONDITION))
    igg = igg + np.where(bad, _RIDGE * scale, 0.0)[:, None, None] * eye
    proj = np.swapaxes(np.linalg.solve(np.swapaxes(igg, -1, -2), np.swapaxes(ibg, -1, -2)), -1, -2)
    proj = np.where(live[:, None, None], proj, 0.0)
    if not np.all(np.isfinite(proj)):
        raise NumericFailureError("singular nuisance information", float(np.max(cond)))
    return proj, bool(bad.any())


def _scores(family, batch, betas, weights, gamma):
    """Raw-sum efficient scores at stacked points.

    ``betas`` is (m, p) and ``weights`` is (n,) or (m, n); row ``r`` of the
    result is ``n U`` at ``betas[r]`` with IPW weights ``weights[r]``.
    """
    x, z = batch.x, batch.z
    mu = family.mean(betas @ x.T + z @ gamma)
    wr = weights * (batch.y_filled() - mu)
    n = batch.n
    s = wr @ x
    t = wr @ z
    wr2 = wr * wr
    p, q = x.shape[1], z.shape[1]
    ibg = (wr2 @ (x[:, :, None] * z[:, None, :]).reshape(n, p * q)).reshape(-1, p, q) / n
    igg = (wr2 @ (z[:, :, None] * z[:, None, :]).reshape(n, q * q)).reshape(-1, q, q) / n
    proj, ridged = _projection(ibg, igg)
    return s - np.einsum("mab,mb->ma", proj, t), ridged


def _efficient_score(family, batch, beta, alpha, gamma, known_pi):
    w, _ = _weights(batch, alpha, known_pi)
    u, ridged = _scores(family, batch, beta[None, :], w, gamma)
    return u[0] / batch.n, ridged


def efficient_score(family, batch: Batch, beta, alpha, gamma, known_pi=None):
    """Efficient score for ``beta`` on one batch (a batch mean, length p)."""
    family = Family.parse(family)
    _require_z(batch)
    u, ridged = _efficient_score(family, batch, np.asarray(beta, float),
                                 np.asarray(alpha, float), np.asarray(gamma, float), known_pi)
    if ridged:
        warnings.warn("nuisance information near-singular; ridge applied", ProjectionRidgeWarning)
    return u


def efficient_score_terms(family, batch: Batch, beta, alpha, gamma, known_pi=None):
    """Per-observation contributions ``(U_i, T_i)``; their column means are ``U`` and ``T``."""
    family = Family.parse(family)
    _require_z(batch)
    w, _ = _weights(batch, np.asarray(alpha, float), known_pi)
    mu = family.mean(batch.x @ np.asarray(beta, float) + batch.z @ np.asarray(gamma, float))
    wr = w * (batch.y_filled() - mu)
    s_i = batch.x * wr[:, None]
    t_i = batch.z * wr[:, None]
    n = batch.n
    proj, _ = _projection((s_i.T @ t_i / n)[None], (t_i.T @ t_i / n)[None])
    return s_i - t_i @ proj[0].T, t_i


def _steps(theta, scale):
    h = scale * (1.0 + np.abs(theta))
    return h, np.diag(h)


def _central_points(theta, scale=_FD_STEP):
    """``2p`` points ``theta +/- h_b e_b`` (plus rows first) and the steps ``h``."""
    h, e = _steps(theta, scale)
    return np.vstack([theta + e, theta - e]), h


def _central_jac(values, h):
    """Jacobian columns from values at :func:`_central_points` ordering."""
    p = h.shape[0]
    return ((values[:p] - values[p:]) / (2.0 * h)[:, None]).T


def joint_ipw_fit(family, x, y, w, tol=1e-10, max_iter=MAX_ITER):
    """Weighted GLM fit by full Newton, used for the stacked ``(beta, gamma)`` solve."""
    theta = np.zeros(x.shape[1])
    for _ in range(max_iter):
        mu = family.mean(x @ theta)
        score = x.T @ (w * (y - mu))
        info = (x * (w * family.unit_variance(mu))[:, None]).T @ x
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise NumericFailureError("singular stacked Jacobian", np.inf) from None
        if not np.all(np.isfinite(step)):
            raise NumericFailureError("singular stacked Jacobian", np.linalg.cond(info))
        theta = theta + step
        if np.max(np.abs(step)) < tol:
            return theta
    raise NonConvergenceError("stacked (beta, gamma) solve did not converge", theta,
                              float(np.linalg.norm(score)))


def solve_batch_nuisance(family, batch: Batch, alpha_k, known_pi=None):
    """Jointly solve ``S = 0, T = 0`` on one batch; returns ``(beta_local, gamma_k)``."""
    family = Family.parse(family)
    _require_z(batch)
    if batch.observed.sum() < batch.p + batch.q:
        raise InvalidInputError("too few observed rows to identify (beta, gamma)")
    w, _ = _weights(batch, np.asarray(alpha_k, float), known_pi)
    theta = joint_ipw_fit(family, np.hstack([batch.x, batch.z]), batch.y_filled(), w)
    return theta[:batch.p], theta[batch.p:]



@dataclass(frozen=True)
class UDerivatives:
    """Finite-difference derivatives of ``n * U`` at one point (raw-sum scale).

    ``d_ab[a, b, c]`` is the mixed derivative with respect to ``beta[b]`` and
    ``alpha[c]``.
    """

    d_beta: np.ndarray
    d_alpha: np.ndarray
    d_ab: np.ndarray


def u_derivatives(family, batch, beta, alpha, gamma, known_pi=None) -> UDerivatives:
    """Central differences of the raw-sum efficient score, all points in one pass."""
    family = Family.parse(family)
    beta = np.asarray(beta, float)
    alpha = np.asarray(alpha, float)
    gamma = np.asarray(gamma, float)
    p = beta.shape[0]
    bpts, hb = _central_points(beta)
    w0, _ = _weights(batch, alpha, known_pi)
    if known_pi is not None:
        u, _ = _scores(family, batch, bpts, w0, gamma)
        return UDerivatives(_central_jac(u, hb), np.zeros((p, p)), np.zeros((p, p, p)))
    apts, ha = _central_points(alpha)
    apts_mixed, hm = _central_points(alpha, _FD_STEP_MIXED)
    wa = np.array([_weights(batch, a, None)[0] for a in apts])
    wm = np.array([_weights(batch, a, None)[0] for a in apts_mixed])
    m = 2 * p
    # Rows: beta points at alpha; beta at each alpha point; beta points at each mixed alpha point.
    betas = np.vstack([bpts, np.tile(beta, (m, 1)), np.tile(bpts, (m, 1))])
    weights = np.vstack([np.tile(w0, (m, 1)), wa, np.repeat(wm, m, axis=0)])
    u, _ = _scores(family, batch, betas, weights, gamma)
    d_beta = _central_jac(u[:m], hb)
    d_alpha = _central_jac(u[m:2 * m], ha)
    jacs = np.stack([_central_jac(u[2 * m + r * m:2 * m + (r + 1) * m], hb) for r in range(m)])
    d_ab = np.moveaxis((jacs[:p] - jacs[p:]) / (2.0 * hm)[:, None, None], 0, -1)
    return UDerivatives(d_beta, d_alpha, d_ab)


@dataclass(frozen=True)
class HeteroState:
    """Constant-size summary for efficient-score updating.

    The ``sum_G*`` fields mirror :class:`streamglm.updater.UipwState` with the
    efficient score in place of the IPW score.
    """

    family: Family
    prop: PropensityState
    beta_hat: np.ndarray
    alpha_prev: np.ndarray
    gamma_last: np.ndarray
    sum_G_alpha: np.ndarray
    sum_G_beta: np.ndarray
    sum_G_ab: np.ndarray
    sum_Gab_beta: np.ndarray
    sum_Gab_alpha: np.ndarray
    n_total: int = 0
    batch_count: int = 0
    ridge_applied: int = field(default=0, compare=False)
    refreshed_batches: int = field(default=0, compare=False)

    @classmethod
    def initial(cls, family, p: int, q: int, prop: PropensityState | None = None) -> HeteroState:
        prop = PropensityState.initial(p) if prop is None else prop
        z = np.zeros((p, p))
        return cls(Family.parse(family), prop, np.zeros(p), prop.alpha_hat.copy(), np.zeros(q),
                   z, z, np.zeros((p, p, p)), z, z)

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]

    @property
    def q(self) -> int:
        return self.gamma_last.shape[0]

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.prop.alpha_hat

    def aggregates(self, beta_ref, alpha_ref):
        G1 = (self.sum_G_alpha + np.einsum("abc,b->ac", self.sum_G_ab, beta_ref)
              - self.sum_Gab_beta)
        G2 = (self.sum_G_beta + np.einsum("abc,c->ab", self.sum_G_ab, alpha_ref)
              - self.sum_Gab_alpha)
        return G1, G2


def ingest_hetero(state: HeteroState, batch: Batch, tol=TOL, max_iter=MAX_ITER) -> HeteroState:
    """Absorb one batch: renew alpha, estimate this batch's gamma, renew beta."""
    _require_z(batch)
    if batch.p != state.p or batch.q != state.q:
        raise InvalidInputError(
            f"batch has (p, q)=({batch.p}, {batch.q}), state has ({state.p}, {state.q})")
    family = state.family
    prop_new = update_alpha(state.prop, batch)
    known = prop_new.known_pi
    alpha_new = prop_new.alpha_hat
    alpha_old = state.prop.alpha_hat
    beta_old = state.beta_hat
    _, gamma = solve_batch_nuisance(family, batch, alpha_new, known)
    w, _ = _weights(batch, alpha_new, known)
    ridged = False

    G1, G2 = state.aggregates(beta_old, alpha_new)
    offset = G1 @ (alpha_new - alpha_old) - G2 @ beta_old

    def fun(b, need_jac):
        nonlocal ridged
        if not need_jac:
            u, r = _scores(family, batch, b[None, :], w, gamma)
            ridged |= r
            return offset + G2 @ b + u[0], None
        pts, h = _central_points(b)
        u, r = _scores(family, batch, np.vstack([b, pts]), w, gamma)
        ridged |= r
        return offset + G2 @ b + u[0], G2 + _central_jac(u[1:], h)

    beta, _, refreshed = chord_solve(fun, beta_old, tol, max_iter,
                                     refresh_always=state.batch_count == 0,
                                     what="efficient-score Newton matrix")

    d = u_derivatives(family, batch, beta, alpha_new, gamma, known)
    return replace(
        state,
        prop=prop_new,
        beta_hat=beta,
        alpha_prev=alpha_old.copy(),
        gamma_last=gamma,
        sum_G_alpha=state.sum_G_alpha + d.d_alpha,
        sum_G_beta=state.sum_G_beta + d.d_beta,
        sum_G_ab=state.sum_G_ab + d.d_ab,
        sum_Gab_beta=state.sum_Gab_beta + np.einsum("abc,b->ac", d.d_ab, beta),
        sum_Gab_alpha=state.sum_Gab_alpha + np.einsum("abc,c->ab", d.d_ab, alpha_new),
        n_total=state.n_total + batch.n,
        batch_count=state.batch_count + 1,
        ridge_applied=state.ridge_applied + int(ridged),
        refreshed_batches=state.refreshed_batches + int(refreshed and state.batch_count > 0),
    )


def stacked_design(batches):
    """Pooled design ``[x | blockdiag(z_1, ..., z_K)]`` with one gamma block per batch."""
    n_tot = sum(b.n for b in batches)
    p, q = batches[0].p, batches[0].q
    design = np.zeros((n_tot, p + q * len(batches)))
    row = 0
    for j, b in enumerate(batches):
        design[row:row + b.n, :p] = b.x
        design[row:row + b.n, p + j * q:p + (j + 1) * q] = b.z
        row += b.n
    return design


def oracle_fit_hetero(batches, family, known_pi=None):
    """Full-data fit with every batch's gamma as a free parameter.

    Solves the stacked system ``sum_j S_j = 0, T_j = 0 (all j)`` by Newton on
    the pooled design with per-batch nuisance columns, using the pooled
    propensity MLE.  At its root every ``T_j`` vanishes, so it is also the
    root of the stacked efficient-score system.  Returns ``(beta, gammas)``.
    """
    from .baselines import logistic_mle

    family = Family.parse(family)
    batches = list(batches)
    pooled = concat(batches)
    alpha = None if known_pi is not None else logistic_mle(pooled.x, pooled.delta)
    w, _ = _weights(pooled, np.zeros(pooled.p) if alpha is None else alpha, known_pi)
    theta = joint_ipw_fit(family, stacked_design(batches), pooled.y_filled(), w)
    p, q = pooled.p, pooled.q
    return theta[:p], theta[p:].reshape(len(batches), q)


def naive_fit_hetero(batch: Batch, family, known_pi=None):
    """Per-batch two-step fit of ``(beta, gamma)``; returns the beta part."""
    from .baselines import logistic_mle

    alpha = None if known_pi is not None else logistic_mle(batch.x, batch.delta)
    return solve_batch_nuisance(family, batch, np.zeros(batch.p) if alpha is None else alpha,
                                known_pi)[0]


def average_fit_hetero(batches, family, known_pi=None):
    return np.mean([naive_fit_hetero(b, family, known_pi) for b in batches], axis=0)
