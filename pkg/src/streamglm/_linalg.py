import numpy as np

from .errors import NonConvergenceError, NumericFailureError

# Beyond this the solve loses every significant digit in double precision.
_MAX_CONDITION = 1e14
RIDGE = 1e-8


def frozen_inverse(matrix, what="Newton matrix"):
    """Invert a small matrix, retrying once with ``RIDGE * I`` if singular."""
    matrix = np.asarray(matrix, dtype=float)
    cond = _condition(matrix)
    if cond > _MAX_CONDITION:
        matrix = matrix + RIDGE * np.eye(matrix.shape[0])
        cond = _condition(matrix)
        if cond > _MAX_CONDITION:
            raise NumericFailureError(f"singular {what}", cond)
    return np.linalg.inv(matrix)


def _condition(matrix):
    if not np.all(np.isfinite(matrix)):
        return np.inf
    with np.errstate(all="ignore"):
        c = np.linalg.cond(matrix)
    return c if np.isfinite(c) else np.inf


def chord_solve(fun, x0, tol, max_iter, refresh_always=False, what="Newton matrix"):
    """Solve ``F(x) = 0`` by Newton steps with the matrix frozen at ``x0``.

    ``fun(x, need_jac)`` returns ``(F(x), J(x))``, with ``J`` None when not needed.  With ``refresh_always`` the matrix
    is rebuilt at every iterate (plain Newton).  If the frozen iteration
    reaches ``max_iter``, it restarts from ``x0`` with refreshed matrices.
    Returns ``(x, iterations, refreshed)``; raises
    :class:`NonConvergenceError` if the refreshed pass also stalls.
    """
    total = 0
    for refresh in ((True,) if refresh_always else (False, True)):
        x = np.array(x0, dtype=float)
        f, jac = fun(x, True)
        step_matrix = frozen_inverse(jac, what)
        for it in range(1, max_iter + 1):
            if it > 1:
                f, jac = fun(x, refresh)
                if refresh:
                    step_matrix = frozen_inverse(jac, what)
            step = step_matrix @ f
            x = x - step
            if not np.all(np.isfinite(x)):
                break
            if np.max(np.abs(step)) < tol:
                return x, total + it, refresh
        total += max_iter
    f = fun(x, False)[0] if np.all(np.isfinite(x)) else np.full_like(x, np.nan)
    raise NonConvergenceError(f"iteration with {what} did not converge", x,
                              float(np.linalg.norm(f)))
