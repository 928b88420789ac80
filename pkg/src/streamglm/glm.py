"""GLM families with canonical links and the per-observation building blocks."""

from __future__ import annotations

import enum

import numpy as np

from .errors import InvalidInputError


class Family(enum.Enum):
    """Closed set of supported exponential families (canonical links only)."""

    GAUSSIAN = "gaussian_identity"
    BERNOULLI = "bernoulli_logit"

    @classmethod
    def parse(cls, name: str | Family) -> Family:
        if isinstance(name, Family):
            return name
        aliases = {"gaussian": cls.GAUSSIAN, "bernoulli": cls.BERNOULLI,
                   "logistic": cls.BERNOULLI, "linear": cls.GAUSSIAN}
        try:
            return aliases.get(name) or cls(name)
        except ValueError:
            raise InvalidInputError(f"unknown family {name!r}") from None

    def mean(self, eta):
        """Inverse canonical link applied elementwise."""
        eta = np.asarray(eta, dtype=float)
        if self is Family.GAUSSIAN:
            return eta.copy() if eta.ndim else float(eta)
        return _expit(eta)

    def unit_variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self is Family.GAUSSIAN:
            return np.ones_like(mu)
        return mu * (1.0 - mu)

    def link_deriv(self, mu):
        """Derivative of the link g with respect to the mean."""
        mu = np.asarray(mu, dtype=float)
        if self is Family.GAUSSIAN:
            return np.ones_like(mu)
        return 1.0 / (mu * (1.0 - mu))

    def check_response(self, y) -> None:
        if self is Family.BERNOULLI:
            y = np.asarray(y, dtype=float)
            if not np.all((y == 0.0) | (y == 1.0)):
                raise InvalidInputError("bernoulli_logit responses must be 0 or 1")


def _expit(eta):
    # Branch form keeps exp() arguments non-positive.
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def mean(family: Family, eta):
    """Mean response for linear predictor ``eta``.

    >>> mean(Family.BERNOULLI, 0.0)
    0.5
    """
    family = Family.parse(family)
    arr = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("eta must be finite")
    return family.mean(arr)


def canonical_weight(family: Family, mu):
    """Return ``1 / (v(mu) * g'(mu))``, identically 1 for canonical links."""
    family = Family.parse(family)
    arr = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("mu must be finite")
    if family is Family.BERNOULLI and np.any((arr <= 0.0) | (arr >= 1.0)):
        raise InvalidInputError("bernoulli_logit mean must lie in (0, 1)")
    ones = np.ones_like(arr)
    return ones if ones.ndim else 1.0
