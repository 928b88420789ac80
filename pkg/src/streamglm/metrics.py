"""Classification metrics for fitted binary-response models."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidInputError


def _binary(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidInputError("labels must be a vector of 0/1 values")
    return y


def accuracy(y, scores, threshold=0.5) -> float:
    """Proportion of labels matched by ``scores >= threshold``."""
    y = _binary(y)
    return float(np.mean((np.asarray(scores) >= threshold) == (y == 1.0)))


def auc(y, scores) -> float:
    """Area under the ROC curve by the Mann-Whitney rank formula (midranks for ties)."""
    y = _binary(y)
    scores = np.asarray(scores, dtype=float)
    if scores.shape != y.shape:
        raise InvalidInputError("scores and labels differ in length")
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise InvalidInputError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[y == 1.0].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))
