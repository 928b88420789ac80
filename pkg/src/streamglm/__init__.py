"""Streaming inverse-probability-weighted GLM estimation for responses missing at random."""

__version__ = "0.1.0"

from .batch import Batch
from .glm import Family
from .propensity import PropensityState, update_alpha
from .updater import UipwState, fit_stream, ingest
from .euipw import HeteroState, ingest_hetero

__all__ = ["Batch", "Family", "HeteroState", "PropensityState", "UipwState", "fit_stream",
           "ingest", "ingest_hetero", "update_alpha", "__version__"]
