"""Learned tendon-force estimators and their training machinery."""

from tendonsim.estimators.models import (
    ARCHITECTURES,
    EstimatorModel,
    build_estimator,
    load_model,
    save_model,
)
from tendonsim.estimators.windows import (
    HISTORY_LEN,
    Normalizer,
    build_windows,
    dataset_windows,
)

__all__ = [
    "ARCHITECTURES",
    "EstimatorModel",
    "build_estimator",
    "load_model",
    "save_model",
    "HISTORY_LEN",
    "Normalizer",
    "build_windows",
    "dataset_windows",
]
