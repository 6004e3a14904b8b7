"""Intention-guided trajectory prediction with contrastive clustering."""

__version__ = "0.1.0"

from .backend import backend_name
from .trajectory import (
    Intention,
    LabelingThresholds,
    ObservationFeatures,
    Trajectory,
    TrajectoryWindow,
    TransformParams,
)
from .model import FrozenModel, ModelConfig, ModelOutput, model_forward
from .training import PairRelation, TrainingConfig, train
from .evaluation import MetricsReport, ade, constant_velocity_predict, evaluate_model, fde

__all__ = [
    "__version__",
    "backend_name",
    "Intention",
    "LabelingThresholds",
    "ObservationFeatures",
    "Trajectory",
    "TrajectoryWindow",
    "TransformParams",
    "FrozenModel",
    "ModelConfig",
    "ModelOutput",
    "model_forward",
    "PairRelation",
    "TrainingConfig",
    "train",
    "MetricsReport",
    "ade",
    "fde",
    "constant_velocity_predict",
    "evaluate_model",
]
