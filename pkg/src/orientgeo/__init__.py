"""Geodesic orientation estimation on SO(3): rotation representations,
pose-dictionary objectives with hand-derived gradients, homography-based
pose jittering, detection-style pose metrics, and a synthetic experiment
harness."""

from . import dictionary, gradcheck, harness, jitter, losses, metrics, models, so3
from .dictionary import PoseDictionary, fit_kmeans, hard_label, soft_assign
from .harness import (
    DataConfig,
    ExperimentConfig,
    OptimizerConfig,
    ablation_suite,
    generate_synthetic,
    run_experiment,
    run_trials,
    train,
)
from .losses import FAMILIES, ObjectiveSpec, Target, objective
from .metrics import MetricReport, detection_report, pose_report
from .so3 import AxisAngle, EulerZXZ, Rotation, UnitQuaternion

__version__ = "0.1.0"

__all__ = [
    "AxisAngle",
    "DataConfig",
    "EulerZXZ",
    "ExperimentConfig",
    "FAMILIES",
    "MetricReport",
    "ObjectiveSpec",
    "OptimizerConfig",
    "PoseDictionary",
    "Rotation",
    "Target",
    "UnitQuaternion",
    "ablation_suite",
    "detection_report",
    "dictionary",
    "fit_kmeans",
    "generate_synthetic",
    "gradcheck",
    "hard_label",
    "harness",
    "jitter",
    "losses",
    "metrics",
    "models",
    "objective",
    "pose_report",
    "run_experiment",
    "run_trials",
    "soft_assign",
    "so3",
    "train",
    "__version__",
]
