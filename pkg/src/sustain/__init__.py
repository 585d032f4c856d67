"""Sequential self-teaching for weakly labelled multi-label bags.

A default teacher is trained on noisy bag labels; each later student is a
fresh network trained on a convex blend of those labels and earlier stages'
soft predictions.
"""

from .engine import (Cascade, StagePlan, SustainClassifier, alpha_search, blend_targets, run_cascade,
                     run_stage, single_teacher_schedule, stopping_rule, two_teacher_schedule)
from .estimators import LinearProbe, WeaNetClassifier
from .metrics import MetricsReport, auc_roc, average_precision, evaluate, lwlrap
from .mil import WeaNet, WeaNetConfig, attention_pool, max_pool, mean_pool
from .noise import NoiseSpec, inject_noise, predicted_gain, predicted_teacher_noise

__version__ = "0.1.0"

__all__ = [
    "Cascade", "LinearProbe", "MetricsReport", "NoiseSpec", "StagePlan", "SustainClassifier", "WeaNet",
    "WeaNetClassifier", "WeaNetConfig", "alpha_search", "attention_pool", "auc_roc", "average_precision",
    "blend_targets", "evaluate", "inject_noise", "lwlrap", "max_pool", "mean_pool", "predicted_gain",
    "predicted_teacher_noise", "run_cascade", "run_stage", "single_teacher_schedule", "stopping_rule",
    "two_teacher_schedule",
]
