"""
Source-free adaptation of real/fake image detectors.

A frozen teacher trained on one manipulation domain is copied into a student
that adapts to a new domain using only a handful of target groups, with a
distillation term and a confidence-binned feature-storage term guarding
against catastrophic forgetting.
"""

from fretal.adapt import TrainingTrace, adapt_student, fit_teacher, train_teacher
from fretal.backbone import ModelHandle, build_model, clone_model, copy_weights, forward, freeze
from fretal.config import AdaptationConfig, ExperimentConfig, Method, load_experiment_config
from fretal.datagen import DomainDataset, generate_domain
from fretal.experiment import run_experiment
from fretal.losses import ce_loss, fretal_loss, fsl_loss, kd_loss, softmax_t
from fretal.metrics import evaluate_model, f1_score, zero_shot_matrix

__version__ = "0.1.0"

__all__ = [
    "AdaptationConfig",
    "DomainDataset",
    "ExperimentConfig",
    "Method",
    "ModelHandle",
    "TrainingTrace",
    "adapt_student",
    "build_model",
    "ce_loss",
    "clone_model",
    "copy_weights",
    "evaluate_model",
    "f1_score",
    "fit_teacher",
    "forward",
    "freeze",
    "fretal_loss",
    "fsl_loss",
    "generate_domain",
    "kd_loss",
    "load_experiment_config",
    "run_experiment",
    "softmax_t",
    "train_teacher",
    "zero_shot_matrix",
]
