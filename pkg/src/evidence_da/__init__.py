"""Bayesian Gaussian discriminant classifiers with evidence-maximized hyperparameters."""

from .evidence import HyperParams, Variant, solve_hyperparameters
from .predictor import FittedModel, PredictiveDistribution, classify, fit, load_model, predict, save_model
from .stats import ClassSufficientStats, LabeledDataset

__version__ = "0.1.0"

__all__ = [
    "ClassSufficientStats",
    "FittedModel",
    "HyperParams",
    "LabeledDataset",
    "PredictiveDistribution",
    "Variant",
    "classify",
    "fit",
    "load_model",
    "predict",
    "save_model",
    "solve_hyperparameters",
]
