"""Learned nonlinear analysis operators with linear classifiers, plus baselines."""

from . import baselines  # noqa: F401  registers baseline classifiers
from .classify import classify, evaluate
from .nacm import AnalysisModel, cosparsity, extract_features
from .train import HyperParams, NonSepModel, SepModel, train

__all__ = ["AnalysisModel", "HyperParams", "NonSepModel", "SepModel", "classify",
           "cosparsity", "evaluate", "extract_features", "train"]
