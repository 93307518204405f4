"""Gradient Episodic Memory and continual-learning baselines."""

from .continuum import ContinuumSpec, TaskStream, build_stream, load_idx, write_idx
from .experiment import ExperimentConfig, LearnerConfig, grid_search, run
from .learners import (
    EWCClassifier,
    GEMClassifier,
    IndependentClassifier,
    MultimodalClassifier,
    SingleClassifier,
    make_learner,
)
from .memory import EpisodicMemory
from .metrics import RMatrix, acc, bwt, evaluate_all, fwt
from .predictor import MLP, MlpConfig
from .projection import project, solve_dual, violations

__version__ = "0.1.0"

__all__ = [
    "ContinuumSpec",
    "EWCClassifier",
    "EpisodicMemory",
    "ExperimentConfig",
    "GEMClassifier",
    "IndependentClassifier",
    "LearnerConfig",
    "MLP",
    "MlpConfig",
    "MultimodalClassifier",
    "RMatrix",
    "SingleClassifier",
    "TaskStream",
    "acc",
    "build_stream",
    "bwt",
    "evaluate_all",
    "fwt",
    "grid_search",
    "load_idx",
    "make_learner",
    "project",
    "run",
    "solve_dual",
    "violations",
    "write_idx",
]
