"""Regularized stochastic BFGS for linear support vector machines."""

__version__ = "0.1.0"

from .curvature import CurvatureFault, HessianApprox, UpdateResult
from .dataset import (
    Sample,
    SyntheticSpec,
    TrainingSet,
    clairvoyant_accuracy,
    evaluate_accuracy,
    generate_synthetic,
    load_csv,
    sample_minibatch,
    save_csv,
)
from .losses import LossKind, Objective, average_objective, instantaneous_gradient, loss_gradient, loss_value
from .optimizer import (
    Constant,
    Decaying,
    Method,
    OptimizationFault,
    OptimizerState,
    ResConfig,
    TrajectoryLog,
    check_rate_condition,
    estimate_diagnostics,
    rate_bound,
    res_step,
    run,
    sgd_step,
)

__all__ = [
    "Constant", "CurvatureFault", "Decaying", "HessianApprox", "LossKind", "Method", "Objective",
    "OptimizationFault", "OptimizerState", "ResConfig", "Sample", "SyntheticSpec", "TrainingSet",
    "TrajectoryLog", "UpdateResult", "average_objective", "check_rate_condition",
    "clairvoyant_accuracy", "estimate_diagnostics", "evaluate_accuracy", "generate_synthetic",
    "instantaneous_gradient", "load_csv", "loss_gradient", "loss_value", "rate_bound", "res_step",
    "run", "sample_minibatch", "save_csv", "sgd_step",
]
