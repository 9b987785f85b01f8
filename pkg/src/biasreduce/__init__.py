"""Bias reduction for smooth functionals of Gaussian parameters via bootstrap chains."""

from .chain import (
    ChainPath,
    KernelKind,
    MCEstimate,
    alt_sum,
    default_k,
    estimate_Bk,
    evaluate_fk,
    fk_weights,
    full_estimator,
    homotopy_exact,
    homotopy_smoothed,
    sample_chain,
    superpose_Gk,
)
from .config import ExperimentConfig
from .functionals import Functional, Gradient, evaluate, fd_check, grad, sigma_f
from .harness import (
    LossFunction,
    RiskReport,
    ks_normal,
    normality_experiment,
    orlicz_norm,
    rate_sweep,
    risk_eval,
)
from .model import (
    EigenDecomp,
    NoiseBlock,
    ParamDomain,
    SmoothSqrt,
    Theta,
    apply_spectral,
    estimate_theta,
    gamma_matrix,
    param_norm,
    sample_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "ChainPath",
    "EigenDecomp",
    "ExperimentConfig",
    "Functional",
    "Gradient",
    "KernelKind",
    "LossFunction",
    "MCEstimate",
    "NoiseBlock",
    "ParamDomain",
    "RiskReport",
    "SmoothSqrt",
    "Theta",
    "alt_sum",
    "apply_spectral",
    "default_k",
    "estimate_Bk",
    "estimate_theta",
    "evaluate",
    "evaluate_fk",
    "fd_check",
    "fk_weights",
    "full_estimator",
    "gamma_matrix",
    "grad",
    "homotopy_exact",
    "homotopy_smoothed",
    "ks_normal",
    "normality_experiment",
    "orlicz_norm",
    "param_norm",
    "rate_sweep",
    "risk_eval",
    "sample_chain",
    "sample_dataset",
    "sigma_f",
    "superpose_Gk",
]
