"""Kernel-classifier (NPLM) two-sample statistic and its hyperparameter tuning."""

from .model import (
    EXP_CLIP,
    KernelModel,
    NplmHyperparams,
    SolverConfig,
    fit,
    kernel_eval,
    kernel_matrix,
    load_model,
    nplm_statistic,
    nplm_statistic_from_values,
    nplm_test,
    objective,
    objective_gradient,
    save_model,
)
from .tuning import DistanceHistogram, GridCell, TuningReport, choose_cell, plateau_m, scan_m_lambda, tune_sigma

__all__ = [
    "EXP_CLIP",
    "DistanceHistogram",
    "GridCell",
    "KernelModel",
    "NplmHyperparams",
    "SolverConfig",
    "TuningReport",
    "choose_cell",
    "fit",
    "kernel_eval",
    "kernel_matrix",
    "load_model",
    "nplm_statistic",
    "nplm_statistic_from_values",
    "nplm_test",
    "objective",
    "objective_gradient",
    "plateau_m",
    "save_model",
    "scan_m_lambda",
    "tune_sigma",
]
