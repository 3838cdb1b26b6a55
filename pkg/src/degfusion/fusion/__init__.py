"""Gaussian-process fusion of corrected multi-sensor series."""

from .data import LabeledDataset, NoiseModel
from .gp import (
    FusionConfig,
    GPOptions,
    GPPosterior,
    default_kernel,
    variogram_lengthscale,
    default_noise,
    degradation_multipliers,
    exact_gp_fit,
    fuse,
    initial_inducing,
    prediction_table,
    svgp_fit,
)
from .kernels import KERNELS, Kernel, canonical_kernel, kernel_eval
from .objectives import log_marginal_likelihood, svgp_elbo

__all__ = [
    "KERNELS",
    "FusionConfig",
    "GPOptions",
    "GPPosterior",
    "Kernel",
    "LabeledDataset",
    "NoiseModel",
    "canonical_kernel",
    "default_kernel",
    "default_noise",
    "degradation_multipliers",
    "exact_gp_fit",
    "fuse",
    "initial_inducing",
    "kernel_eval",
    "log_marginal_likelihood",
    "prediction_table",
    "svgp_elbo",
    "svgp_fit",
    "variogram_lengthscale",
]
