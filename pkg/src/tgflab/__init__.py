"""Pseudo-spectral laboratory for 2D third-grade fluids with additive noise."""
from .field import GridSpec, SpectralField, TensorField, inner, norm, sym_grad
from .operators import FluidParams, ParameterError, compute_rho, estimate_md

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "SpectralField",
    "TensorField",
    "inner",
    "norm",
    "sym_grad",
    "FluidParams",
    "ParameterError",
    "compute_rho",
    "estimate_md",
]
