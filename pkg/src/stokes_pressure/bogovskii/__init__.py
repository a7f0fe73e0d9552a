"""Bogovskii operator: kernel, quadrature and identity checks."""

from .bump import BumpFunction
from .operator import (
    DEFAULT_CONFIG,
    BogovskiiConfig,
    apply_bogovskii,
    apply_scaled,
    commutator_residual,
    divergence,
    divergence_residual,
    eval_kernel,
    norm_bound_probe,
    scaled_bump,
)

__all__ = [
    "DEFAULT_CONFIG",
    "BogovskiiConfig",
    "BumpFunction",
    "apply_bogovskii",
    "apply_scaled",
    "commutator_residual",
    "divergence",
    "divergence_residual",
    "eval_kernel",
    "norm_bound_probe",
    "scaled_bump",
]
