"""Exact rates, coupled dynamics and simulation of the long-range exclusion process."""

from __future__ import annotations

from .lattice import (
    Kernel,
    KernelValidationError,
    NotComputableError,
    NumericalFailure,
    SiteSpace,
    absorb,
)

__version__ = "0.1.0"

__all__ = [
    "Kernel",
    "KernelValidationError",
    "NotComputableError",
    "NumericalFailure",
    "SiteSpace",
    "absorb",
]
