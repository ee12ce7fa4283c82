"""Finite common atom model (fCAM) for spike inference from calcium imaging traces."""

from ._fcam import (
    Draws,
    NumericalError,
    Trace,
    ValidationError,
    adjusted_rand_index,
    bnb_log_pmf,
    fit,
    kalman_forward,
    misclassification_rate,
    simulate,
    slab_log_marginal,
    summarize,
)

__all__ = [
    "Draws",
    "NumericalError",
    "Trace",
    "ValidationError",
    "adjusted_rand_index",
    "bnb_log_pmf",
    "fit",
    "kalman_forward",
    "misclassification_rate",
    "simulate",
    "slab_log_marginal",
    "summarize",
]
