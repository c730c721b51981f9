"""Desk-scale hypocoercivity toolkit for linear Fokker-Planck equations."""

__version__ = "0.1.0"

from .matrix_core import (  # noqa: F401
    Certificate,
    ConditionReport,
    FPSystem,
    NormalizedSystem,
    SpectralData,
    analyze_drift_spectrum,
    build_certificate,
    matrix_exponential,
    normalize_system,
    solve_lyapunov,
    validate_system,
)
