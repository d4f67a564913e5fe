"""Dense float64 matrix helpers with strict shape and finiteness checks.

Everything in the package works on plain row-major numpy arrays; these
helpers centralize the validation so shape bugs surface as configuration
errors rather than silent broadcasting.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericalError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous 2-D float64 array and check finiteness."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ConfigError(f"{name} must be 2-D, got shape {out.shape}")
    check_finite(out, name)
    return out


def check_finite(a: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} contains non-finite entries")


def matmul(a, b) -> np.ndarray:
    """Matrix product with dimension and finiteness validation."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    out = a @ b
    check_finite(out, "matmul result")
    return out


def l2_norm(v: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))
