"""Small shared tensor helpers.

Tensors are dense rank<=4 float32 numpy arrays, row-major, laid out
N,C,H,W for images and N,F for vectors. Every public operation checks
finiteness on entry and exit.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ValidationError


def as_f32(arr, name: str = "tensor") -> np.ndarray:
    """Coerce to a contiguous float32 array of rank 1..4 and check finiteness."""
    out = np.ascontiguousarray(arr, dtype=np.float32)
    if out.ndim == 0 or out.ndim > 4:
        raise ValidationError(f"{name}: rank must be 1..4, got {out.ndim}")
    check_finite(out, name)
    return out


def check_finite(arr: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def sign_keep_zero_positive(z: np.ndarray) -> np.ndarray:
    """sign(z) with sign(0) = +1, for the epsilon stabilizer."""
    return np.where(z < 0, -1.0, 1.0).astype(z.dtype)


def stabilized(z: np.ndarray, epsilon: float) -> np.ndarray:
    """z + sign(z)*epsilon with zero treated as positive."""
    return z + sign_keep_zero_positive(z) * epsilon
