"""Seismic heatmap rendering: positive relevance in red, negative in blue.

Values are normalized by the map's own absolute maximum, so rendering is
invariant under positive rescaling of the map.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from hedgegrad.errors import NonFiniteError, ValidationError


def heatmap_rgb(map2d) -> np.ndarray:
    """8-bit RGB image of a 2-D map: t = v/max|v|, red ramp for t >= 0,
    blue ramp for t < 0, white at zero. An all-zero map renders white."""
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"heatmap input must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteError("heatmap input contains non-finite values")
    peak = float(np.abs(arr).max())
    if peak == 0.0:
        return np.full(arr.shape + (3,), 255, dtype=np.uint8)
    t = arr / peak
    rgb = np.empty(arr.shape + (3,), dtype=np.uint8)
    fade_pos = np.rint(255.0 * (1.0 - t)).astype(np.uint8)
    fade_neg = np.rint(255.0 * (1.0 + t)).astype(np.uint8)
    pos = t >= 0
    rgb[..., 0] = np.where(pos, 255, fade_neg)
    rgb[..., 1] = np.where(pos, fade_pos, fade_neg)
    rgb[..., 2] = np.where(pos, fade_pos, 255)
    return rgb


def render_heatmap(map2d, path) -> str:
    """Write the map as an 8-bit RGB PNG; returns the path written."""
    Image.fromarray(heatmap_rgb(map2d), mode="RGB").save(path)
    return str(path)
