"""Evaluation protocols: pointing game, positive ratio, region insertion,
outside-inside ratio, and the cascading weight-randomization sanity check.

All metrics consume channel-summed 2-D maps; aggregation is a plain mean,
so per-sample computations commute and may run in any order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

from hedgegrad.attribution import attribute
from hedgegrad.errors import NumericError, ValidationError
from hedgegrad.model import forward_model, normalize_input, randomize_layers


def _as_map2d(map2d, name="map"):
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _as_mask(mask, shape=None):
    arr = np.asarray(mask)
    values = np.unique(arr)
    if not np.isin(values, (0, 1)).all():
        raise ValidationError("mask must be binary")
    arr = arr.astype(bool)
    if arr.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise ValidationError(f"mask shape {arr.shape} does not match map {shape}")
    return arr


def pearson(a, b):
    """Correlation of two equally shaped arrays; identical inputs give 1.0
    exactly, constant inputs give 0.0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError("correlation needs equally sized arrays")
    if np.array_equal(a, b):
        return 1.0
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        return 0.0
    return float((da * db).sum() / denom)


def pointing_game(map2d, mask, tolerance_radius=0):
    """Hit iff the map's argmax pixel falls inside the mask dilated by the
    tolerance radius. Ties resolve to the first pixel in row-major order."""
    arr = _as_map2d(map2d)
    m = _as_mask(mask, arr.shape)
    if not m.any():
        raise ValidationError("pointing game needs a nonempty annotation")
    flat_idx = int(np.argmax(arr))
    pos = np.unravel_index(flat_idx, arr.shape)
    if tolerance_radius <= 0:
        return bool(m[pos])
    distance = distance_transform_edt(~m)
    return bool(distance[pos] <= tolerance_radius)


def positive_ratio(map2d):
    """Fraction of strictly positive pixels in the channel-summed map."""
    arr = _as_map2d(map2d)
    return float((arr > 0).mean())


def outside_inside_ratio(map2d, mask):
    """Mean normalized relevance outside the mask over the mean inside.

    The map is rescaled to [0, 1] via (v - min)/(max - min) first, which
    makes the ratio invariant under affine rescaling of the raw map.
    """
    arr = _as_map2d(map2d)
    m = _as_mask(mask, arr.shape)
    if not m.any() or m.all():
        raise ValidationError("ratio needs nonempty inside and outside regions")
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        raise NumericError("outside-inside ratio is undefined for a constant map")
    norm = (arr - lo) / (hi - lo)
    inside = float(norm[m].mean())
    outside = float(norm[~m].mean())
    if inside == 0.0:
        raise NumericError("no relevance mass inside the mask")
    return outside / inside


def expected_random_hit_rate(masks):
    """Hit rate a uniformly random pointing location would achieve: the mean
    mask area fraction over the given annotations."""
    fractions = [float(_as_mask(m).mean()) for m in masks]
    if not fractions:
        raise ValidationError("need at least one mask")
    return float(np.mean(fractions))


def relevance_rank_order(map2d):
    """Pixel indices sorted by descending relevance, row-major tie-break."""
    arr = _as_map2d(map2d)
    return np.argsort(-arr, axis=None, kind="stable")


def morf_insertion_curve(model, samples, maps, steps=20, blur_sigma=10.0,
                         batch_size=64):
    """Top-1 accuracy while inserting the top-k% most relevant pixels of each
    original image onto its Gaussian-blurred copy, k = 0..steps percent.

    Returns an array of steps+1 accuracies; index 0 is the fully blurred
    baseline and index k the curve point at k percent.
    """
    if steps < 1 or steps > 100:
        raise ValidationError(f"steps must cover 1..100 percent, got {steps}")
    if len(maps) != len(samples):
        raise ValidationError("need exactly one attribution map per sample")
    images = np.stack([s.image for s in samples]).astype(np.float32)
    labels = np.asarray([s.labels[0] for s in samples])
    n, _, h, w = images.shape
    orders = np.empty((n, h * w), dtype=np.int64)
    for i, m in enumerate(maps):
        arr = _as_map2d(m)
        if arr.shape != (h, w):
            raise ValidationError(
                f"map {i} shape {arr.shape} does not match image ({h}, {w})"
            )
        orders[i] = relevance_rank_order(arr)
    blurred = np.stack(
        [gaussian_filter(img, sigma=(0, blur_sigma, blur_sigma)) for img in images]
    ).astype(np.float32)

    flat_orig = images.reshape(n, 3, h * w)
    flat_blur = blurred.reshape(n, 3, h * w)
    accuracies = []
    for k in range(0, steps + 1):
        keep = (h * w * k) // 100
        composite = flat_blur.copy()
        for i in range(n):
            sel = orders[i, :keep]
            composite[i, :, sel] = flat_orig[i, :, sel]
        batch = composite.reshape(n, 3, h, w)
        hits = 0
        for start in range(0, n, batch_size):
            chunk = normalize_input(model, batch[start:start + batch_size])
            logits = forward_model(model, chunk)
            hits += int((np.argmax(logits, axis=1) == labels[start:start + batch_size]).sum())
        accuracies.append(hits / n)
    return np.asarray(accuracies)


@dataclass(frozen=True)
class SanityResult:
    """Per-stage outcome of the cascading randomization check."""

    correlations: tuple
    maps: tuple
    stage_layers: tuple


def sanity_check(model, image, target, seed=0, config=None):
    """Randomize weighted layers end to beginning, one more per stage, and
    report |Pearson| between the original and each perturbed map.

    Stage 0 randomizes nothing and therefore reports exactly 1.0; stage i
    randomizes the last i weighted layers.
    """
    weighted = [k for k, layer in enumerate(model.layers) if layer.has_weights]
    if len(weighted) < 2:
        raise ValidationError("sanity check needs at least two weighted layers")
    x = normalize_input(model, image)
    original = attribute(model, x, target, config=config).map2d
    correlations = [pearson(original, original)]
    maps = [original]
    stage_layers = [()]
    for i in range(1, len(weighted) + 1):
        indices = tuple(weighted[len(weighted) - i:])
        perturbed = randomize_layers(model, indices, seed)
        map_i = attribute(perturbed, x, target, config=config).map2d
        correlations.append(abs(pearson(original, map_i)))
        maps.append(map_i)
        stage_layers.append(indices)
    return SanityResult(
        correlations=tuple(correlations),
        maps=tuple(maps),
        stage_layers=tuple(stage_layers),
    )
