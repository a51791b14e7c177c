"""Synthetic annotated dataset: colored shapes on textured backgrounds.

Images carry one or two non-overlapping shapes from a small class set
(disc, square, triangle, cross), each class in its own color family so a
tiny CNN can both classify and localize. Every object comes with an exact
binary mask and a bounding box. Pixel values are quantized to 8 bits at
generation time so the PNG round trip is lossless.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from hedgegrad.errors import ManifestError, StorageError, ValidationError

SHAPE_CLASSES = ("disc", "square", "triangle", "cross")

# Base RGB per class; instances get a small deterministic jitter.
CLASS_COLORS = {
    "disc": (0.85, 0.15, 0.15),
    "square": (0.15, 0.75, 0.20),
    "triangle": (0.20, 0.30, 0.90),
    "cross": (0.90, 0.80, 0.15),
}

MIN_CANVAS = 16


@dataclass(frozen=True)
class AnnotatedSample:
    """One image with per-object labels, binary masks, and boxes.

    image: float32 (3, H, W) in [0, 1], 8-bit quantized.
    labels: class indices, one per object.
    masks: boolean (H, W) arrays aligned with labels; pairwise disjoint.
    boxes: inclusive (row_min, col_min, row_max, col_max) per object.
    """

    image: np.ndarray
    labels: tuple
    masks: tuple
    boxes: tuple

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ValidationError(f"sample image must be (3, H, W), got {img.shape}")
        if not (len(self.labels) == len(self.masks) == len(self.boxes)):
            raise ValidationError("labels, masks, and boxes must align one-to-one")
        if not self.labels:
            raise ValidationError("sample must carry at least one label")
        masks = []
        for mask in self.masks:
            m = np.asarray(mask, dtype=bool)
            if m.shape != img.shape[1:]:
                raise ValidationError(
                    f"mask shape {m.shape} does not match image {img.shape[1:]}"
                )
            if not m.any():
                raise ValidationError("every labeled object needs at least one mask pixel")
            m.setflags(write=False)
            masks.append(m)
        img.setflags(write=False)
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "labels", tuple(int(c) for c in self.labels))
        object.__setattr__(self, "masks", tuple(masks))
        object.__setattr__(
            self, "boxes", tuple(tuple(int(v) for v in box) for box in self.boxes)
        )


def _rasterize(kind, size, cy, cx, r):
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "disc":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "square":
        return np.maximum(np.abs(yy - cy), np.abs(xx - cx)) <= r
    if kind == "triangle":
        rows = (yy >= cy - r) & (yy <= cy + r)
        return rows & (np.abs(xx - cx) <= (yy - (cy - r)) * 0.5)
    if kind == "cross":
        t = max(1, r // 3)
        bar_h = (np.abs(yy - cy) <= t) & (np.abs(xx - cx) <= r)
        bar_v = (np.abs(xx - cx) <= t) & (np.abs(yy - cy) <= r)
        return bar_h | bar_v
    raise ValidationError(f"unknown shape class '{kind}'")


def _bounding_box(mask):
    rows = np.any(mask, axis=1).nonzero()[0]
    cols = np.any(mask, axis=0).nonzero()[0]
    return (int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))


def _place_objects(rng, size, kinds):
    """Place one mask per kind, rejection-sampling until all are disjoint."""
    placed = []
    occupied = np.zeros((size, size), dtype=bool)
    for kind in kinds:
        r = int(rng.integers(max(3, size // 10), max(4, size // 6) + 1))
        for attempt in range(500):
            margin = r + 1
            cy = int(rng.integers(margin, size - margin))
            cx = int(rng.integers(margin, size - margin))
            mask = _rasterize(kind, size, cy, cx, r)
            if not (mask & occupied).any():
                break
            if attempt % 200 == 199 and r > 3:
                r -= 1
        else:
            raise ValidationError(
                f"canvas of size {size} is too small to place {len(kinds)} shapes"
            )
        occupied |= mask
        placed.append(mask)
    return placed


def generate_synthetic_dataset(n, image_size=32, class_names=SHAPE_CLASSES, seed=0,
                               objects="mixed"):
    """Render n annotated samples; deterministic per seed, balanced classes.

    objects: "single", "double", or "mixed" (alternating one and two shapes).
    """
    if n <= 0:
        raise ValidationError("dataset size must be positive")
    if image_size < MIN_CANVAS:
        raise ValidationError(
            f"canvas of size {image_size} is too small (minimum {MIN_CANVAS})"
        )
    class_names = tuple(class_names)
    if not class_names:
        raise ValidationError("class set must be nonempty")
    for name in class_names:
        if name not in SHAPE_CLASSES:
            raise ValidationError(f"unknown shape class '{name}'")
    if objects not in ("single", "double", "mixed"):
        raise ValidationError(f"objects must be single, double, or mixed, got '{objects}'")
    k = len(class_names)
    if objects != "single" and k < 2:
        raise ValidationError("two-object images need at least two classes")

    rng = np.random.default_rng(seed)
    samples = []
    label_counter = 0
    for idx in range(n):
        if objects == "single":
            count = 1
        elif objects == "double":
            count = 2
        else:
            count = 1 if idx % 2 == 0 else 2
        first = label_counter % k
        labels = [first] if count == 1 else [first, (first + 1) % k]
        label_counter += count

        background = rng.uniform(0.25, 0.45)
        img = np.full((3, image_size, image_size), background, dtype=np.float64)
        img += rng.uniform(-0.06, 0.06, size=img.shape)

        kinds = [class_names[c] for c in labels]
        masks = _place_objects(rng, image_size, kinds)
        for label, mask in zip(labels, masks):
            color = np.asarray(CLASS_COLORS[class_names[label]])
            color = np.clip(color + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
            img[:, mask] = color[:, None]

        img = np.clip(img, 0.0, 1.0)
        img = np.round(img * 255.0) / 255.0
        samples.append(
            AnnotatedSample(
                image=img.astype(np.float32),
                labels=tuple(labels),
                masks=tuple(masks),
                boxes=tuple(_bounding_box(m) for m in masks),
            )
        )
    return samples


def _image_to_png(img, path):
    arr = np.round(np.asarray(img, dtype=np.float64) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def save_dataset(samples, path, class_names=SHAPE_CLASSES):
    """Write PNG images, per-sample label-coded mask PNGs, annotations.json."""
    if not samples:
        raise ValidationError("cannot save an empty dataset")
    os.makedirs(path, exist_ok=True)
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    os.makedirs(os.path.join(path, "masks"), exist_ok=True)
    entries = []
    for idx, sample in enumerate(samples):
        name = f"sample_{idx:04d}.png"
        mask_name = f"sample_{idx:04d}_mask.png"
        _image_to_png(sample.image, os.path.join(path, "images", name))
        # One mask PNG per sample: pixel value = label index + 1, 0 background.
        combined = np.zeros(sample.image.shape[1:], dtype=np.uint8)
        for label, mask in zip(sample.labels, sample.masks):
            combined[mask] = label + 1
        Image.fromarray(combined, mode="L").save(os.path.join(path, "masks", mask_name))
        entries.append(
            {
                "file": f"images/{name}",
                "mask_file": f"masks/{mask_name}",
                "labels": list(sample.labels),
                "boxes": [list(box) for box in sample.boxes],
            }
        )
    doc = {"version": 1, "class_names": list(class_names), "samples": entries}
    with open(os.path.join(path, "annotations.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path):
    """Read a dataset directory back; returns (samples, class_names)."""
    manifest_path = os.path.join(path, "annotations.json")
    try:
        with open(manifest_path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read dataset annotations: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"annotations.json is not valid JSON: {exc}") from exc
    if doc.get("version") != 1:
        raise ManifestError(f"unsupported dataset version {doc.get('version')!r}")
    class_names = tuple(doc["class_names"])
    samples = []
    for entry in doc["samples"]:
        img = decode_image(os.path.join(path, entry["file"]), channels=3)
        mask_img = Image.open(os.path.join(path, entry["mask_file"]))
        combined = np.asarray(mask_img, dtype=np.uint8)
        labels = tuple(int(c) for c in entry["labels"])
        masks = tuple(combined == label + 1 for label in labels)
        boxes = tuple(tuple(int(v) for v in box) for box in entry["boxes"])
        samples.append(AnnotatedSample(image=img, labels=labels, masks=masks, boxes=boxes))
    return samples, class_names


def decode_image(path, channels=3):
    """Decode an 8-bit PNG or PPM (P6) file to float32 (C, H, W) in [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise StorageError(f"cannot read image '{path}': {exc}") from exc
    if img.mode == "L" and channels == 3:
        img = img.convert("RGB")
    if img.mode not in ("L", "RGB"):
        raise ValidationError(
            f"unsupported image mode '{img.mode}' in '{path}': need 8-bit RGB or grayscale"
        )
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    if arr.shape[0] != channels:
        raise ValidationError(
            f"image '{path}' has {arr.shape[0]} channels, expected {channels}"
        )
    return np.ascontiguousarray(arr)
