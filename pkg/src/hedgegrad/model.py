"""Model graph, JSON manifest + GHT1 blob storage, batch-norm folding, and
layer-weight randomization.

A manifest is a JSON file next to one GHT1 blob per weighted layer
(``layer<k>_w.ght`` / ``layer<k>_b.ght``). Batch-norm parameters may ride
along on a conv entry and are folded into the weights at load; a saved
model therefore never contains batch-norm entries.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import ght
from .errors import ManifestError, StorageError, ValidationError
from .layers import LAYER_KINDS, LayerSpec, forward_layer

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True, eq=False)
class ModelGraph:
    """Sequential network: layers 0..L-1 from input to logits.

    ``target_layer`` indexes the feature layer whose output map the
    attribution engine explains (by default the one feeding the first
    global average pool).
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int, int]
    normalization_mean: tuple[float, ...]
    normalization_std: tuple[float, ...]
    target_layer: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("model needs at least one layer")
        if not (0 <= self.target_layer < len(self.layers)):
            raise ValidationError(
                f"target_layer {self.target_layer} outside 0..{len(self.layers) - 1}"
            )
        if len(self.input_shape) != 4:
            raise ValidationError(f"input shape must be N,C,H,W, got {self.input_shape}")
        c = self.input_shape[1]
        if len(self.normalization_mean) != c or len(self.normalization_std) != c:
            raise ValidationError(
                f"normalization stats must have {c} channel entries, got "
                f"{len(self.normalization_mean)}/{len(self.normalization_std)}"
            )
        if any(s <= 0 for s in self.normalization_std):
            raise ValidationError("normalization std entries must be positive")
        self.layer_shapes()  # composition check

    def __eq__(self, other):
        if not isinstance(other, ModelGraph):
            return NotImplemented
        if (
            self.input_shape != other.input_shape
            or self.normalization_mean != other.normalization_mean
            or self.normalization_std != other.normalization_std
            or self.target_layer != other.target_layer
            or self.class_names != other.class_names
            or len(self.layers) != len(other.layers)
        ):
            return False
        return all(_specs_equal(a, b) for a, b in zip(self.layers, other.layers))

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Activation shapes from network input to logits, length L+1.

        Raises a composition error naming both offending layers.
        """
        shapes = [tuple(self.input_shape)]
        for k, layer in enumerate(self.layers):
            try:
                shapes.append(layer.output_shape(shapes[-1]))
            except ValidationError as exc:
                before = self.layers[k - 1].label if k else "network input"
                raise ManifestError(
                    f"layer {k} ({layer.label}) does not compose with "
                    f"layer {k - 1} ({before}): {exc}"
                ) from exc
        return shapes

    @property
    def class_count(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        for layer in reversed(self.layers):
            if layer.kind == "linear":
                return layer.weights.shape[0]
        raise ValidationError("cannot infer class count: no linear layer and no class names")

    @property
    def classification_start(self) -> int:
        """Index of the first classification-stage layer."""
        return self.target_layer + 1


def normalize_input(model: ModelGraph, x) -> np.ndarray:
    """Standardize image values with the model's per-channel statistics."""
    x = np.asarray(x, dtype=np.float32)
    batched = x[None] if x.ndim == 3 else x
    if batched.ndim != 4 or batched.shape[1] != model.input_shape[1]:
        raise ValidationError(
            f"input shape {x.shape} does not match model input {model.input_shape}"
        )
    mean = np.asarray(model.normalization_mean, dtype=np.float32)[:, None, None]
    std = np.asarray(model.normalization_std, dtype=np.float32)[:, None, None]
    out = (batched - mean) / std
    return out if x.ndim == 4 else out[0]


def forward_model(model: ModelGraph, x) -> np.ndarray:
    """Run already-normalized inputs through every layer; returns logits."""
    y = np.asarray(x, dtype=np.float32)
    if y.ndim == 3:
        y = y[None]
    for layer in model.layers:
        y = forward_layer(layer, y)
    return y


def _specs_equal(a: LayerSpec, b: LayerSpec) -> bool:
    if (a.kind, a.kernel_size, a.stride, a.padding, a.name) != (
        b.kind,
        b.kernel_size,
        b.stride,
        b.padding,
        b.name,
    ):
        return False
    for wa, wb in ((a.weights, b.weights), (a.bias, b.bias)):
        if (wa is None) != (wb is None):
            return False
        if wa is not None and (wa.shape != wb.shape or wa.tobytes() != wb.tobytes()):
            return False
    return True


def default_target_layer(layers) -> int:
    """The layer feeding the first global average pool, else the last layer."""
    for k, layer in enumerate(layers):
        if layer.kind == "globalavgpool":
            if k == 0:
                raise ManifestError(
                    "globalavgpool is the first layer; no feature layer to target"
                )
            return k - 1
    return len(layers) - 1


def fold_batchnorm(conv: LayerSpec, mean, var, scale, shift, eps: float = 1e-5) -> LayerSpec:
    """Fold per-channel batch normalization into a conv layer.

    w' = w * scale/sqrt(var+eps); b' = (b - mean) * scale/sqrt(var+eps) + shift.
    """
    if conv.kind != "conv2d":
        raise ValidationError(f"batch-norm folding needs conv2d, got {conv.kind}")
    outc = conv.weights.shape[0]
    mean, var, scale, shift = (
        np.asarray(v, dtype=np.float64).reshape(-1) for v in (mean, var, scale, shift)
    )
    for pname, p in (("mean", mean), ("var", var), ("scale", scale), ("shift", shift)):
        if p.shape != (outc,):
            raise ValidationError(
                f"{conv.label}: batch-norm {pname} has {p.size} entries, conv has {outc} channels"
            )
    if np.any(var + eps <= 0):
        raise ValidationError(f"{conv.label}: batch-norm var+eps must be positive")
    gain = scale / np.sqrt(var + eps)
    w = np.asarray(conv.weights, dtype=np.float64) * gain[:, None, None, None]
    b = np.zeros(outc) if conv.bias is None else np.asarray(conv.bias, dtype=np.float64)
    b = (b - mean) * gain + shift
    return LayerSpec(
        "conv2d",
        weights=w.astype(np.float32),
        bias=b.astype(np.float32),
        stride=conv.stride,
        padding=conv.padding,
        name=conv.name,
    )


def randomize_layers(model: ModelGraph, indices, seed: int) -> ModelGraph:
    """New graph with the selected layers' weights re-drawn from a normal
    distribution matching each original layer's empirical moments."""
    indices = list(indices)
    for idx in indices:
        if not (0 <= idx < len(model.layers)):
            raise ValidationError(f"layer index {idx} outside 0..{len(model.layers) - 1}")
        if not model.layers[idx].has_weights:
            raise ValidationError(
                f"layer {idx} ({model.layers[idx].label}) has no weights to randomize"
            )
    rng = np.random.default_rng(seed)
    layers = list(model.layers)
    for idx in sorted(set(indices)):
        old = layers[idx]
        w = np.asarray(old.weights, dtype=np.float64)
        fresh = rng.normal(w.mean(), w.std(), size=w.shape).astype(np.float32)
        layers[idx] = LayerSpec(
            old.kind,
            weights=fresh,
            bias=old.bias,
            kernel_size=old.kernel_size,
            stride=old.stride,
            padding=old.padding,
            name=old.name,
        )
    return ModelGraph(
        layers=tuple(layers),
        input_shape=model.input_shape,
        normalization_mean=model.normalization_mean,
        normalization_std=model.normalization_std,
        target_layer=model.target_layer,
        class_names=model.class_names,
    )


# ---------------------------------------------------------------------------
# manifest serialization

_GEOM_KEYS = ("kernel_size", "stride", "padding")


def _layer_entry(k: int, layer: LayerSpec) -> dict:
    entry: dict = {"kind": layer.kind}
    if layer.kind == "conv2d":
        outc, inc, kh, _ = layer.weights.shape
        entry.update(
            out_channels=int(outc),
            in_channels=int(inc),
            kernel_size=int(kh),
            stride=layer.stride,
            padding=layer.padding,
        )
    elif layer.kind == "linear":
        outf, inf = layer.weights.shape
        entry.update(out_features=int(outf), in_features=int(inf))
    elif layer.kind in ("maxpool2d", "avgpool2d"):
        entry.update(
            kernel_size=layer.kernel_size, stride=layer.stride, padding=layer.padding
        )
    if layer.name:
        entry["name"] = layer.name
    if layer.has_weights:
        entry["weights"] = f"layer{k}_w.ght"
        entry["bias"] = f"layer{k}_b.ght" if layer.bias is not None else None
    return entry


def save_model(model: ModelGraph, path) -> str:
    """Write manifest.json plus weight blobs into directory ``path``."""
    os.makedirs(path, exist_ok=True)
    layers = []
    for k, layer in enumerate(model.layers):
        entry = _layer_entry(k, layer)
        if layer.has_weights:
            ght.save(os.path.join(path, entry["weights"]), layer.weights)
            if layer.bias is not None:
                ght.save(os.path.join(path, entry["bias"]), layer.bias)
        layers.append(entry)
    doc = {
        "version": MANIFEST_VERSION,
        "input_shape": list(model.input_shape),
        "normalization": {
            "mean": [float(v) for v in model.normalization_mean],
            "std": [float(v) for v in model.normalization_std],
        },
        "layers": layers,
        "target_layer": model.target_layer,
    }
    if model.class_names is not None:
        doc["class_names"] = list(model.class_names)
    manifest_path = os.path.join(path, MANIFEST_NAME)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def _require(entry: dict, key: str, idx: int):
    if key not in entry:
        raise ManifestError(f"layer {idx}: missing field {key!r}")
    return entry[key]


def _expected_weight_shapes(entry: dict, idx: int):
    kind = entry["kind"]
    if kind == "conv2d":
        outc = int(_require(entry, "out_channels", idx))
        inc = int(_require(entry, "in_channels", idx))
        k = int(_require(entry, "kernel_size", idx))
        return (outc, inc, k, k), (outc,)
    outf = int(_require(entry, "out_features", idx))
    inf = int(_require(entry, "in_features", idx))
    return (outf, inf), (outf,)


def _load_blob(base_dir: str, filename: str, expected_shape, what: str) -> np.ndarray:
    path = os.path.join(base_dir, filename)
    if not os.path.exists(path):
        raise ManifestError(f"{what}: referenced blob {filename!r} does not exist")
    expected_bytes = ght.file_size(expected_shape)
    actual = os.path.getsize(path)
    if actual != expected_bytes:
        raise ManifestError(
            f"{what}: blob {filename!r} is {actual} bytes, "
            f"expected {expected_bytes} for shape {expected_shape}"
        )
    arr = ght.load(path)
    if arr.shape != expected_shape:
        raise ManifestError(
            f"{what}: blob {filename!r} has shape {arr.shape}, expected {expected_shape}"
        )
    return arr


def _layer_from_entry(entry: dict, idx: int, base_dir: str) -> LayerSpec:
    if not isinstance(entry, dict):
        raise ManifestError(f"layer {idx}: expected an object, got {type(entry).__name__}")
    kind = _require(entry, "kind", idx)
    if kind not in LAYER_KINDS:
        raise ManifestError(f"layer {idx}: unknown kind {kind!r}")
    name = entry.get("name", "")
    try:
        if kind in ("conv2d", "linear"):
            w_shape, b_shape = _expected_weight_shapes(entry, idx)
            w_file = _require(entry, "weights", idx)
            what = f"layer {idx} ({kind})"
            weights = _load_blob(base_dir, w_file, w_shape, what)
            bias = None
            if entry.get("bias"):
                bias = _load_blob(base_dir, entry["bias"], b_shape, what)
            layer = LayerSpec(
                kind,
                weights=weights,
                bias=bias,
                stride=int(entry.get("stride", 1)),
                padding=int(entry.get("padding", 0)),
                name=name,
            )
            if kind == "conv2d" and "batchnorm" in entry:
                bn = entry["batchnorm"]
                layer = fold_batchnorm(
                    layer,
                    _require(bn, "mean", idx),
                    _require(bn, "var", idx),
                    _require(bn, "scale", idx),
                    _require(bn, "shift", idx),
                    eps=float(bn.get("eps", 1e-5)),
                )
            return layer
        if kind in ("maxpool2d", "avgpool2d"):
            return LayerSpec(
                kind,
                kernel_size=int(_require(entry, "kernel_size", idx)),
                stride=int(entry.get("stride", 1)),
                padding=int(entry.get("padding", 0)),
                name=name,
            )
        return LayerSpec(kind, name=name)
    except ValidationError as exc:
        raise ManifestError(f"layer {idx}: {exc}") from exc


def load_model(path) -> ModelGraph:
    """Load and validate a model from a manifest path or its directory."""
    path = os.fspath(path)
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest root must be an object")
    version = doc.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {version!r}")
    raw_shape = doc.get("input_shape")
    if not (
        isinstance(raw_shape, list)
        and len(raw_shape) == 4
        and all(isinstance(v, int) and v > 0 for v in raw_shape)
    ):
        raise ManifestError(f"{path}: field 'input_shape' must be 4 positive ints (N,C,H,W)")
    input_shape = tuple(raw_shape)
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ManifestError(f"{path}: field 'layers' must be a non-empty list")

    base_dir = os.path.dirname(os.path.abspath(path))
    layers = tuple(_layer_from_entry(e, i, base_dir) for i, e in enumerate(raw_layers))

    norm = doc.get("normalization") or {}
    c = input_shape[1]
    mean = tuple(float(v) for v in norm.get("mean", [0.0] * c))
    std = tuple(float(v) for v in norm.get("std", [1.0] * c))
    target = doc.get("target_layer")
    if target is None:
        target = default_target_layer(layers)
    elif not isinstance(target, int):
        raise ManifestError(f"{path}: field 'target_layer' must be an integer")
    class_names = doc.get("class_names")
    if class_names is not None:
        if not (isinstance(class_names, list) and all(isinstance(s, str) for s in class_names)):
            raise ManifestError(f"{path}: field 'class_names' must be a list of strings")
        class_names = tuple(class_names)

    try:
        model = ModelGraph(
            layers=layers,
            input_shape=input_shape,
            normalization_mean=mean,
            normalization_std=std,
            target_layer=target,
            class_names=class_names,
        )
    except ManifestError:
        raise
    except ValidationError as exc:
        raise ManifestError(f"{path}: {exc}") from exc

    # Any accepted manifest must support a real forward pass.
    x = np.zeros(model.input_shape, dtype=np.float32)
    for layer in model.layers:
        x = forward_layer(layer, x)
    return model


def model_weights_digest(model: ModelGraph) -> str:
    """Hex digest over all layer parameters, for provenance records."""
    import hashlib

    h = hashlib.sha256()
    for layer in model.layers:
        h.update(layer.kind.encode())
        h.update(np.int64([layer.kernel_size, layer.stride, layer.padding]).tobytes())
        if layer.weights is not None:
            h.update(layer.weights.tobytes())
        if layer.bias is not None:
            h.update(layer.bias.tobytes())
    return h.hexdigest()
