"""Layer kernels: forward passes, input/weight gradients, and proportional
relevance redistribution.

Redistribution follows the proportional rule

    z_j = sum_i x_i * w_ij                      (bias never enters)
    R_i = x_i * sum_j w_ij * r_j / (z_j + sign(z_j) * eps)

realized for convolutions as forward pass / divide / transposed-weight
pass / multiply. Maxpool routes relevance winner-take-all to the recorded
argmax; avgpool redistributes with its uniform 1/(k*k) weights; flatten is
a pure reindexing. Redistribution is computed in float64 internally so the
conservation ledger survives long chains; inputs and outputs stay float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    MaskValueError,
    PoolIndicesError,
    ShapeError,
    ValidationError,
)
from .tensors import as_f32, check_finite, stabilized

LAYER_KINDS = (
    "conv2d",
    "linear",
    "relu",
    "maxpool2d",
    "avgpool2d",
    "globalavgpool",
    "flatten",
)

# Kinds for which the proportional rule mixes neurons linearly.
REDISTRIBUTABLE_KINDS = ("conv2d", "linear", "avgpool2d", "globalavgpool")


class WeightTransform(Enum):
    """Weight preprocessing for the redistribution rule: w, |w|, w+, w-."""

    IDENTITY = "identity"
    ABSOLUTE = "absolute"
    POSITIVE = "positive"
    NEGATIVE = "negative"

    def apply(self, w: np.ndarray) -> np.ndarray:
        if self is WeightTransform.IDENTITY:
            return w
        if self is WeightTransform.ABSOLUTE:
            return np.abs(w)
        if self is WeightTransform.POSITIVE:
            return np.maximum(w, 0)
        return np.minimum(w, 0)

    def apply_scalar(self, w: float) -> float:
        if self is WeightTransform.NEGATIVE:
            return min(w, 0.0)
        if self is WeightTransform.POSITIVE:
            return max(w, 0.0)
        if self is WeightTransform.ABSOLUTE:
            return abs(w)
        return w


@dataclass(frozen=True)
class PoolArgmax:
    """Absolute input row/col of each maxpool window winner, shape (N,C,OH,OW)."""

    rows: np.ndarray
    cols: np.ndarray


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential model. Immutable after construction."""

    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValidationError(f"{self.label}: stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValidationError(f"{self.label}: padding must be >= 0, got {self.padding}")
        if self.weights is not None:
            w = as_f32(self.weights, f"{self.label} weights")
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)
        if self.bias is not None:
            b = as_f32(self.bias, f"{self.label} bias")
            b.flags.writeable = False
            object.__setattr__(self, "bias", b)
        if self.kind == "conv2d":
            if self.weights is None or self.weights.ndim != 4:
                raise ValidationError(f"{self.label}: conv2d needs 4-D weights OutC,InC,kH,kW")
            if self.bias is not None and self.bias.shape != (self.weights.shape[0],):
                raise ValidationError(
                    f"{self.label}: bias length {self.bias.shape} != out channels "
                    f"{self.weights.shape[0]}"
                )
            if self.padding >= max(self.weights.shape[2], self.weights.shape[3]) + 1:
                raise ValidationError(f"{self.label}: padding {self.padding} exceeds kernel")
        elif self.kind == "linear":
            if self.weights is None or self.weights.ndim != 2:
                raise ValidationError(f"{self.label}: linear needs 2-D weights OutF,InF")
            if self.bias is not None and self.bias.shape != (self.weights.shape[0],):
                raise ValidationError(
                    f"{self.label}: bias length {self.bias.shape} != out features "
                    f"{self.weights.shape[0]}"
                )
        elif self.kind in ("maxpool2d", "avgpool2d"):
            if self.kernel_size < 1:
                raise ValidationError(f"{self.label}: pooling needs kernel_size >= 1")
            if self.padding >= self.kernel_size:
                raise ValidationError(
                    f"{self.label}: padding {self.padding} must be < kernel {self.kernel_size}"
                )
            if self.weights is not None or self.bias is not None:
                raise ValidationError(f"{self.label}: {self.kind} carries no weights")
        else:
            if self.weights is not None or self.bias is not None:
                raise ValidationError(f"{self.label}: {self.kind} carries no weights")

    @property
    def label(self) -> str:
        return f"{self.kind}{f' {self.name!r}' if self.name else ''}"

    @property
    def has_weights(self) -> bool:
        return self.weights is not None

    def effective_stride(self) -> int:
        return self.stride

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Output shape for a given input shape; raises ShapeError on mismatch."""
        k = self.kind
        if k == "linear":
            if len(in_shape) != 2:
                raise ShapeError(f"{self.label}: expected 2-D N,F input, got {in_shape}")
            n, f = in_shape
            outf, inf = self.weights.shape
            if f != inf:
                raise ShapeError(f"{self.label}: input features {f} != expected {inf}")
            return (n, outf)
        if k == "relu":
            return tuple(in_shape)
        if len(in_shape) != 4:
            raise ShapeError(f"{self.label}: expected 4-D N,C,H,W input, got {in_shape}")
        n, c, h, w = in_shape
        if k == "conv2d":
            outc, inc, kh, kw = self.weights.shape
            if c != inc:
                raise ShapeError(f"{self.label}: input channels {c} != expected {inc}")
            oh = (h + 2 * self.padding - kh) // self.stride + 1
            ow = (w + 2 * self.padding - kw) // self.stride + 1
            if oh < 1 or ow < 1:
                raise ShapeError(f"{self.label}: kernel {kh}x{kw} larger than input {h}x{w}")
            return (n, outc, oh, ow)
        if k in ("maxpool2d", "avgpool2d"):
            ks = self.kernel_size
            oh = (h + 2 * self.padding - ks) // self.stride + 1
            ow = (w + 2 * self.padding - ks) // self.stride + 1
            if oh < 1 or ow < 1:
                raise ShapeError(f"{self.label}: window {ks} larger than input {h}x{w}")
            return (n, c, oh, ow)
        if k == "globalavgpool":
            return (n, c, 1, 1)
        if k == "flatten":
            return (n, c * h * w)
        raise ValidationError(f"unhandled kind {k}")


# ---------------------------------------------------------------------------
# window/im2col machinery


def _windows(x, kh, kw, stride, padding, fill=0.0):
    """All kh*kw sliding windows of x, shape (N,C,OH,OW,kh,kw)."""
    n, c, h, w = x.shape
    if padding:
        xp = np.full((n, c, h + 2 * padding, w + 2 * padding), fill, dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x
    else:
        xp = x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, :: stride, :: stride]


def _overlap_add(cols, x_shape, stride, padding):
    """Adjoint of _windows: scatter-add (N,C,OH,OW,kh,kw) windows back."""
    n, c, h, w = x_shape
    _, _, oh, ow, kh, kw = cols.shape
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[
                ..., i, j
            ]
    return out[:, :, padding : padding + h, padding : padding + w]


def _conv_forward(x, weights, bias, stride, padding):
    outc, inc, kh, kw = weights.shape
    win = _windows(x, kh, kw, stride, padding)
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    y = cols @ weights.reshape(outc, -1).T
    if bias is not None:
        y = y + bias
    return y.reshape(n, oh, ow, outc).transpose(0, 3, 1, 2)


def _conv_backward_input(grad_out, weights, x_shape, stride, padding):
    outc, inc, kh, kw = weights.shape
    n, _, oh, ow = grad_out.shape
    gmat = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, outc)
    cols = (gmat @ weights.reshape(outc, -1)).reshape(n, oh, ow, inc, kh, kw)
    return _overlap_add(cols.transpose(0, 3, 1, 2, 4, 5), x_shape, stride, padding)


def _conv_backward_weights(x, grad_out, weights_shape, stride, padding):
    outc, inc, kh, kw = weights_shape
    win = _windows(x, kh, kw, stride, padding)
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    gmat = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, outc)
    return (gmat.T @ cols).reshape(outc, inc, kh, kw)


def _maxpool_forward(x, k, stride, padding):
    win = _windows(x, k, k, stride, padding, fill=-np.inf)
    n, c, oh, ow = win.shape[:4]
    flat = win.reshape(n, c, oh, ow, k * k)
    idx = flat.argmax(axis=4)
    y = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]
    rows = np.arange(oh)[:, None] * stride - padding + idx // k
    cols = np.arange(ow)[None, :] * stride - padding + idx % k
    return np.ascontiguousarray(y), PoolArgmax(rows, cols)


def _scatter_to_argmax(values, aux: PoolArgmax, x_shape):
    n, c = x_shape[0], x_shape[1]
    out = np.zeros(x_shape, dtype=values.dtype)
    n_idx = np.arange(n)[:, None, None, None]
    c_idx = np.arange(c)[None, :, None, None]
    np.add.at(out, (n_idx, c_idx, aux.rows, aux.cols), values)
    return out


def _spread_uniform(grad_out, k, stride, padding, x_shape, scale):
    n, c, oh, ow = grad_out.shape
    cols = np.broadcast_to((grad_out * scale)[..., None, None], (n, c, oh, ow, k, k))
    return _overlap_add(cols, x_shape, stride, padding)


# ---------------------------------------------------------------------------
# public operations


def forward_layer(layer: LayerSpec, x) -> np.ndarray:
    """Layer forward pass. See forward_layer_aux for the maxpool indices."""
    y, _ = forward_layer_aux(layer, x)
    return y


def forward_layer_aux(layer: LayerSpec, x) -> tuple[np.ndarray, PoolArgmax | None]:
    """Forward pass returning (output, maxpool argmax or None)."""
    x = as_f32(x, f"{layer.label} input")
    layer.output_shape(x.shape)  # shape validation
    aux = None
    k = layer.kind
    if k == "conv2d":
        y = _conv_forward(x, layer.weights, layer.bias, layer.stride, layer.padding)
    elif k == "linear":
        y = x @ layer.weights.T
        if layer.bias is not None:
            y = y + layer.bias
    elif k == "relu":
        y = np.maximum(x, 0)
    elif k == "maxpool2d":
        y, aux = _maxpool_forward(x, layer.kernel_size, layer.stride, layer.padding)
    elif k == "avgpool2d":
        win = _windows(x, layer.kernel_size, layer.kernel_size, layer.stride, layer.padding)
        y = win.mean(axis=(4, 5))
    elif k == "globalavgpool":
        y = x.mean(axis=(2, 3), keepdims=True)
    else:  # flatten
        y = x.reshape(x.shape[0], -1)
    y = np.ascontiguousarray(y, dtype=np.float32)
    check_finite(y, f"{layer.label} output")
    return y, aux


def backward_gradient(
    layer: LayerSpec,
    x,
    grad_out,
    pool_indices: PoolArgmax | None = None,
) -> np.ndarray:
    """Gradient of the layer output wrt its input, chain-rule style.

    relu gates by x > 0; maxpool routes to the recorded argmax positions and
    requires the indices returned by forward_layer_aux.
    """
    x = as_f32(x, f"{layer.label} input")
    grad_out = as_f32(grad_out, f"{layer.label} grad_out")
    out_shape = layer.output_shape(x.shape)
    if grad_out.shape != out_shape:
        raise ShapeError(
            f"{layer.label}: grad_out shape {grad_out.shape} != output shape {out_shape}"
        )
    k = layer.kind
    if k == "conv2d":
        gx = _conv_backward_input(grad_out, layer.weights, x.shape, layer.stride, layer.padding)
    elif k == "linear":
        gx = grad_out @ layer.weights
    elif k == "relu":
        gx = grad_out * (x > 0)
    elif k == "maxpool2d":
        if pool_indices is None:
            raise PoolIndicesError(
                f"{layer.label}: backward before forward; pass the recorded argmax indices"
            )
        gx = _scatter_to_argmax(grad_out, pool_indices, x.shape)
    elif k == "avgpool2d":
        ks = layer.kernel_size
        gx = _spread_uniform(grad_out, ks, layer.stride, layer.padding, x.shape, 1.0 / (ks * ks))
    elif k == "globalavgpool":
        n, c, h, w = x.shape
        gx = np.broadcast_to(grad_out / (h * w), x.shape).astype(np.float32)
    else:  # flatten
        gx = grad_out.reshape(x.shape)
    gx = np.ascontiguousarray(gx, dtype=np.float32)
    return check_finite(gx, f"{layer.label} grad_in")


def backward_weight_gradient(layer: LayerSpec, x, grad_out):
    """(weight grad, bias grad or None) for conv2d/linear layers."""
    if layer.kind not in ("conv2d", "linear"):
        raise ValidationError(f"{layer.label}: weight gradient only for conv2d/linear")
    x = as_f32(x, f"{layer.label} input")
    grad_out = as_f32(grad_out, f"{layer.label} grad_out")
    out_shape = layer.output_shape(x.shape)
    if grad_out.shape != out_shape:
        raise ShapeError(
            f"{layer.label}: grad_out shape {grad_out.shape} != output shape {out_shape}"
        )
    if layer.kind == "conv2d":
        wg = _conv_backward_weights(x, grad_out, layer.weights.shape, layer.stride, layer.padding)
        bg = grad_out.sum(axis=(0, 2, 3)) if layer.bias is not None else None
    else:
        wg = grad_out.T @ x
        bg = grad_out.sum(axis=0) if layer.bias is not None else None
    wg = np.ascontiguousarray(wg, dtype=np.float32)
    check_finite(wg, f"{layer.label} weight grad")
    if bg is not None:
        bg = np.ascontiguousarray(bg, dtype=np.float32)
        check_finite(bg, f"{layer.label} bias grad")
    return wg, bg


def _redistribute_linearlike(layer, x64, transform, r64, epsilon):
    """forward / divide / transposed pass / multiply, in float64."""
    k = layer.kind
    if k == "conv2d":
        w64 = transform.apply(layer.weights.astype(np.float64))
        z = _conv_forward(x64, w64, None, layer.stride, layer.padding)
        s = r64 / stabilized(z, epsilon)
        c = _conv_backward_input(s, w64, x64.shape, layer.stride, layer.padding)
        return x64 * c
    if k == "linear":
        w64 = transform.apply(layer.weights.astype(np.float64))
        z = x64 @ w64.T
        s = r64 / stabilized(z, epsilon)
        return x64 * (s @ w64)
    if k == "avgpool2d":
        ks = layer.kernel_size
        w_val = transform.apply_scalar(1.0 / (ks * ks))
        win = _windows(x64, ks, ks, layer.stride, layer.padding)
        z = win.sum(axis=(4, 5)) * w_val
        s = r64 / stabilized(z, epsilon)
        return x64 * _spread_uniform(s, ks, layer.stride, layer.padding, x64.shape, w_val)
    # globalavgpool
    n, c, h, w = x64.shape
    w_val = transform.apply_scalar(1.0 / (h * w))
    z = x64.sum(axis=(2, 3), keepdims=True) * w_val
    s = r64 / stabilized(z, epsilon)
    return x64 * np.broadcast_to(s * w_val, x64.shape)


def redistribute_relevance(
    layer: LayerSpec,
    x,
    transform: WeightTransform,
    r_out,
    epsilon: float = 1e-9,
    pool_indices: PoolArgmax | None = None,
) -> np.ndarray:
    """Proportional relevance redistribution from layer output to input.

    Conserves the total: sum(R_in) == sum(r_out) whenever every denominator
    z_j stays well clear of the epsilon stabilizer. Maxpool routes
    winner-take-all (indices recomputed from x when not supplied); relu and
    flatten pass relevance through.
    """
    x = as_f32(x, f"{layer.label} input")
    r_out = as_f32(r_out, f"{layer.label} r_out")
    out_shape = layer.output_shape(x.shape)
    if r_out.shape != out_shape:
        raise ShapeError(
            f"{layer.label}: r_out shape {r_out.shape} != output shape {out_shape}"
        )
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    k = layer.kind
    if k in REDISTRIBUTABLE_KINDS:
        r_in = _redistribute_linearlike(
            layer, x.astype(np.float64), transform, r_out.astype(np.float64), epsilon
        )
    elif k == "relu":
        # Zero activations receive zero relevance from the proportional rule
        # upstream, so passing the map through unchanged conserves exactly.
        r_in = r_out.astype(np.float64)
    elif k == "maxpool2d":
        if pool_indices is None:
            _, pool_indices = _maxpool_forward(x, layer.kernel_size, layer.stride, layer.padding)
        r_in = _scatter_to_argmax(r_out.astype(np.float64), pool_indices, x.shape)
    else:  # flatten
        r_in = r_out.reshape(x.shape).astype(np.float64)
    r_in = np.ascontiguousarray(r_in, dtype=np.float32)
    return check_finite(r_in, f"{layer.label} relevance")


def redistribute_to_mask(
    layer: LayerSpec,
    mask,
    transform: WeightTransform,
    r_out,
    epsilon: float = 1e-9,
) -> np.ndarray:
    """Redistribution with a binary mask substituted for the input values."""
    if layer.kind not in REDISTRIBUTABLE_KINDS:
        raise ValidationError(f"{layer.label}: mask redistribution needs a mixing layer")
    mask = as_f32(mask, f"{layer.label} mask")
    if not (np.equal(mask, 0) | np.equal(mask, 1)).all():
        raise MaskValueError(f"{layer.label}: mask must contain only 0 and 1")
    return redistribute_relevance(layer, mask, transform, r_out, epsilon)
