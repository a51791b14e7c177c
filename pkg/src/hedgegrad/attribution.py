"""Attribution engine: forward tracing, target-class gradients, and the
gradient-hedging backward pass, plus proportional-LRP baselines.

The network splits at the target layer (by default the one feeding the
first global average pool). Layers after it form the classification stage,
traversed only by chain-rule gradients; the gradients and the target
activation combine into an initial contribution map whose total is
normalized to tau = 1. Feature-stage layers are then walked top-down: at
every mixing layer the map is split into modulated positive/negative
sections (sum tau and -tau) and pushed through four hedge components

    C = J(x, |w|, gamma*P' + N')      full-map redistribution
    A = J(alpha, |w|, P')             alpha = 1 where x > 0
    U = J(beta, |w|, N')              beta  = 1 where x <= 0
    Psi = tau / count(alpha)          subtracted at activated positions

so each hedged layer's output sums to (gamma-2)*tau. Pointwise 1x1
convolutions force gamma = 1 and skip Psi, summing to 0 instead. The first
layer maps relevance onto the input through the bounded rule that clips
contributions to the valid image domain.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateMapError,
    NumericError,
    SectionDegenerateError,
    DeadLayerError,
    ValidationError,
)
from .layers import (
    REDISTRIBUTABLE_KINDS,
    LayerSpec,
    PoolArgmax,
    WeightTransform,
    _conv_backward_input,
    _conv_forward,
    backward_gradient,
    forward_layer_aux,
    redistribute_relevance,
    redistribute_to_mask,
)
from .model import ModelGraph, model_weights_digest
from .tensors import as_f32, check_finite, stabilized

logger = logging.getLogger("hedgegrad")

BASELINE_METHODS = ("generic_lrp", "lrp_alpha_beta", "grad_activation")


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ActivationTrace:
    """Recorded forward pass: inputs[l] is the input of layer l for
    l < L and inputs[L] is the logits tensor."""

    inputs: tuple[np.ndarray, ...]
    pool_indices: dict[int, PoolArgmax]

    @property
    def logits(self) -> np.ndarray:
        return self.inputs[-1]


@dataclass(frozen=True)
class RelevanceMap:
    """Signed relevance aligned with the input of layer ``layer``."""

    tensor: np.ndarray
    layer: int | None = None
    tau: float = 1.0

    @property
    def total(self) -> float:
        return float(np.sum(self.tensor, dtype=np.float64))


@dataclass(frozen=True)
class SectionPair:
    """Elementwise split of a relevance map: positive >= 0, negative <= 0."""

    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        if self.positive.shape != self.negative.shape:
            raise ValidationError("section shapes differ")


@dataclass(frozen=True)
class HedgeConfig:
    """Knobs of the hedging pass.

    gamma trades sharpness for coverage inside [1, 2]; the enable_* toggles
    switch individual hedge components for ablation runs; zbeta_bounds
    overrides the per-channel input-domain bounds otherwise derived from the
    model's normalization stats.
    """

    gamma: float = 1.0
    epsilon: float = 1e-9
    enable_C: bool = True
    enable_A: bool = True
    enable_U: bool = True
    enable_Psi: bool = True
    zbeta_bounds: tuple[tuple[float, float], ...] | None = None
    target_layer: int | None = None

    def __post_init__(self):
        if not (1.0 <= self.gamma <= 2.0):
            raise ValidationError(f"gamma must lie in [1, 2], got {self.gamma}")
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.zbeta_bounds is not None:
            for c, (low, high) in enumerate(self.zbeta_bounds):
                if not (low < high):
                    raise ValidationError(
                        f"input bounds for channel {c}: low {low} must be < high {high}"
                    )

    def toggles(self) -> dict[str, bool]:
        return {
            "C": self.enable_C,
            "A": self.enable_A,
            "U": self.enable_U,
            "Psi": self.enable_Psi,
        }

    def resolve_bounds(self, model: ModelGraph) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel (low, high) arrays of the normalized image domain."""
        if self.zbeta_bounds is not None:
            low = np.array([b[0] for b in self.zbeta_bounds], dtype=np.float64)
            high = np.array([b[1] for b in self.zbeta_bounds], dtype=np.float64)
            return low, high
        mean = np.asarray(model.normalization_mean, dtype=np.float64)
        std = np.asarray(model.normalization_std, dtype=np.float64)
        return (0.0 - mean) / std, (1.0 - mean) / std


@dataclass(frozen=True)
class AttributionResult:
    """Input-level attribution with its provenance."""

    method: str
    target: int
    full: np.ndarray
    map2d: np.ndarray
    logits: np.ndarray
    predicted: int
    model_digest: str
    input_digest: str
    gamma: float | None = None
    epsilon: float | None = None
    toggles: dict | None = None
    alpha: float | None = None
    beta: float | None = None


def input_digest(x: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.int64(x.shape).tobytes())
    h.update(np.ascontiguousarray(x, dtype=np.float32).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# forward / gradients


def _as_batched_input(model: ModelGraph, x) -> np.ndarray:
    x = as_f32(x, "input")
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != tuple(model.input_shape[1:]):
        raise ValidationError(
            f"input shape {x.shape} does not match model input {model.input_shape}"
        )
    return x


def forward_with_trace(model: ModelGraph, x) -> ActivationTrace:
    """Forward pass recording every layer input and maxpool argmax."""
    x = _as_batched_input(model, x)
    inputs = [x]
    pool_indices: dict[int, PoolArgmax] = {}
    for k, layer in enumerate(model.layers):
        x, aux = forward_layer_aux(layer, x)
        if aux is not None:
            pool_indices[k] = aux
        inputs.append(x)
    return ActivationTrace(inputs=tuple(inputs), pool_indices=pool_indices)


def target_gradients(
    model: ModelGraph,
    trace: ActivationTrace,
    target: int,
    seed: float = 1.0,
    stop_at: int | None = None,
) -> dict[int, np.ndarray]:
    """Chain-rule gradients of the target logit.

    Returns {k: d(seed * y_target)/d inputs[k]} for k from the logits down
    to ``stop_at`` (default: the first classification-stage layer, i.e. the
    gradient with respect to the target activation).
    """
    n_layers = len(model.layers)
    if stop_at is None:
        stop_at = model.classification_start
    if not (0 <= stop_at <= n_layers):
        raise ValidationError(f"stop_at {stop_at} outside 0..{n_layers}")
    logits = trace.logits
    if not (0 <= target < logits.shape[1]):
        raise ValidationError(f"class index {target} outside 0..{logits.shape[1] - 1}")
    g = np.zeros_like(logits)
    g[:, target] = seed
    grads = {n_layers: g}
    for k in range(n_layers - 1, stop_at - 1, -1):
        g = backward_gradient(
            model.layers[k], trace.inputs[k], g, pool_indices=trace.pool_indices.get(k)
        )
        grads[k] = g
    return grads


# ---------------------------------------------------------------------------
# hedging pass


def initial_contribution_map(
    trace: ActivationTrace, gradients: dict[int, np.ndarray], target_layer: int
) -> RelevanceMap:
    """Contribution map at the target activation: the activation weighted by
    its channel-averaged gradient, normalized so the total magnitude is 1."""
    at = target_layer + 1
    if at not in gradients:
        raise ValidationError(f"no gradient recorded at layer {at}; rerun target_gradients")
    x = trace.inputs[at].astype(np.float64)
    grad = gradients[at].astype(np.float64)
    if x.ndim == 4:
        channel_weight = grad.mean(axis=(2, 3), keepdims=True)
    else:
        channel_weight = grad
    raw = x * channel_weight
    total = float(raw.sum())
    if total == 0.0:
        raise DegenerateMapError(
            "initial contribution map sums to zero; target class has no signal here"
        )
    g = raw / abs(total)
    g = check_finite(np.ascontiguousarray(g, dtype=np.float32), "initial contribution map")
    return RelevanceMap(tensor=g, layer=at, tau=1.0)


def modulate_sections(
    r: RelevanceMap, gamma: float, tau: float | None = None
) -> tuple[SectionPair, RelevanceMap]:
    """Split a map into sections rescaled to sum tau and -tau.

    Returns the sections and the recombined map gamma*P' + N', whose total
    is (gamma-1)*tau. A map with no negative part keeps N' = 0 under a
    logged warning; a map with no positive part cannot be modulated.
    """
    if tau is None:
        tau = r.tau
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    if not (1.0 <= gamma <= 2.0):
        raise ValidationError(f"gamma must lie in [1, 2], got {gamma}")
    t = r.tensor.astype(np.float64)
    pos = np.maximum(t, 0.0)
    neg = np.minimum(t, 0.0)
    pos_sum = pos.sum()
    neg_sum = neg.sum()
    if pos_sum == 0.0:
        raise SectionDegenerateError("relevance map has no positive section to modulate")
    pos *= tau / pos_sum
    if neg_sum == 0.0:
        logger.warning(
            "layer %s: relevance map has no negative section; "
            "negative hedge components are zero here",
            r.layer,
        )
    else:
        neg *= -tau / neg_sum
    sections = SectionPair(
        positive=pos.astype(np.float32), negative=neg.astype(np.float32)
    )
    combined = (gamma * pos + neg).astype(np.float32)
    return sections, RelevanceMap(tensor=combined, layer=r.layer, tau=tau)


def is_pointwise_conv(layer: LayerSpec) -> bool:
    return (
        layer.kind == "conv2d"
        and layer.weights.shape[2] == 1
        and layer.weights.shape[3] == 1
    )


def hedge_layer(
    layer: LayerSpec,
    x,
    sections: SectionPair,
    gamma: float,
    tau: float,
    config: HedgeConfig,
    layer_index: int | None = None,
) -> RelevanceMap:
    """Push modulated sections through one mixing layer.

    With all components enabled the result sums to (gamma-2)*tau; pointwise
    1x1 convolutions use gamma = 1 without the uniform shift and sum to 0.
    """
    if layer.kind not in REDISTRIBUTABLE_KINDS:
        raise ValidationError(f"{layer.label}: hedging applies only to mixing layers")
    x = as_f32(x, f"{layer.label} input")
    eps = config.epsilon
    pointwise = is_pointwise_conv(layer)
    g = 1.0 if pointwise else gamma
    pos, neg = sections.positive, sections.negative
    out = np.zeros(x.shape, dtype=np.float64)
    if config.enable_C:
        combined = (g * pos.astype(np.float64) + neg.astype(np.float64)).astype(np.float32)
        out += redistribute_relevance(layer, x, WeightTransform.ABSOLUTE, combined, eps)
    alpha = (x > 0).astype(np.float32)
    beta = (x <= 0).astype(np.float32)
    if config.enable_A:
        out += redistribute_to_mask(layer, alpha, WeightTransform.ABSOLUTE, pos, eps)
    if config.enable_U:
        out += redistribute_to_mask(layer, beta, WeightTransform.ABSOLUTE, neg, eps)
    if config.enable_Psi and not pointwise:
        activated = float(alpha.sum(dtype=np.float64))
        if activated == 0.0:
            raise DeadLayerError(
                f"{layer.label}: no activated neurons; uniform shift undefined"
            )
        out -= (tau / activated) * alpha
    out = check_finite(out.astype(np.float32), f"{layer.label} hedged relevance")
    return RelevanceMap(tensor=out, layer=layer_index, tau=tau)


def zbeta_input_rule(
    layer: LayerSpec,
    x,
    r: RelevanceMap,
    bounds: tuple[np.ndarray, np.ndarray],
    epsilon: float = 1e-9,
) -> RelevanceMap:
    """Map relevance onto the network input, clipping contributions to the
    valid input domain [low, high] per channel."""
    if layer.kind not in ("conv2d", "linear"):
        raise ValidationError(
            f"{layer.label}: input rule needs a conv2d or linear first layer"
        )
    x = as_f32(x, f"{layer.label} input").astype(np.float64)
    r_out = as_f32(r.tensor, "relevance").astype(np.float64)
    low, high = (np.asarray(b, dtype=np.float64).reshape(-1) for b in bounds)
    if np.any(low >= high):
        raise ValidationError("input bounds must satisfy low < high per channel")
    w = np.asarray(layer.weights, dtype=np.float64)
    w_pos = np.maximum(w, 0.0)
    w_neg = np.minimum(w, 0.0)
    if layer.kind == "conv2d":
        if low.size != x.shape[1]:
            raise ValidationError(
                f"bounds have {low.size} channels, input has {x.shape[1]}"
            )
        l_t = np.broadcast_to(low[None, :, None, None], x.shape)
        h_t = np.broadcast_to(high[None, :, None, None], x.shape)
        z = (
            _conv_forward(x, w, None, layer.stride, layer.padding)
            - _conv_forward(l_t, w_pos, None, layer.stride, layer.padding)
            - _conv_forward(h_t, w_neg, None, layer.stride, layer.padding)
        )
        s = r_out / stabilized(z, epsilon)
        out = (
            x * _conv_backward_input(s, w, x.shape, layer.stride, layer.padding)
            - l_t * _conv_backward_input(s, w_pos, x.shape, layer.stride, layer.padding)
            - h_t * _conv_backward_input(s, w_neg, x.shape, layer.stride, layer.padding)
        )
    else:
        if low.size != x.shape[1]:
            raise ValidationError(
                f"bounds have {low.size} features, input has {x.shape[1]}"
            )
        l_t = np.broadcast_to(low[None, :], x.shape)
        h_t = np.broadcast_to(high[None, :], x.shape)
        z = x @ w.T - l_t @ w_pos.T - h_t @ w_neg.T
        s = r_out / stabilized(z, epsilon)
        out = x * (s @ w) - l_t * (s @ w_pos) - h_t * (s @ w_neg)
    out = check_finite(out.astype(np.float32), f"{layer.label} input relevance")
    return RelevanceMap(tensor=out, layer=0, tau=r.tau)


def _wrap_layer_context(k: int, layer: LayerSpec, exc: Exception):
    msg = f"layer {k} ({layer.label}): {exc}"
    try:
        return type(exc)(msg)
    except TypeError:
        return ValidationError(msg)


def attribute(
    model: ModelGraph,
    x,
    target: int,
    config: HedgeConfig | None = None,
    *,
    seed_scale: float = 1.0,
) -> AttributionResult:
    """Full hedging attribution of one input for one class.

    seed_scale multiplies the one-hot gradient seed; the result is invariant
    to it because the initial map is renormalized (kept as a documented
    diagnostic hook).
    """
    config = config or HedgeConfig()
    x = _as_batched_input(model, x)
    if x.shape[0] != 1:
        raise ValidationError(f"attribution runs one image at a time, got batch {x.shape[0]}")
    t_layer = config.target_layer if config.target_layer is not None else model.target_layer
    if not (0 <= t_layer < len(model.layers)):
        raise ValidationError(f"target layer {t_layer} outside 0..{len(model.layers) - 1}")
    trace = forward_with_trace(model, x)
    grads = target_gradients(model, trace, target, seed=seed_scale, stop_at=t_layer + 1)
    r = initial_contribution_map(trace, grads, t_layer)
    tau = r.tau
    for k in range(t_layer, 0, -1):
        layer = model.layers[k]
        xk = trace.inputs[k]
        try:
            if layer.kind in REDISTRIBUTABLE_KINDS:
                sections, _ = modulate_sections(r, config.gamma, tau)
                r = hedge_layer(layer, xk, sections, config.gamma, tau, config, layer_index=k)
            else:
                tensor = redistribute_relevance(
                    layer,
                    xk,
                    WeightTransform.IDENTITY,
                    r.tensor,
                    config.epsilon,
                    pool_indices=trace.pool_indices.get(k),
                )
                r = RelevanceMap(tensor=tensor, layer=k, tau=tau)
        except (ValidationError, NumericError) as exc:
            raise _wrap_layer_context(k, layer, exc) from exc
    try:
        r = zbeta_input_rule(
            model.layers[0], trace.inputs[0], r, config.resolve_bounds(model), config.epsilon
        )
    except (ValidationError, NumericError) as exc:
        raise _wrap_layer_context(0, model.layers[0], exc) from exc
    full = r.tensor[0]
    logits = trace.logits[0].copy()
    return AttributionResult(
        method="hedge",
        target=int(target),
        full=full,
        map2d=full.sum(axis=0),
        logits=logits,
        predicted=int(np.argmax(logits)),
        model_digest=model_weights_digest(model),
        input_digest=input_digest(x),
        gamma=config.gamma,
        epsilon=config.epsilon,
        toggles=config.toggles(),
    )


# ---------------------------------------------------------------------------
# baselines


def baseline_relevance_chain(
    model: ModelGraph,
    trace: ActivationTrace,
    target: int,
    method: str = "generic_lrp",
    alpha: float | None = None,
    beta: float | None = None,
    seed: float | None = None,
    epsilon: float = 1e-9,
) -> list[RelevanceMap]:
    """Layerwise relevance chain from the logits down to the input.

    generic_lrp applies the proportional rule everywhere. lrp_alpha_beta
    splits conv/linear weights by sign into an alpha-weighted positive and
    beta-weighted negative route (alpha - beta = 1 keeps conservation);
    weightless layers fall back to the generic path, whose fixed
    nonnegative weights have no negative route.
    """
    if method == "lrp_alpha_beta":
        if alpha is None or beta is None:
            raise ValidationError("lrp_alpha_beta needs alpha and beta")
        if abs((alpha - beta) - 1.0) > 1e-9:
            raise ValidationError(f"alpha - beta must equal 1, got {alpha} - {beta}")
    elif method != "generic_lrp":
        raise ValidationError(f"unknown chain method {method!r}")
    logits = trace.logits
    if not (0 <= target < logits.shape[1]):
        raise ValidationError(f"class index {target} outside 0..{logits.shape[1] - 1}")
    if seed is None:
        seed = float(logits[0, target])
    r = np.zeros_like(logits)
    r[:, target] = seed
    chain = [RelevanceMap(tensor=r, layer=len(model.layers), tau=abs(seed))]
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        xk = trace.inputs[k]
        try:
            if method == "lrp_alpha_beta" and layer.kind in ("conv2d", "linear"):
                r_pos = redistribute_relevance(layer, xk, WeightTransform.POSITIVE, r, epsilon)
                r_neg = redistribute_relevance(layer, xk, WeightTransform.NEGATIVE, r, epsilon)
                r = (alpha * r_pos - beta * r_neg).astype(np.float32)
            else:
                r = redistribute_relevance(
                    layer,
                    xk,
                    WeightTransform.IDENTITY,
                    r,
                    epsilon,
                    pool_indices=trace.pool_indices.get(k),
                )
        except (ValidationError, NumericError) as exc:
            raise _wrap_layer_context(k, layer, exc) from exc
        chain.append(RelevanceMap(tensor=r, layer=k, tau=abs(seed)))
    return chain


def _upsample_bilinear(map2d: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    from scipy.ndimage import zoom

    h, w = map2d.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return map2d.astype(np.float32)
    out = zoom(map2d.astype(np.float64), (oh / h, ow / w), order=1, grid_mode=True, mode="nearest")
    return out.astype(np.float32)


def attribute_baseline(
    model: ModelGraph,
    x,
    target: int,
    method: str,
    alpha: float | None = None,
    beta: float | None = None,
    seed: float | None = None,
    epsilon: float = 1e-9,
) -> AttributionResult:
    """Comparison attributions: proportional LRP, its signed-route variant,
    and the upsampled gradient-times-activation map."""
    if method not in BASELINE_METHODS:
        raise ValidationError(
            f"unknown baseline {method!r}; expected one of {', '.join(BASELINE_METHODS)}"
        )
    x = _as_batched_input(model, x)
    if x.shape[0] != 1:
        raise ValidationError(f"attribution runs one image at a time, got batch {x.shape[0]}")
    trace = forward_with_trace(model, x)
    logits = trace.logits[0].copy()
    if method == "grad_activation":
        grads = target_gradients(model, trace, target)
        g = initial_contribution_map(trace, grads, model.target_layer)
        coarse = g.tensor[0].sum(axis=0)
        map2d = _upsample_bilinear(coarse, model.input_shape[2:])
        full = map2d[None]
    else:
        chain = baseline_relevance_chain(
            model, trace, target, method=method, alpha=alpha, beta=beta, seed=seed, epsilon=epsilon
        )
        full = chain[-1].tensor[0]
        map2d = full.sum(axis=0)
    return AttributionResult(
        method=method,
        target=int(target),
        full=full,
        map2d=map2d,
        logits=logits,
        predicted=int(np.argmax(logits)),
        model_digest=model_weights_digest(model),
        input_digest=input_digest(x),
        epsilon=epsilon,
        alpha=alpha,
        beta=beta,
    )


# ---------------------------------------------------------------------------
# artifacts


def save_attribution(result: AttributionResult, path) -> str:
    """Write the full map as a tensor file plus a JSON provenance sidecar."""
    from . import ght
    import os

    path = os.fspath(path)
    ght.save(path, result.full)
    sidecar = {
        "method": result.method,
        "target": result.target,
        "predicted_class": result.predicted,
        "logits": [float(v) for v in result.logits],
        "gamma": result.gamma,
        "epsilon": result.epsilon,
        "toggles": result.toggles,
        "alpha": result.alpha,
        "beta": result.beta,
        "model_hash": result.model_digest,
        "input_hash": result.input_digest,
    }
    sidecar_path = os.path.splitext(path)[0] + ".json"
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar_path
