"""Toy CNN trainer: plain SGD with softmax cross-entropy.

Two architecture presets at desk scale. The trainer consumes single-object
samples, holds out 20% for validation, and retries with fresh seeds until
the held-out accuracy target is met. Training is bit-deterministic per seed.
"""

from __future__ import annotations

import numpy as np

from hedgegrad.errors import TrainingError, ValidationError
from hedgegrad.layers import (
    LayerSpec,
    backward_gradient,
    backward_weight_gradient,
    forward_layer_aux,
)
from hedgegrad.model import ModelGraph, default_target_layer

PRESETS = ("tiny-cnn", "micro-cnn")


def _he_conv(rng, out_ch, in_ch, k):
    fan_in = in_ch * k * k
    w = rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(2.0 / fan_in)
    return w.astype(np.float32)


def _he_linear(rng, out_f, in_f):
    w = rng.standard_normal((out_f, in_f)) * np.sqrt(2.0 / in_f)
    return w.astype(np.float32)


def build_preset(preset, in_channels, classes, rng):
    """Instantiate a preset's layers with He-initialized weights."""
    if preset == "tiny-cnn":
        widths = (12, 24, 48)
    elif preset == "micro-cnn":
        widths = (12, 24)
    else:
        raise ValidationError(f"unknown preset '{preset}' (choose from {PRESETS})")
    layers = []
    prev = in_channels
    for i, width in enumerate(widths):
        layers.append(
            LayerSpec(
                "conv2d",
                weights=_he_conv(rng, width, prev, 3),
                bias=np.zeros(width, dtype=np.float32),
                padding=1,
            )
        )
        layers.append(LayerSpec("relu"))
        # The last block feeds the global pool directly.
        if i < len(widths) - 1:
            layers.append(LayerSpec("maxpool2d", kernel_size=2, stride=2))
        prev = width
    layers.append(LayerSpec("globalavgpool"))
    layers.append(LayerSpec("flatten"))
    layers.append(
        LayerSpec(
            "linear",
            weights=_he_linear(rng, classes, prev),
            bias=np.zeros(classes, dtype=np.float32),
        )
    )
    return tuple(layers)


def _softmax_cross_entropy(logits, labels):
    """Mean loss over the batch and the gradient with respect to logits."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(np.float32)


def _forward_training(layers, x):
    inputs = [x]
    pool_indices = {}
    for k, layer in enumerate(layers):
        y, aux = forward_layer_aux(layer, inputs[-1])
        if aux is not None:
            pool_indices[k] = aux
        inputs.append(y)
    return inputs, pool_indices


def _sgd_step(layers, x, labels, lr):
    inputs, pool_indices = _forward_training(layers, x)
    loss, grad = _softmax_cross_entropy(inputs[-1], labels)
    updated = list(layers)
    for k in range(len(layers) - 1, -1, -1):
        layer = layers[k]
        if layer.has_weights:
            gw, gb = backward_weight_gradient(layer, inputs[k], grad)
            updated[k] = LayerSpec(
                layer.kind,
                weights=layer.weights - lr * gw,
                bias=None if layer.bias is None else layer.bias - lr * gb,
                kernel_size=layer.kernel_size,
                stride=layer.stride,
                padding=layer.padding,
                name=layer.name,
            )
        grad = backward_gradient(layer, inputs[k], grad, pool_indices.get(k))
    return tuple(updated), loss


def _batch_accuracy(layers, x, labels, batch_size=64):
    hits = 0
    for start in range(0, x.shape[0], batch_size):
        chunk = x[start:start + batch_size]
        y = chunk
        for layer in layers:
            y = forward_layer_aux(layer, y)[0]
        hits += int((np.argmax(y, axis=1) == labels[start:start + batch_size]).sum())
    return hits / x.shape[0]


def _dataset_arrays(dataset):
    singles = [s for s in dataset if len(s.labels) == 1]
    if not singles:
        raise ValidationError("training needs at least one single-object sample")
    x = np.stack([s.image for s in singles]).astype(np.float32)
    y = np.asarray([s.labels[0] for s in singles], dtype=np.int64)
    return x, y


def _train_once(x, y, preset, classes, epochs, lr, seed, batch_size):
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    order = rng.permutation(n)
    split = max(1, int(round(n * 0.8)))
    train_idx, val_idx = order[:split], order[split:]
    if val_idx.size == 0:
        val_idx = train_idx[-1:]

    mean = x[train_idx].mean(axis=(0, 2, 3), dtype=np.float64)
    std = np.maximum(x[train_idx].std(axis=(0, 2, 3), dtype=np.float64), 1e-3)
    xn = ((x - mean[:, None, None]) / std[:, None, None]).astype(np.float32)

    layers = build_preset(preset, x.shape[1], classes, rng)
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(train_idx.size)
        epoch_losses = []
        for start in range(0, train_idx.size, batch_size):
            batch = train_idx[perm[start:start + batch_size]]
            layers, loss = _sgd_step(layers, xn[batch], y[batch], lr)
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
    accuracy = _batch_accuracy(layers, xn[val_idx], y[val_idx])
    return layers, mean, std, losses, accuracy


def train_toy_model(dataset, preset="tiny-cnn", epochs=30, lr=0.1, seed=0,
                    batch_size=32, accuracy_target=0.9, retries=3,
                    class_names=None):
    """Train a preset CNN until held-out accuracy reaches the target.

    Retries with seed+1, seed+2 on a miss; raises TrainingError with the
    full loss history if every attempt falls short.
    """
    if epochs <= 0 or batch_size <= 0:
        raise ValidationError("epochs and batch size must be positive")
    if lr < 0:
        raise ValidationError("learning rate must be nonnegative")
    x, y = _dataset_arrays(dataset)
    classes = int(y.max()) + 1 if class_names is None else len(class_names)
    history = []
    for attempt in range(max(1, retries)):
        attempt_seed = seed + attempt
        layers, mean, std, losses, accuracy = _train_once(
            x, y, preset, classes, epochs, lr, attempt_seed, batch_size
        )
        history.append(
            {"seed": attempt_seed, "losses": losses, "val_accuracy": accuracy}
        )
        if accuracy >= accuracy_target:
            return ModelGraph(
                layers=layers,
                input_shape=(1, x.shape[1]) + x.shape[2:],
                normalization_mean=tuple(float(v) for v in mean),
                normalization_std=tuple(float(v) for v in std),
                target_layer=default_target_layer(layers),
                class_names=None if class_names is None else tuple(class_names),
            )
    best = max(h["val_accuracy"] for h in history)
    raise TrainingError(
        f"held-out accuracy {best:.3f} below target {accuracy_target:.2f} "
        f"after {len(history)} attempts",
        history=history,
    )


def model_accuracy(model, samples, batch_size=64):
    """Top-1 accuracy on single-object samples, first label as truth."""
    from hedgegrad.model import forward_model, normalize_input

    singles = [s for s in samples if len(s.labels) == 1]
    if not singles:
        raise ValidationError("accuracy needs at least one single-object sample")
    x = np.stack([s.image for s in singles]).astype(np.float32)
    y = np.asarray([s.labels[0] for s in singles])
    hits = 0
    for start in range(0, x.shape[0], batch_size):
        logits = forward_model(model, normalize_input(model, x[start:start + batch_size]))
        hits += int((np.argmax(logits, axis=1) == y[start:start + batch_size]).sum())
    return hits / x.shape[0]
