"""Toy trainer: presets, SGD determinism, retry contract."""

import numpy as np
import pytest

from hedgegrad.data import SHAPE_CLASSES, generate_synthetic_dataset
from hedgegrad.errors import TrainingError, ValidationError
from hedgegrad.model import model_weights_digest
from hedgegrad.train import (
    PRESETS,
    _dataset_arrays,
    _softmax_cross_entropy,
    _train_once,
    build_preset,
    model_accuracy,
    train_toy_model,
)


@pytest.fixture(scope="module")
def small_dataset():
    return generate_synthetic_dataset(120, seed=11, objects="single")


def test_preset_shapes():
    rng = np.random.default_rng(0)
    tiny = build_preset("tiny-cnn", 3, 4, rng)
    assert [l.kind for l in tiny] == [
        "conv2d", "relu", "maxpool2d",
        "conv2d", "relu", "maxpool2d",
        "conv2d", "relu",
        "globalavgpool", "flatten", "linear",
    ]
    micro = build_preset("micro-cnn", 3, 4, rng)
    assert [l.kind for l in micro].count("conv2d") == 2
    assert micro[-1].weights.shape[0] == 4
    with pytest.raises(ValidationError, match="preset"):
        build_preset("mega-cnn", 3, 4, rng)


def test_softmax_cross_entropy_gradient():
    logits = np.array([[2.0, 0.5, -1.0]], dtype=np.float32)
    labels = np.array([0])
    loss, grad = _softmax_cross_entropy(logits, labels)
    z = np.exp(logits[0] - logits[0].max())
    probs = z / z.sum()
    assert abs(loss + np.log(probs[0])) < 1e-6
    want = probs.copy()
    want[0] -= 1.0
    np.testing.assert_allclose(grad[0], want, atol=1e-6)


def test_training_reaches_target(small_dataset):
    model = train_toy_model(small_dataset, epochs=12, lr=0.1, seed=0)
    assert model_accuracy(model, small_dataset) >= 0.9


def test_training_is_bit_deterministic(small_dataset):
    a = train_toy_model(small_dataset, epochs=2, lr=0.1, seed=3, accuracy_target=0.0)
    b = train_toy_model(small_dataset, epochs=2, lr=0.1, seed=3, accuracy_target=0.0)
    assert model_weights_digest(a) == model_weights_digest(b)
    c = train_toy_model(small_dataset, epochs=2, lr=0.1, seed=4, accuracy_target=0.0)
    assert model_weights_digest(a) != model_weights_digest(c)


def test_zero_learning_rate_leaves_weights_at_init(small_dataset):
    one = train_toy_model(small_dataset, epochs=1, lr=0.0, seed=5, accuracy_target=0.0)
    four = train_toy_model(small_dataset, epochs=4, lr=0.0, seed=5, accuracy_target=0.0)
    assert model_weights_digest(one) == model_weights_digest(four)


def test_loss_does_not_increase_early(small_dataset):
    x, y = _dataset_arrays(small_dataset)
    _, _, _, losses, _ = _train_once(
        x, y, "tiny-cnn", 4, epochs=3, lr=0.1, seed=0, batch_size=32
    )
    assert losses[1] <= losses[0]
    assert losses[2] <= losses[1]


def test_retry_failure_carries_history(small_dataset):
    with pytest.raises(TrainingError) as err:
        train_toy_model(
            small_dataset, epochs=1, lr=0.0, seed=0, retries=2, accuracy_target=1.01
        )
    assert "2 attempts" in str(err.value)
    assert len(err.value.history) == 2
    assert all(len(h["losses"]) == 1 for h in err.value.history)
    assert err.value.exit_code == 4


def test_trainer_filters_multi_object_samples():
    mixed = generate_synthetic_dataset(40, seed=12, objects="mixed")
    x, y = _dataset_arrays(mixed)
    assert x.shape[0] == 20
    doubles = generate_synthetic_dataset(4, seed=13, objects="double")
    with pytest.raises(ValidationError, match="single-object"):
        _dataset_arrays(doubles)


def test_class_names_recorded(small_dataset):
    model = train_toy_model(
        small_dataset, epochs=1, lr=0.1, seed=0, accuracy_target=0.0,
        class_names=SHAPE_CLASSES,
    )
    assert model.class_names == SHAPE_CLASSES
    assert model.class_count == 4


def test_bad_hyperparameters_rejected(small_dataset):
    with pytest.raises(ValidationError):
        train_toy_model(small_dataset, epochs=0)
    with pytest.raises(ValidationError):
        train_toy_model(small_dataset, lr=-0.1)


def test_session_model_generalizes(toy_model, eval_dataset):
    assert model_accuracy(toy_model, eval_dataset) >= 0.9
    assert toy_model.target_layer == 7
    assert "micro" not in PRESETS[0]
