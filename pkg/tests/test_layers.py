"""Layer kernels against naive oracles: forwards, gradients, redistribution."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hedgegrad.errors import (
    MaskValueError,
    NonFiniteError,
    PoolIndicesError,
    ShapeError,
    ValidationError,
)
from hedgegrad.layers import (
    LayerSpec,
    WeightTransform,
    backward_gradient,
    backward_weight_gradient,
    forward_layer,
    forward_layer_aux,
    redistribute_relevance,
    redistribute_to_mask,
)
from oracles import (
    conv_unrolled_matrix,
    dense_redistribute,
    finite_difference_gradient,
    naive_conv2d,
)

EPS = 1e-9


def rand_conv(rng, outc=2, inc=2, k=3, stride=1, padding=0, bias=True):
    w = rng.standard_normal((outc, inc, k, k)).astype(np.float32)
    b = rng.standard_normal(outc).astype(np.float32) if bias else None
    return LayerSpec("conv2d", weights=w, bias=b, stride=stride, padding=padding)


def rand_linear(rng, outf=3, inf=4, bias=True):
    w = rng.standard_normal((outf, inf)).astype(np.float32)
    b = rng.standard_normal(outf).astype(np.float32) if bias else None
    return LayerSpec("linear", weights=w, bias=b)


def margin_input(rng, shape):
    """Random input whose entries all sit well clear of zero and of each
    other, so relu gates and maxpool winners survive finite differencing."""
    flat = rng.permutation(int(np.prod(shape))).astype(np.float64)
    flat = (flat - flat.mean()) / max(flat.std(), 1.0)
    flat += 0.2 * np.where(flat < 0, -1.0, 1.0)
    return flat.reshape(shape).astype(np.float32)


# ---------------------------------------------------------------------------
# construction and validation


def test_layerspec_rejects_unknown_kind():
    with pytest.raises(ValidationError, match="unknown layer kind"):
        LayerSpec("softmax")


def test_layerspec_rejects_bad_geometry():
    with pytest.raises(ValidationError):
        LayerSpec("relu", stride=0)
    with pytest.raises(ValidationError):
        LayerSpec("relu", padding=-1)
    with pytest.raises(ValidationError):
        LayerSpec("maxpool2d", kernel_size=0)
    with pytest.raises(ValidationError):
        LayerSpec("maxpool2d", kernel_size=2, padding=2)


def test_layerspec_rejects_bad_weights():
    with pytest.raises(ValidationError):
        LayerSpec("conv2d", weights=np.ones((2, 3), dtype=np.float32))
    with pytest.raises(ValidationError):
        LayerSpec("linear", weights=np.ones((2, 3, 4), dtype=np.float32))
    with pytest.raises(ValidationError):
        LayerSpec(
            "linear",
            weights=np.ones((2, 3), dtype=np.float32),
            bias=np.ones(3, dtype=np.float32),
        )
    with pytest.raises(ValidationError):
        LayerSpec("relu", weights=np.ones((2, 2), dtype=np.float32))
    with pytest.raises(NonFiniteError):
        LayerSpec("conv2d", weights=np.full((1, 1, 2, 2), np.nan, dtype=np.float32))


def test_layerspec_weights_are_frozen():
    layer = rand_linear(np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer.weights[0, 0] = 7.0


def test_output_shape_names_offending_layer():
    layer = LayerSpec("conv2d", weights=np.ones((2, 3, 3, 3), dtype=np.float32), name="c1")
    with pytest.raises(ShapeError, match="'c1'"):
        layer.output_shape((1, 4, 8, 8))


# ---------------------------------------------------------------------------
# forward


def test_relu_forward_clamps_negatives():
    layer = LayerSpec("relu")
    y = forward_layer(layer, np.array([[-1.0, 2.0, 0.0]], dtype=np.float32))
    np.testing.assert_array_equal(y, [[0.0, 2.0, 0.0]])


def test_identity_one_by_one_conv():
    layer = LayerSpec("conv2d", weights=np.ones((1, 1, 1, 1), dtype=np.float32))
    x = np.ones((1, 1, 2, 2), dtype=np.float32)
    np.testing.assert_array_equal(forward_layer(layer, x), x)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_conv_forward_matches_loop_oracle(stride, padding):
    rng = np.random.default_rng(7)
    layer = rand_conv(rng, outc=3, inc=2, k=3, stride=stride, padding=padding)
    x = rng.standard_normal((2, 2, 6, 7)).astype(np.float32)
    got = forward_layer(layer, x)
    want = naive_conv2d(x, layer.weights, layer.bias, stride, padding)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, atol=1e-5)


def test_linear_forward():
    layer = LayerSpec(
        "linear",
        weights=np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32),
        bias=np.array([0.5, -0.5], dtype=np.float32),
    )
    y = forward_layer(layer, np.array([[1.0, 1.0]], dtype=np.float32))
    np.testing.assert_allclose(y, [[3.5, 6.5]])


def test_maxpool_forward_and_argmax():
    x = np.array(
        [[[[1.0, 5.0, 2.0, 0.0], [3.0, 4.0, 1.0, 7.0], [0.0, 2.0, 9.0, 1.0], [6.0, 0.0, 3.0, 2.0]]]],
        dtype=np.float32,
    )
    layer = LayerSpec("maxpool2d", kernel_size=2, stride=2)
    y, aux = forward_layer_aux(layer, x)
    np.testing.assert_array_equal(y[0, 0], [[5.0, 7.0], [6.0, 9.0]])
    assert aux.rows[0, 0, 0, 0] == 0 and aux.cols[0, 0, 0, 0] == 1
    assert aux.rows[0, 0, 1, 1] == 2 and aux.cols[0, 0, 1, 1] == 2


def test_maxpool_tie_breaks_to_first_position():
    x = np.full((1, 1, 2, 2), 3.0, dtype=np.float32)
    layer = LayerSpec("maxpool2d", kernel_size=2, stride=2)
    _, aux = forward_layer_aux(layer, x)
    assert aux.rows[0, 0, 0, 0] == 0 and aux.cols[0, 0, 0, 0] == 0


def test_avgpool_and_globalavgpool_forward():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    y = forward_layer(LayerSpec("avgpool2d", kernel_size=2, stride=2), x)
    np.testing.assert_allclose(y[:, :, 0, 0], x[:, :, :2, :2].mean(axis=(2, 3)), rtol=1e-6)
    g = forward_layer(LayerSpec("globalavgpool"), x)
    assert g.shape == (2, 3, 1, 1)
    np.testing.assert_allclose(g[..., 0, 0], x.mean(axis=(2, 3)), rtol=1e-6)


def test_flatten_forward_row_major():
    x = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
    y = forward_layer(LayerSpec("flatten"), x)
    np.testing.assert_array_equal(y, x.reshape(1, 24))


def test_forward_rejects_channel_mismatch():
    layer = rand_conv(np.random.default_rng(0), inc=3)
    with pytest.raises(ShapeError, match="channels"):
        forward_layer(layer, np.ones((1, 2, 5, 5), dtype=np.float32))


def test_forward_rejects_non_finite_input():
    with pytest.raises(NonFiniteError):
        forward_layer(LayerSpec("relu"), np.array([[np.nan]], dtype=np.float32))


# ---------------------------------------------------------------------------
# input gradients


def test_relu_gradient_gates_by_sign():
    g = backward_gradient(
        LayerSpec("relu"),
        np.array([[-1.0, 2.0]], dtype=np.float32),
        np.array([[1.0, 1.0]], dtype=np.float32),
    )
    np.testing.assert_array_equal(g, [[0.0, 1.0]])


def test_linear_gradient_small_case():
    layer = LayerSpec("linear", weights=np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.float32))
    g = backward_gradient(
        layer,
        np.zeros((1, 2), dtype=np.float32),
        np.array([[1.0, 0.0]], dtype=np.float32),
    )
    np.testing.assert_array_equal(g, [[1.0, 1.0]])


def test_maxpool_gradient_requires_indices():
    layer = LayerSpec("maxpool2d", kernel_size=2, stride=2)
    x = np.ones((1, 1, 2, 2), dtype=np.float32)
    with pytest.raises(PoolIndicesError, match="forward"):
        backward_gradient(layer, x, np.ones((1, 1, 1, 1), dtype=np.float32))


def _layer_and_input(kind, rng):
    if kind == "conv2d":
        return rand_conv(rng, outc=2, inc=2, k=3, stride=1, padding=1), (1, 2, 4, 4)
    if kind == "conv2d_strided":
        return rand_conv(rng, outc=2, inc=1, k=2, stride=2, padding=0), (1, 1, 5, 5)
    if kind == "linear":
        return rand_linear(rng, outf=3, inf=5), (2, 5)
    if kind == "relu":
        return LayerSpec("relu"), (1, 2, 3, 3)
    if kind == "maxpool2d":
        return LayerSpec("maxpool2d", kernel_size=2, stride=2), (1, 2, 4, 4)
    if kind == "avgpool2d":
        return LayerSpec("avgpool2d", kernel_size=2, stride=1), (1, 2, 4, 4)
    if kind == "globalavgpool":
        return LayerSpec("globalavgpool"), (1, 2, 3, 3)
    return LayerSpec("flatten"), (2, 2, 3, 3)


GRAD_KINDS = (
    "conv2d",
    "conv2d_strided",
    "linear",
    "relu",
    "maxpool2d",
    "avgpool2d",
    "globalavgpool",
    "flatten",
)


@pytest.mark.parametrize("kind", GRAD_KINDS)
@pytest.mark.parametrize("seed", range(13))
def test_input_gradient_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(1000 + seed)
    layer, in_shape = _layer_and_input(kind, rng)
    x = margin_input(rng, in_shape)
    _, aux = forward_layer_aux(layer, x)
    g_out = rng.standard_normal(layer.output_shape(in_shape)).astype(np.float32)

    def scalar(xv):
        return float((forward_layer(layer, xv.astype(np.float32)) * g_out).sum())

    analytic = backward_gradient(layer, x, g_out, pool_indices=aux)
    numeric = finite_difference_gradient(scalar, x, h=1e-3)
    np.testing.assert_allclose(analytic, numeric, atol=1e-2)


@pytest.mark.parametrize("kind", ["conv2d", "linear"])
@pytest.mark.parametrize("seed", range(13))
def test_weight_gradient_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(2000 + seed)
    layer, in_shape = _layer_and_input(kind, rng)
    x = margin_input(rng, in_shape)
    g_out = rng.standard_normal(layer.output_shape(in_shape)).astype(np.float32)

    def scalar(wv):
        probe = LayerSpec(
            layer.kind,
            weights=wv.astype(np.float32),
            bias=layer.bias,
            stride=layer.stride,
            padding=layer.padding,
        )
        return float((forward_layer(probe, x) * g_out).sum())

    wg, bg = backward_weight_gradient(layer, x, g_out)
    numeric = finite_difference_gradient(scalar, np.asarray(layer.weights), h=1e-3)
    np.testing.assert_allclose(wg, numeric, atol=1e-2)
    if kind == "linear":
        np.testing.assert_allclose(bg, g_out.sum(axis=0), atol=1e-6)
    else:
        np.testing.assert_allclose(bg, g_out.sum(axis=(0, 2, 3)), atol=1e-5)


def test_weight_gradient_small_case():
    layer = LayerSpec("linear", weights=np.zeros((1, 2), dtype=np.float32))
    wg, bg = backward_weight_gradient(
        layer,
        np.array([[1.0, 2.0]], dtype=np.float32),
        np.array([[3.0]], dtype=np.float32),
    )
    np.testing.assert_array_equal(wg, [[3.0, 6.0]])
    assert bg is None


def test_weight_gradient_zero_grad_gives_zero():
    rng = np.random.default_rng(5)
    layer = rand_conv(rng)
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    wg, bg = backward_weight_gradient(layer, x, np.zeros((1, 2, 3, 3), dtype=np.float32))
    assert not wg.any() and not bg.any()


def test_weight_gradient_rejects_weightless_kind():
    with pytest.raises(ValidationError):
        backward_weight_gradient(
            LayerSpec("relu"),
            np.ones((1, 2), dtype=np.float32),
            np.ones((1, 2), dtype=np.float32),
        )


# ---------------------------------------------------------------------------
# relevance redistribution


def test_redistribute_single_path_conserves():
    layer = LayerSpec("linear", weights=np.array([[1.0]], dtype=np.float32))
    r = redistribute_relevance(
        layer,
        np.array([[2.0]], dtype=np.float32),
        WeightTransform.IDENTITY,
        np.array([[5.0]], dtype=np.float32),
    )
    np.testing.assert_allclose(r, [[5.0]], rtol=1e-6)


def test_redistribute_proportional_split():
    layer = LayerSpec("linear", weights=np.array([[1.0, 1.0]], dtype=np.float32))
    r = redistribute_relevance(
        layer,
        np.array([[1.0, 3.0]], dtype=np.float32),
        WeightTransform.IDENTITY,
        np.array([[4.0]], dtype=np.float32),
    )
    np.testing.assert_allclose(r, [[1.0, 3.0]], rtol=1e-5)


def test_negative_denominator_keeps_sign():
    layer = LayerSpec("linear", weights=np.array([[1.0]], dtype=np.float32))
    r = redistribute_relevance(
        layer,
        np.array([[-2.0]], dtype=np.float32),
        WeightTransform.IDENTITY,
        np.array([[5.0]], dtype=np.float32),
    )
    np.testing.assert_allclose(r, [[5.0]], rtol=1e-5)


def test_zero_denominator_stabilized_positive():
    # x*w sums to exactly zero; the +eps stabilizer keeps the result finite
    # and antisymmetric, though conservation necessarily breaks here.
    layer = LayerSpec("linear", weights=np.array([[1.0, 1.0]], dtype=np.float32))
    r = redistribute_relevance(
        layer,
        np.array([[1.0, -1.0]], dtype=np.float32),
        WeightTransform.IDENTITY,
        np.array([[5.0]], dtype=np.float32),
        epsilon=1e-9,
    )
    assert np.isfinite(r).all()
    assert r[0, 0] > 0 and r[0, 1] < 0
    np.testing.assert_allclose(r[0, 0], -r[0, 1], rtol=1e-6)
    np.testing.assert_allclose(r[0, 0], 5.0 / 1e-9, rtol=1e-5)


@pytest.mark.parametrize(
    "transform",
    [
        WeightTransform.IDENTITY,
        WeightTransform.ABSOLUTE,
        WeightTransform.POSITIVE,
        WeightTransform.NEGATIVE,
    ],
)
@pytest.mark.parametrize("seed", range(5))
def test_conv_redistribution_matches_dense_unroll(transform, seed):
    rng = np.random.default_rng(3000 + seed)
    layer = rand_conv(rng, outc=3, inc=2, k=3, stride=1, padding=1, bias=True)
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    r_out = rng.standard_normal((1, 3, 5, 5)).astype(np.float32)
    got = redistribute_relevance(layer, x, transform, r_out, epsilon=EPS)
    w_t = transform.apply(np.asarray(layer.weights, dtype=np.float64))
    mat = conv_unrolled_matrix(w_t, (2, 5, 5), stride=1, padding=1)
    want = dense_redistribute(mat, x.reshape(-1), r_out.reshape(-1), EPS)
    np.testing.assert_allclose(got.reshape(-1), want, atol=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_strided_conv_redistribution_matches_dense_unroll(seed):
    rng = np.random.default_rng(4000 + seed)
    layer = rand_conv(rng, outc=2, inc=4, k=3, stride=2, padding=1, bias=False)
    x = rng.standard_normal((2, 4, 6, 6)).astype(np.float32)
    out_shape = layer.output_shape(x.shape)
    r_out = rng.standard_normal(out_shape).astype(np.float32)
    got = redistribute_relevance(layer, x, WeightTransform.IDENTITY, r_out, epsilon=EPS)
    mat = conv_unrolled_matrix(np.asarray(layer.weights), (4, 6, 6), stride=2, padding=1)
    for b in range(2):
        want = dense_redistribute(mat, x[b].reshape(-1), r_out[b].reshape(-1), EPS)
        np.testing.assert_allclose(got[b].reshape(-1), want, atol=1e-5)


def test_avgpool_redistribution_equals_uniform_conv():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    r_out = rng.standard_normal((1, 1, 2, 2)).astype(np.float32)
    pool = LayerSpec("avgpool2d", kernel_size=2, stride=2)
    conv = LayerSpec("conv2d", weights=np.full((1, 1, 2, 2), 0.25, dtype=np.float32), stride=2)
    got = redistribute_relevance(pool, x, WeightTransform.IDENTITY, r_out, epsilon=EPS)
    want = redistribute_relevance(conv, x, WeightTransform.IDENTITY, r_out, epsilon=EPS)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_globalavgpool_redistribution_is_proportional():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
    layer = LayerSpec("globalavgpool")
    r = redistribute_relevance(
        layer, x, WeightTransform.IDENTITY, np.array([[[[10.0]]]], dtype=np.float32)
    )
    np.testing.assert_allclose(r[0, 0], [[1.0, 2.0], [3.0, 4.0]], rtol=1e-5)


def test_maxpool_redistribution_is_winner_take_all():
    x = np.array([[[[1.0, 5.0], [3.0, 4.0]]]], dtype=np.float32)
    layer = LayerSpec("maxpool2d", kernel_size=2, stride=2)
    r = redistribute_relevance(
        layer, x, WeightTransform.IDENTITY, np.array([[[[7.0]]]], dtype=np.float32)
    )
    np.testing.assert_array_equal(r[0, 0], [[0.0, 7.0], [0.0, 0.0]])
    _, aux = forward_layer_aux(layer, x)
    r2 = redistribute_relevance(
        layer,
        x,
        WeightTransform.IDENTITY,
        np.array([[[[7.0]]]], dtype=np.float32),
        pool_indices=aux,
    )
    np.testing.assert_array_equal(r, r2)


def test_relu_redistribution_is_identity():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    r_out = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    r = redistribute_relevance(LayerSpec("relu"), x, WeightTransform.IDENTITY, r_out)
    np.testing.assert_array_equal(r, r_out)


def test_flatten_redistribution_reindexes():
    x = np.arange(12, dtype=np.float32).reshape(1, 3, 2, 2)
    r_out = np.arange(12, dtype=np.float32).reshape(1, 12) * 2
    r = redistribute_relevance(LayerSpec("flatten"), x, WeightTransform.IDENTITY, r_out)
    np.testing.assert_array_equal(r, r_out.reshape(1, 3, 2, 2))


def test_redistribute_rejects_bad_epsilon_and_shape():
    layer = LayerSpec("linear", weights=np.ones((1, 2), dtype=np.float32))
    x = np.ones((1, 2), dtype=np.float32)
    with pytest.raises(ValidationError, match="epsilon"):
        redistribute_relevance(layer, x, WeightTransform.IDENTITY, np.ones((1, 1), np.float32), 0.0)
    with pytest.raises(ShapeError):
        redistribute_relevance(layer, x, WeightTransform.IDENTITY, np.ones((1, 2), np.float32))


CONSERVING_CASES = [
    ("conv2d", (1, 2, 5, 5)),
    ("conv2d_strided", (1, 1, 5, 5)),
    ("linear", (2, 5)),
    ("relu", (1, 2, 3, 3)),
    ("maxpool2d", (1, 2, 4, 4)),
    ("avgpool2d", (1, 2, 4, 4)),
    ("globalavgpool", (1, 2, 3, 3)),
    ("flatten", (2, 2, 3, 3)),
]


def _draw_well_conditioned_input(layer, in_shape, rng):
    """Input whose pre-bias sums all clear the stabilizer by a wide margin,
    the precondition of the conservation contract. Resamples on bad draws."""
    for _ in range(50):
        x = margin_input(rng, in_shape)
        if layer.kind not in ("conv2d", "linear", "avgpool2d", "globalavgpool"):
            return x
        probe = (
            LayerSpec(layer.kind, weights=layer.weights, stride=layer.stride, padding=layer.padding)
            if layer.has_weights
            else layer
        )
        z = forward_layer(probe, x)
        if (np.abs(z) > 1e-3).all():
            return x
    raise AssertionError("could not draw a well-conditioned input")


@pytest.mark.parametrize("kind,in_shape", CONSERVING_CASES)
@pytest.mark.parametrize("seed", range(8))
def test_conservation_across_kinds(kind, in_shape, seed):
    rng = np.random.default_rng(5000 + seed)
    layer, _ = _layer_and_input(kind, rng)
    x = _draw_well_conditioned_input(layer, in_shape, rng)
    r_out = rng.standard_normal(layer.output_shape(in_shape)).astype(np.float32)
    r_in = redistribute_relevance(layer, x, WeightTransform.IDENTITY, r_out, epsilon=EPS)
    total_out = float(np.sum(r_out, dtype=np.float64))
    total_in = float(np.sum(r_in, dtype=np.float64))
    assert abs(total_in - total_out) <= 1e-4 * max(1.0, abs(total_out))


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    outf=st.integers(1, 6),
    inf=st.integers(1, 8),
    scale=st.floats(-8.0, 8.0).filter(lambda a: abs(a) > 1e-3),
)
def test_redistribution_is_linear_in_relevance(seed, outf, inf, scale):
    rng = np.random.default_rng(seed)
    layer = rand_linear(rng, outf=outf, inf=inf, bias=False)
    x = margin_input(rng, (1, inf))
    r_out = rng.standard_normal((1, outf)).astype(np.float32)
    base = redistribute_relevance(layer, x, WeightTransform.IDENTITY, r_out, epsilon=EPS)
    scaled = redistribute_relevance(
        layer, x, WeightTransform.IDENTITY, (scale * r_out).astype(np.float32), epsilon=EPS
    )
    np.testing.assert_allclose(scaled, scale * base, rtol=2e-6, atol=1e-6 * abs(scale))


# ---------------------------------------------------------------------------
# mask redistribution


def test_mask_all_ones_splits_uniformly():
    layer = LayerSpec("linear", weights=np.array([[1.0, 1.0]], dtype=np.float32))
    r = redistribute_to_mask(
        layer,
        np.array([[1.0, 1.0]], dtype=np.float32),
        WeightTransform.IDENTITY,
        np.array([[2.0]], dtype=np.float32),
    )
    np.testing.assert_allclose(r, [[1.0, 1.0]], rtol=1e-5)


def test_mask_all_zeros_gives_zeros():
    rng = np.random.default_rng(17)
    layer = rand_conv(rng, outc=2, inc=1, k=2, bias=False)
    r = redistribute_to_mask(
        layer,
        np.zeros((1, 1, 4, 4), dtype=np.float32),
        WeightTransform.ABSOLUTE,
        rng.standard_normal((1, 2, 3, 3)).astype(np.float32),
    )
    assert not r.any()


@pytest.mark.parametrize("seed", range(5))
def test_mixed_mask_matches_dense_unroll(seed):
    rng = np.random.default_rng(6000 + seed)
    layer = rand_conv(rng, outc=2, inc=2, k=3, stride=1, padding=1, bias=False)
    mask = (rng.random((1, 2, 5, 5)) > 0.4).astype(np.float32)
    r_out = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    got = redistribute_to_mask(layer, mask, WeightTransform.ABSOLUTE, r_out, epsilon=EPS)
    mat = conv_unrolled_matrix(
        np.abs(np.asarray(layer.weights, dtype=np.float64)), (2, 5, 5), stride=1, padding=1
    )
    want = dense_redistribute(mat, mask.reshape(-1), r_out.reshape(-1), EPS)
    np.testing.assert_allclose(got.reshape(-1), want, atol=1e-5)


def test_mask_rejects_non_binary_values():
    layer = LayerSpec("linear", weights=np.ones((1, 2), dtype=np.float32))
    with pytest.raises(MaskValueError):
        redistribute_to_mask(
            layer,
            np.array([[0.5, 1.0]], dtype=np.float32),
            WeightTransform.IDENTITY,
            np.ones((1, 1), dtype=np.float32),
        )


def test_mask_rejects_non_mixing_layer():
    with pytest.raises(ValidationError):
        redistribute_to_mask(
            LayerSpec("relu"),
            np.ones((1, 2), dtype=np.float32),
            WeightTransform.IDENTITY,
            np.ones((1, 2), dtype=np.float32),
        )
