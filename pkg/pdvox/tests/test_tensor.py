import math

import numpy as np
import pytest

from pdvox.errors import ShapeError
from pdvox.tensor import ops
from pdvox.tensor.gradcheck import finite_difference_grad, relative_error
from pdvox.tensor.ops import NormState
from pdvox.tensor.tape import Tape, backward


def assert_grad_matches(f, x, analytic, h=1e-5):
    numeric = finite_difference_grad(f, x, h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def brute_force_conv(x, kernel, bias, stride, padding):
    n, d, h, w, _ = x.shape
    k = kernel.shape[0]
    geometry = [ops.axis_geometry(e, k, stride, padding) for e in (d, h, w)]
    xp = np.pad(x, [(0, 0), *((g.before, g.after) for g in geometry), (0, 0)])
    out = np.zeros((n, *(g.out for g in geometry), kernel.shape[-1]))
    for idx in np.ndindex(*out.shape[:4]):
        b, i, j, l = idx
        window = xp[b, i * stride : i * stride + k, j * stride : j * stride + k, l * stride : l * stride + k]
        out[idx] = np.tensordot(window, kernel, axes=([0, 1, 2, 3], [0, 1, 2, 3])) + bias
    return out


def test_conv3d_ones_center_and_corner():
    x = np.ones((1, 3, 3, 3, 1))
    kernel = np.ones((3, 3, 3, 1, 1))
    out, _ = ops.conv3d_forward(x, kernel, np.zeros(1), stride=1, padding="same")
    assert out.shape == (1, 3, 3, 3, 1)
    assert out[0, 1, 1, 1, 0] == 27
    assert out[0, 0, 0, 0, 0] == 8


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv3d_matches_nested_loops(rng, stride, padding):
    x = rng.standard_normal((2, 4, 5, 3, 2))
    kernel = rng.standard_normal((3, 3, 3, 2, 3))
    bias = rng.standard_normal(3)
    out, _ = ops.conv3d_forward(x, kernel, bias, stride, padding)
    np.testing.assert_allclose(out, brute_force_conv(x, kernel, bias, stride, padding), atol=1e-10)


def test_conv3d_same_shape_algebra():
    rng = np.random.default_rng(1)
    for _ in range(40):
        extents = tuple(int(e) for e in rng.integers(1, 33, size=3))
        stride = int(rng.integers(1, 4))
        x = np.zeros((1, *extents, 1), dtype=np.float32)
        out, _ = ops.conv3d_forward(x, np.zeros((3, 3, 3, 1, 2), np.float32), np.zeros(2, np.float32), stride)
        assert out.shape[1:4] == tuple(math.ceil(e / stride) for e in extents)


@pytest.mark.slow
def test_conv3d_full_scale_shape():
    x = np.zeros((1, 80, 100, 108, 1), dtype=np.float32)
    out, _ = ops.conv3d_forward(
        x, np.zeros((3, 3, 3, 1, 32), np.float32), np.zeros(32, np.float32)
    )
    assert out.shape == (1, 80, 100, 108, 32)


def test_conv3d_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.conv3d_forward(np.ones((1, 3, 3, 3, 2)), np.ones((3, 3, 3, 1, 4)), np.zeros(4))


def test_conv3d_zero_extent():
    with pytest.raises(ShapeError):
        ops.conv3d_forward(np.ones((1, 0, 3, 3, 1)), np.ones((3, 3, 3, 1, 1)), np.zeros(1))


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv3d_gradients(rng, stride, padding):
    x = rng.standard_normal((2, 4, 5, 3, 2))
    kernel = rng.standard_normal((3, 3, 3, 2, 3))
    bias = rng.standard_normal(3)
    out, cache = ops.conv3d_forward(x, kernel, bias, stride, padding)
    upstream = rng.standard_normal(out.shape)
    dx, dkernel, dbias = ops.conv3d_backward(upstream, cache)

    def loss(_):
        return float(np.sum(ops.conv3d_forward(x, kernel, bias, stride, padding)[0] * upstream))

    assert_grad_matches(loss, x, dx)
    assert_grad_matches(loss, kernel, dkernel)
    assert_grad_matches(loss, bias, dbias)


def test_maxpool3d_single_window():
    x = np.arange(8, dtype=np.float64).reshape(1, 2, 2, 2, 1)
    out, _ = ops.maxpool3d_forward(x, window=2, stride=2)
    assert out.shape == (1, 1, 1, 1, 1)
    assert out[0, 0, 0, 0, 0] == 7


def test_maxpool3d_full_scale_extents():
    x = np.zeros((1, 80, 100, 108, 1), dtype=np.float32)
    out, _ = ops.maxpool3d_forward(x, window=2, stride=2)
    assert out.shape == (1, 40, 50, 54, 1)


def test_maxpool3d_same_shape_algebra():
    rng = np.random.default_rng(2)
    for _ in range(40):
        extents = tuple(int(e) for e in rng.integers(1, 33, size=3))
        stride = int(rng.integers(1, 4))
        window = int(rng.integers(1, 5))
        out, _ = ops.maxpool3d_forward(rng.standard_normal((1, *extents, 2)), window, stride)
        assert out.shape == (1, *(math.ceil(e / stride) for e in extents), 2)


def test_maxpool3d_clipped_cells_never_win():
    x = -np.ones((1, 3, 3, 3, 1))
    out, _ = ops.maxpool3d_forward(x, window=2, stride=2)
    assert np.all(out == -1)


def test_maxpool3d_constant_input_routes_to_lowest_index():
    x = np.ones((1, 4, 4, 4, 1))
    out, cache = ops.maxpool3d_forward(x, window=2, stride=2)
    dx = ops.maxpool3d_backward(np.ones_like(out), cache)
    assert dx.sum() == 8
    expected = np.zeros_like(x)
    expected[:, ::2, ::2, ::2] = 1
    np.testing.assert_array_equal(dx, expected)


def test_maxpool3d_backward_conserves_gradient(rng):
    x = rng.standard_normal((2, 5, 6, 7, 3))
    out, cache = ops.maxpool3d_forward(x, window=4, stride=2)
    upstream = rng.standard_normal(out.shape)
    dx = ops.maxpool3d_backward(upstream, cache)
    assert dx.shape == x.shape
    assert dx.sum() == pytest.approx(upstream.sum())


@pytest.mark.parametrize("window, stride", [(2, 2), (4, 2), (3, 1)])
def test_maxpool3d_gradients(rng, window, stride):
    # well separated values so a perturbation never changes a winner
    x = rng.permutation(240).reshape(2, 5, 4, 6, 2) * 0.1
    out, cache = ops.maxpool3d_forward(x, window, stride)
    upstream = rng.standard_normal(out.shape)
    dx = ops.maxpool3d_backward(upstream, cache)

    def loss(_):
        return float(np.sum(ops.maxpool3d_forward(x, window, stride)[0] * upstream))

    assert_grad_matches(loss, x, dx)


@pytest.mark.parametrize(
    "x, alpha, expected",
    [(3.0, 0.01, 3.0), (-2.0, 0.01, -0.02), (-5.0, 0.0, 0.0)],
)
def test_leaky_relu_examples(x, alpha, expected):
    out, _ = ops.leaky_relu_forward(np.array([x]), alpha)
    assert out[0] == pytest.approx(expected)


def test_leaky_relu_gradients(rng):
    x = rng.standard_normal((4, 6))
    out, cache = ops.leaky_relu_forward(x, 0.1)
    upstream = rng.standard_normal(out.shape)
    dx = ops.leaky_relu_backward(upstream, cache)
    assert_grad_matches(
        lambda _: float(np.sum(ops.leaky_relu_forward(x, 0.1)[0] * upstream)), x, dx
    )


def test_leaky_relu_finite_difference_away_from_kink():
    x = np.array([0.5])
    numeric = finite_difference_grad(lambda v: float(ops.leaky_relu_forward(v, 0.01)[0].sum()), x)
    assert numeric[0] == pytest.approx(1.0)


def test_dense_identity():
    out, _ = ops.dense_forward(np.array([[1.0, 0.0]]), np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(out, [[1.0, 0.0]])


def test_dense_hand_multiply():
    out, _ = ops.dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([3.0]))
    np.testing.assert_array_equal(out, [[6.0]])


def test_dense_dimension_mismatch():
    with pytest.raises(ShapeError):
        ops.dense_forward(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))


def test_dense_gradients(rng):
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(5)
    out, cache = ops.dense_forward(x, w, b)
    upstream = rng.standard_normal(out.shape)
    dx, dw, db = ops.dense_backward(upstream, cache)

    def loss(_):
        return float(np.sum(ops.dense_forward(x, w, b)[0] * upstream))

    assert_grad_matches(loss, x, dx)
    assert_grad_matches(loss, w, dw)
    assert_grad_matches(loss, b, db)


def test_batch_norm_training_statistics(rng):
    x = rng.standard_normal((4, 3, 3, 3, 5)) * 7 + 3
    state = NormState.create(5, dtype=np.float64)
    out, _ = ops.batch_norm_forward(x, np.ones(5), np.zeros(5), state, training=True)
    axes = (0, 1, 2, 3)
    assert np.all(np.abs(out.mean(axis=axes)) < 1e-6)
    np.testing.assert_allclose(out.var(axis=axes), 1, atol=1e-5)


def test_batch_norm_constant_channel_gives_beta():
    x = np.full((2, 2, 2, 2, 1), 4.0)
    state = NormState.create(1, dtype=np.float64)
    out, _ = ops.batch_norm_forward(x, np.ones(1), np.full(1, 0.5), state, training=True)
    np.testing.assert_allclose(out, 0.5)


def test_batch_norm_affine_after_normalization(rng):
    x = rng.standard_normal((8, 2, 2, 2, 3)) * 5
    state = NormState.create(3, dtype=np.float64)
    out, _ = ops.batch_norm_forward(x, np.full(3, 2.0), np.ones(3), state, training=True)
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2, 3)), 1, atol=1e-6)


def test_batch_norm_running_statistics(rng):
    x = rng.standard_normal((4, 2, 2, 2, 2)) + 10
    state = NormState.create(2, dtype=np.float64)
    ops.batch_norm_forward(x, np.ones(2), np.zeros(2), state, training=True)
    np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 1, 2, 3)))
    assert np.all(state.running_var >= 0)

    before = state.running_mean.copy()
    ops.batch_norm_forward(x, np.ones(2), np.zeros(2), state, training=False)
    np.testing.assert_array_equal(state.running_mean, before)


def test_batch_norm_inference_uses_running_statistics():
    state = NormState(running_mean=np.array([2.0]), running_var=np.array([4.0]), eps=1e-5)
    out, _ = ops.batch_norm_forward(np.full((1, 1, 1, 1, 1), 6.0), np.ones(1), np.zeros(1), state, training=False)
    assert out.item() == pytest.approx(4 / math.sqrt(4 + 1e-5))


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradients(rng, training):
    x = rng.standard_normal((3, 2, 3, 2, 4)) * 2
    gamma = rng.standard_normal(4)
    beta = rng.standard_normal(4)
    state = NormState(running_mean=rng.standard_normal(4), running_var=rng.random(4) + 0.5)
    out, cache = ops.batch_norm_forward(x, gamma, beta, state, training)
    upstream = rng.standard_normal(out.shape)
    dx, dgamma, dbeta = ops.batch_norm_backward(upstream, cache)

    def loss(_):
        return float(np.sum(ops.batch_norm_forward(x, gamma, beta, state, training)[0] * upstream))

    assert_grad_matches(loss, x, dx)
    assert_grad_matches(loss, gamma, dgamma)
    assert_grad_matches(loss, beta, dbeta)


def test_group_norm_single_group_is_layer_norm(rng):
    x = rng.standard_normal((2, 2, 3, 2, 4)) * 3 + 1
    out, _ = ops.group_norm_forward(x, 1, np.ones(4), np.zeros(4))
    flat = x.reshape(2, -1)
    expected = (flat - flat.mean(axis=1, keepdims=True)) / np.sqrt(flat.var(axis=1, keepdims=True) + 1e-5)
    np.testing.assert_allclose(out.reshape(2, -1), expected, atol=1e-10)


def test_group_norm_scale_invariance(rng):
    a = rng.standard_normal((1, 2, 2, 2, 4))
    out, _ = ops.group_norm_forward(np.concatenate([a, 10 * a]), 2, np.ones(4), np.zeros(4))
    np.testing.assert_allclose(out[0], out[1], atol=1e-4)


def test_group_norm_groups_equal_channels_is_instance_norm(rng):
    x = rng.standard_normal((2, 2, 2, 2, 2))
    out, _ = ops.group_norm_forward(x, 2, np.ones(2), np.zeros(2))
    mean = x.mean(axis=(1, 2, 3), keepdims=True)
    var = x.var(axis=(1, 2, 3), keepdims=True)
    np.testing.assert_allclose(out, (x - mean) / np.sqrt(var + 1e-5), atol=1e-10)


def test_group_norm_statistics_per_group(rng):
    x = rng.standard_normal((3, 3, 3, 3, 8)) * 4 - 2
    out, _ = ops.group_norm_forward(x, 4, np.ones(8), np.zeros(8))
    grouped = out.reshape(3, -1, 4, 2)
    assert np.all(np.abs(grouped.mean(axis=(1, 3))) < 1e-5)
    np.testing.assert_allclose(grouped.var(axis=(1, 3)), 1, atol=1e-4)


def test_group_norm_groups_must_divide_channels():
    with pytest.raises(ShapeError):
        ops.group_norm_forward(np.ones((1, 2, 2, 2, 6)), 4, np.ones(6), np.zeros(6))


def test_group_norm_group_count():
    assert ops.group_count(32) == 8
    assert ops.group_count(4) == 4


def test_group_norm_gradients(rng):
    x = rng.standard_normal((2, 2, 3, 2, 4)) * 2
    gamma = rng.standard_normal(4)
    beta = rng.standard_normal(4)
    out, cache = ops.group_norm_forward(x, 2, gamma, beta)
    upstream = rng.standard_normal(out.shape)
    dx, dgamma, dbeta = ops.group_norm_backward(upstream, cache)

    def loss(_):
        return float(np.sum(ops.group_norm_forward(x, 2, gamma, beta)[0] * upstream))

    assert_grad_matches(loss, x, dx)
    assert_grad_matches(loss, gamma, dgamma)
    assert_grad_matches(loss, beta, dbeta)


def test_dropout_keep_prob_one_is_identity(rng):
    x = rng.standard_normal((5, 5))
    out, _ = ops.dropout_forward(x, 1.0, rng, training=True)
    np.testing.assert_array_equal(out, x)


def test_dropout_inference_is_identity(rng):
    x = rng.standard_normal((5, 5))
    out, _ = ops.dropout_forward(x, 0.5, rng, training=False)
    np.testing.assert_array_equal(out, x)


def test_dropout_half_keep_mean():
    out, _ = ops.dropout_forward(np.ones(400_000), 0.5, np.random.default_rng(0), training=True)
    assert abs(out.mean() - 1) < 0.01


@pytest.mark.parametrize("keep_prob", [0.2, 0.45, 0.5])
def test_dropout_preserves_expectation(keep_prob):
    x = np.full(200_000, 3.0)
    out, _ = ops.dropout_forward(x, keep_prob, np.random.default_rng(5), training=True)
    assert abs(out.mean() - 3.0) / 3.0 < 0.02


@pytest.mark.parametrize("keep_prob", [0.0, -0.1, 1.5])
def test_dropout_invalid_keep_prob(rng, keep_prob):
    with pytest.raises(ValueError):
        ops.dropout_forward(np.ones(3), keep_prob, rng, training=True)


def test_dropout_gradients_with_fixed_mask(rng):
    x = rng.standard_normal((4, 6))
    upstream = rng.standard_normal((4, 6))
    out, mask = ops.dropout_forward(x, 0.5, np.random.default_rng(11), training=True)
    dx = ops.dropout_backward(upstream, mask)

    def loss(_):
        return float(np.sum(ops.dropout_forward(x, 0.5, np.random.default_rng(11), training=True)[0] * upstream))

    assert_grad_matches(loss, x, dx)


def test_softmax_cross_entropy_uniform_logits():
    loss, probs = ops.softmax_cross_entropy(np.zeros((1, 2)), [0])
    np.testing.assert_allclose(probs, [[0.5, 0.5]])
    assert loss == pytest.approx(math.log(2))


def test_softmax_cross_entropy_large_logits_do_not_overflow():
    loss, probs = ops.softmax_cross_entropy(np.array([[1000.0, 0.0]]), [0])
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(probs))


def test_softmax_cross_entropy_hand_evaluation():
    loss, _ = ops.softmax_cross_entropy(np.array([[1.0, 2.0]]), [1])
    assert loss == pytest.approx(0.3133, abs=1e-4)


def test_softmax_cross_entropy_rows_sum_to_one(rng):
    logits = rng.standard_normal((20, 3)) * 50
    np.testing.assert_allclose(ops.softmax(logits).sum(axis=1), 1, atol=1e-6)


def test_softmax_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(np.zeros((1, 2)), [2])


def test_softmax_cross_entropy_gradients(rng):
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 2])
    _, probs = ops.softmax_cross_entropy(logits, labels)
    dlogits = ops.softmax_cross_entropy_backward(probs, labels)
    assert_grad_matches(lambda _: ops.softmax_cross_entropy(logits, labels)[0], logits, dlogits)


def test_tape_sum_gradient_is_ones(rng):
    tape = Tape()
    x = tape.param("x", rng.standard_normal((3, 4)))
    grads = backward(tape, tape.sum(x))
    np.testing.assert_array_equal(grads["x"], np.ones((3, 4)))


def test_tape_dense_softmax_matches_finite_differences(rng):
    x = rng.standard_normal((2, 2))
    w = rng.standard_normal((2, 2))
    b = rng.standard_normal(2)
    labels = np.array([0, 1])

    def loss_value(_):
        return ops.softmax_cross_entropy(ops.dense_forward(x, w, b)[0], labels)[0]

    tape = Tape()
    logits = tape.dense(tape.constant(x), tape.param("w", w), tape.param("b", b))
    loss, _ = tape.softmax_cross_entropy(logits, labels)
    grads = backward(tape, loss)
    np.testing.assert_allclose(grads["w"], finite_difference_grad(loss_value, w), rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(grads["b"], finite_difference_grad(loss_value, b), rtol=1e-4, atol=1e-7)


def test_tape_unreached_parameter_gets_zeros(rng):
    tape = Tape()
    x = tape.param("x", rng.standard_normal(3))
    tape.param("unused", np.ones((2, 2)))
    grads = backward(tape, tape.sum(x))
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def test_tape_shared_input_accumulates(rng):
    tape = Tape()
    x = tape.param("x", rng.standard_normal(3))
    grads = backward(tape, tape.sum(tape.add(x, x)))
    np.testing.assert_array_equal(grads["x"], np.full(3, 2.0))


def test_tape_backward_before_forward():
    tape = Tape()
    x = tape.param("x", np.ones(2))
    with pytest.raises(RuntimeError):
        backward(tape, x)


def test_disabled_tape_records_nothing(rng):
    tape = Tape(enabled=False)
    x = tape.param("x", rng.standard_normal(3))
    loss = tape.sum(x)
    assert len(tape) == 0
    with pytest.raises(RuntimeError):
        backward(tape, loss)


def test_tape_non_scalar_loss(rng):
    tape = Tape()
    x = tape.param("x", rng.standard_normal((2, 2)))
    with pytest.raises(ValueError):
        backward(tape, tape.leaky_relu(x, 0.1))


def test_finite_difference_quadratic():
    grad = finite_difference_grad(lambda v: float(np.sum(v**2)), np.array([3.0]))
    assert grad[0] == pytest.approx(6.0, abs=1e-8)


def test_finite_difference_constant_function():
    grad = finite_difference_grad(lambda v: 1.0, np.ones(4))
    np.testing.assert_array_equal(grad, np.zeros(4))


def test_finite_difference_restores_input(rng):
    x = rng.standard_normal(5)
    before = x.copy()
    finite_difference_grad(lambda v: float(np.sum(np.sin(v))), x)
    np.testing.assert_array_equal(x, before)


def test_finite_difference_rejects_non_positive_step():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda v: 0.0, np.ones(2), h=0)


def test_finite_difference_determinism(rng):
    x = rng.standard_normal((2, 4, 4, 4, 2))
    kernel = rng.standard_normal((3, 3, 3, 2, 3))
    first, _ = ops.conv3d_forward(x, kernel, np.zeros(3))
    second, _ = ops.conv3d_forward(x, kernel, np.zeros(3))
    np.testing.assert_array_equal(first, second)


def test_finite_difference_relative_error():
    assert relative_error(np.ones(3), np.ones(3)) == 0
    assert relative_error(np.array([1.0]), np.array([3.0])) == pytest.approx(0.5)


def test_finite_difference_sampled_coordinates_only():
    x = np.arange(6, dtype=np.float64)
    grad = finite_difference_grad(lambda v: float(np.sum(v**2)), x, coords=[1, 4])
    np.testing.assert_allclose(grad, [0, 2, 0, 0, 8, 0], atol=1e-6)
