from __future__ import annotations

import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest

from swincd.autograd import ops
from swincd.autograd.tensor import Graph, Tensor, backward, default_dtype, no_grad
from swincd.errors import NumericError, ShapeError


def leaf(values) -> Tensor:
    return Tensor(values, requires_grad=True)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------
def test_elementwise_examples():
    assert_array_equal(ops.elementwise("add", Tensor([1, 2]), Tensor([3, 4])).numpy(), [4, 6])
    assert ops.elementwise("sigmoid", Tensor(0.0)).item() == 0.5
    assert_array_equal(ops.elementwise("relu", Tensor([-1, 0, 2])).numpy(), [0, 0, 2])


def test_broadcast_along_trailing_singletons():
    out = ops.mul(Tensor(np.ones((2, 3, 4))), Tensor(np.full((3, 1), 2.0)))
    assert out.shape == (2, 3, 4)
    assert_array_equal(out.numpy(), np.full((2, 3, 4), 2.0))


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))


def test_relu_subgradient_is_zero_at_zero():
    x = leaf([-1.0, 0.0, 2.0])
    backward(ops.sum(ops.relu(x)))
    assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_broadcast_gradient_sums_back():
    a = leaf(np.ones((2, 3)))
    b = leaf(np.ones((1, 3)))
    backward(ops.sum(a * b))
    assert b.grad.shape == (1, 3)
    assert_array_equal(b.grad, np.full((1, 3), 2.0))


def test_reused_input_gradient_is_exactly_two(rng):
    x = leaf(rng.normal(size=(3, 4)))
    backward(ops.sum(x + x))
    assert_array_equal(x.grad, np.full((3, 4), 2.0))


def test_non_finite_result_is_an_error():
    with pytest.raises(NumericError):
        ops.div(Tensor([1.0]), Tensor([0.0]))
    with pytest.raises(NumericError):
        ops.log(Tensor([0.0]))


# ---------------------------------------------------------------------------
# Matmul, softmax, normalization
# ---------------------------------------------------------------------------
def test_matmul_examples():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert_array_equal(ops.matmul(Tensor(np.eye(2)), m).numpy(), m.numpy())
    assert_array_equal(ops.matmul(m, Tensor([[5.0], [6.0]])).numpy(), [[17.0], [39.0]])
    assert_array_equal(ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.arange(12.0).reshape(3, 4))).numpy(),
                       np.zeros((2, 4)))


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError, match="inner"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_batched_adjoints(rng):
    a = leaf(rng.normal(size=(4, 2, 3)))
    b = leaf(rng.normal(size=(3, 5)))
    g = rng.normal(size=(4, 2, 5))
    backward(ops.sum(ops.matmul(a, b) * g))
    assert_allclose(a.grad, g @ b.data.T)
    assert_allclose(b.grad, np.einsum("nik,nij->kj", a.data, g))


def test_softmax_examples():
    assert_allclose(ops.softmax(Tensor([7.0, 7.0, 7.0])).numpy(), [1 / 3] * 3)
    assert_array_equal(ops.softmax(Tensor([3.5])).numpy(), [1.0])
    x = np.array([1.0, 2.0, 3.0])
    direct = np.exp(x - 3.0) / np.exp(x - 3.0).sum()
    assert_allclose(ops.softmax(Tensor(x)).numpy(), direct, rtol=0, atol=1e-15)


def test_softmax_rows_sum_to_one(rng):
    out = ops.softmax(Tensor(rng.normal(scale=30, size=(6, 9))), axis=-1).numpy()
    assert np.all(np.abs(out.sum(axis=-1) - 1.0) <= 1e-12)


def test_layer_norm_examples():
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    assert_array_equal(ops.layer_norm(Tensor([[3.0, 3.0]]), gamma, beta).numpy(), [[0.0, 0.0]])
    assert_allclose(ops.layer_norm(Tensor([[1.0, -1.0]]), gamma, beta).numpy(),
                    [[1 / math.sqrt(1 + 1e-5), -1 / math.sqrt(1 + 1e-5)]], rtol=1e-15)
    collapsed = ops.layer_norm(Tensor([[1.0, -4.0]]), Tensor(np.zeros(2)), Tensor(np.full(2, 5.0)))
    assert_array_equal(collapsed.numpy(), [[5.0, 5.0]])


def test_batch_norm_train_and_eval(rng):
    x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(4, 2, 3, 3)))
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    mean, var = np.zeros(2), np.ones(2)
    out = ops.batch_norm(x, gamma, beta, mean, var, training=True, momentum=0.1).numpy()
    assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    batch_mean = x.data.mean(axis=(0, 2, 3))
    assert_allclose(mean, 0.1 * batch_mean)
    evaluated = ops.batch_norm(x, gamma, beta, mean, var, training=False).numpy()
    expected = (x.data - mean.reshape(1, 2, 1, 1)) / np.sqrt(var.reshape(1, 2, 1, 1) + 1e-5)
    assert_allclose(evaluated, expected)


def test_batch_norm_single_value_per_channel_rejected():
    with pytest.raises(ShapeError, match="more than one value"):
        ops.batch_norm(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)), training=True)


# ---------------------------------------------------------------------------
# Convolutions and pooling
# ---------------------------------------------------------------------------
def test_conv2d_pointwise_matches_channel_matmul(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(6, 3, 1, 1))
    b = rng.normal(size=6)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).numpy()
    expected = np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x) + b.reshape(1, 6, 1, 1)
    assert_allclose(out, expected)


def test_conv2d_patch_stride_matches_direct_sum(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 4, 4))
    out = ops.conv2d(Tensor(x), Tensor(w), stride=4).numpy()
    expected = np.zeros((1, 3, 2, 2))
    for i in range(2):
        for j in range(2):
            patch = x[0, :, 4 * i:4 * i + 4, 4 * j:4 * j + 4]
            expected[0, :, i, j] = np.tensordot(w, patch, axes=([1, 2, 3], [0, 1, 2]))
    assert_allclose(out, expected)


def test_conv2d_transpose_restores_extent():
    for stride in (4, 8, 16):
        x = Tensor(np.ones((1, 2, 3, 3)))
        w = Tensor(np.ones((2, 1, 2 * stride, 2 * stride)))
        assert ops.conv2d_transpose(x, w, stride=stride).shape == (1, 1, 3 * stride, 3 * stride)


def test_conv2d_transpose_is_adjoint_of_conv2d(rng):
    # <conv(x), y> == <x, conv_T(y)> for matching padding
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(2, 3, 4, 4))
    y = rng.normal(size=(1, 3, 4, 4))
    conv_x = ops.conv2d(Tensor(x), Tensor(np.swapaxes(w, 0, 1)), stride=2, padding=1).numpy()
    up_y = ops.conv2d_transpose(Tensor(y), Tensor(np.swapaxes(w, 0, 1)), stride=2).numpy()
    assert_allclose(np.sum(conv_x * y), np.sum(x * up_y))


def test_avg_pool_contrast_constant_field_is_zero():
    out = ops.avg_pool_contrast(Tensor(np.full((1, 2, 6, 5), 3.25)), 5).numpy()
    assert_array_equal(out, np.zeros((1, 2, 6, 5)))


def test_avg_pool_contrast_counts_only_inside_pixels():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = ops.avg_pool_contrast(Tensor(x), 3).numpy()
    assert out[0, 0, 0, 0] == pytest.approx(0.0 - np.mean([0, 1, 3, 4]))
    assert out[0, 0, 1, 1] == pytest.approx(4.0 - 4.0)


def test_ones_kernel_spreads_an_impulse_into_a_plateau():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), padding=1).numpy()[0, 0]
    expected = np.zeros((5, 5))
    expected[1:4, 1:4] = 1.0
    assert_array_equal(out, expected)


def test_avg_pool_contrast_of_an_impulse():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    out = ops.avg_pool_contrast(Tensor(x), 3).numpy()[0, 0]
    assert out[2, 2] == pytest.approx(8.0 / 9.0)
    assert out[1, 1] == pytest.approx(-1.0 / 9.0)


def test_box_mean_only_full_windows(rng):
    x = rng.normal(size=(1, 1, 5, 6))
    out = ops.box_mean(Tensor(x), 3).numpy()
    assert out.shape == (1, 1, 3, 4)
    assert out[0, 0, 1, 2] == pytest.approx(x[0, 0, 1:4, 2:5].mean())


def test_box_mean_window_larger_than_map():
    with pytest.raises(ShapeError):
        ops.box_mean(Tensor(np.zeros((1, 1, 4, 4))), 5)


# ---------------------------------------------------------------------------
# Reductions and layout
# ---------------------------------------------------------------------------
def test_reductions(rng):
    x = leaf(rng.normal(size=(2, 3, 4, 5)))
    assert ops.reduce("sum_channel", x).shape == (2, 1, 4, 5)
    pooled = ops.reduce("global_avg_pool", x)
    assert_allclose(pooled.numpy()[..., 0, 0], x.numpy().mean(axis=(2, 3)))
    backward(ops.reduce("mean_all", pooled))
    assert_allclose(x.grad, np.full(x.shape, 1.0 / 120))
    with pytest.raises(ValueError, match="unknown reduction"):
        ops.reduce("max", x)


def test_layout_adjoints_undo_the_move(rng):
    x = leaf(rng.normal(size=(2, 3, 4)))
    y = ops.reshape_permute("permute", x, (2, 0, 1))
    z = ops.reshape_permute("roll2d", ops.reshape_permute("reshape", y, (4, 6)), (1, 2))
    assert z.shape == (4, 6)
    weights = rng.normal(size=(4, 6))
    backward(ops.sum(z * Tensor(weights)))
    expected = np.roll(weights, (-1, -2), axis=(-2, -1)).reshape(4, 2, 3).transpose(1, 2, 0)
    assert_allclose(x.grad, expected)
    with pytest.raises(ShapeError):
        ops.reshape(x, (5, 5))
    with pytest.raises(ValueError, match="unknown layout"):
        ops.reshape_permute("flip", x)


# ---------------------------------------------------------------------------
# Graph and modes
# ---------------------------------------------------------------------------
def test_graph_is_topological_and_visits_each_node_once():
    x = leaf([1.0, 2.0])
    y = x * x
    z = ops.sum(y + y)
    graph = Graph.trace(z)
    position = {id(t): i for i, t in enumerate(graph.nodes)}
    assert len(position) == len(graph.nodes)
    for tensor in graph.nodes:
        if tensor.node is not None:
            assert all(position[id(p)] < position[id(tensor)] for p in tensor.node.inputs)
    backward(z)
    assert_array_equal(x.grad, [4.0, 8.0])


def test_leaf_gradients_accumulate_until_cleared():
    x = leaf([1.0, -3.0])
    backward(ops.sum(x * 2.0))
    backward(ops.sum(x * 2.0))
    assert_array_equal(x.grad, [4.0, 4.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_needs_a_scalar():
    with pytest.raises(ShapeError, match="scalar"):
        backward(leaf([1.0, 2.0]) * 2.0)


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.node is None


def test_tensors_are_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_default_dtype_scopes_new_tensors():
    with default_dtype(np.float32):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64
