import numpy as np
import pytest

from app.core.errors import ContractError, NumericError, ShapeError, StateError
from app.core.tensor import (
    BN_EPS,
    PRIMITIVES,
    BatchNormStats,
    Tape,
    Tensor,
    add,
    backward,
    batch_norm,
    concat_rows,
    constant,
    conv2d,
    default_dtype,
    forward_primitive,
    l2_normalize_rows,
    log_softmax_rows,
    matmul,
    max_pool2,
    mean_all,
    mul,
    relu,
    reshape,
    shadow_precision,
    tensor_from,
)


def test_tensor_from_row_major():
    t = tensor_from([2, 3], [1, 2, 3, 4, 5, 6])
    assert t.shape == (2, 3)
    assert t.data[1, 0] == 4
    assert t.data.dtype == np.float32


def test_tensor_from_wrong_count():
    with pytest.raises(ShapeError):
        tensor_from([2, 2], [1, 2, 3])


def test_tensor_from_negative_extent():
    with pytest.raises(ShapeError):
        tensor_from([-1, 2], [])


def test_tensor_rejects_non_finite():
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan])


def test_tensor_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_shadow_precision_switches_dtype():
    assert default_dtype() is np.float32
    with shadow_precision():
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


def test_add_bias_broadcast_and_shape_error():
    out = add(Tensor(np.ones((2, 3))), Tensor([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(out.data, [[2, 3, 4], [2, 3, 4]])
    with pytest.raises(ShapeError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_unknown_primitive():
    with pytest.raises(ContractError):
        forward_primitive("softplus", [Tensor([1.0])])


def test_overflow_raises_numeric_error():
    big = Tensor(np.full((1, 1), 3e38))
    with pytest.raises(NumericError):
        mul(big, big)


def test_backward_product_rule():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    y = Tensor([4.0, 5.0, 6.0], requires_grad=True)
    with Tape() as tape:
        loss = mean_all(mul(x, y))
    grads = backward(loss, tape)
    np.testing.assert_allclose(grads[x.node_id].data, np.array([4, 5, 6]) / 3, rtol=1e-6)
    np.testing.assert_allclose(grads[y.node_id].data, np.array([1, 2, 3]) / 3, rtol=1e-6)


def test_backward_accumulates_shared_inputs():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = mean_all(add(mul(x, x), x))
    grads = backward(loss, tape)
    assert grads[x.node_id].item() == pytest.approx(5.0)


def test_unrelated_leaf_gets_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = mean_all(x)
    grads = backward(loss, tape, wrt=[unused])
    np.testing.assert_array_equal(grads[unused.node_id].data, np.zeros((2, 2)))


def test_tape_single_use():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        loss = mean_all(x)
    backward(loss, tape)
    with pytest.raises(StateError):
        backward(loss, tape)
    with pytest.raises(StateError):
        with tape:
            mean_all(x)
    tape.reset()
    assert not tape.consumed


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        out = relu(x)
    with pytest.raises(ContractError):
        backward(out, tape)


def test_constants_are_not_recorded():
    with Tape() as tape:
        add(constant([1.0]), constant([2.0]))
    assert tape.records == []


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = mean_all(relu(x))
    grads = backward(loss, tape)
    np.testing.assert_array_equal(grads[x.node_id].data, np.array([0.0, 0.0, 1.0 / 3], dtype=np.float32))


def test_max_pool_ties_route_to_first_in_row_major_order():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = mean_all(max_pool2(x))
    grads = backward(loss, tape)
    np.testing.assert_array_equal(grads[x.node_id].data[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_max_pool_needs_even_extents():
    with pytest.raises(ShapeError):
        max_pool2(Tensor(np.ones((1, 1, 3, 2))))


def _naive_conv(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[b, f, i, j] = np.sum(patch * w[f])
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_conv2d_matches_loops(rng, stride, pad):
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    with shadow_precision():
        out = conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad)
    np.testing.assert_allclose(out.data, _naive_conv(x, w, stride, pad), rtol=1e-10, atol=1e-12)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 2, 3, 3))))


def test_batch_norm_eval_needs_stats():
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(ContractError):
        batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), training=False)


def test_batch_norm_training_updates_running_stats(rng):
    x = rng.standard_normal((6, 2, 3, 3)) * 2 + 1
    stats = BatchNormStats.fresh(2)
    out = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), training=True, stats=stats)
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    expected_mean = 0.1 * x.mean(axis=(0, 2, 3))
    np.testing.assert_allclose(stats.running_mean, expected_mean, rtol=1e-5)


@pytest.mark.parametrize("shape", [(5, 3), (4, 3, 2, 2)])
def test_batch_norm_eval_uses_stored_statistics(rng, shape):
    stats = BatchNormStats(
        np.array([0.5, -1.0, 2.0], dtype=np.float32), np.array([0.25, 4.0, 1.5], dtype=np.float32),
    )
    before = stats.copy()
    gamma, beta = np.array([1.5, 0.5, -2.0]), np.array([0.1, 0.0, -0.3])
    x = rng.standard_normal(shape) * 3
    with shadow_precision():
        out = batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), training=False, stats=stats)
    view = (1, 3) + (1,) * (len(shape) - 2)
    mean = stats.running_mean.astype(np.float64).reshape(view)
    var = stats.running_var.astype(np.float64).reshape(view)
    expected = gamma.reshape(view) * (x - mean) / np.sqrt(var + BN_EPS) + beta.reshape(view)
    assert out.data.dtype == np.float64
    np.testing.assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(stats.running_mean, before.running_mean)
    np.testing.assert_array_equal(stats.running_var, before.running_var)


def test_l2_normalize_zero_row_is_finite():
    out = l2_normalize_rows(Tensor(np.array([[0.0, 0.0], [3.0, 4.0]])))
    np.testing.assert_allclose(out.data, [[0.0, 0.0], [0.6, 0.8]], rtol=1e-6)


def test_log_softmax_is_shift_invariant():
    a = log_softmax_rows(Tensor([[1.0, 2.0, 3.0]]))
    b = log_softmax_rows(Tensor([[101.0, 102.0, 103.0]]))
    np.testing.assert_allclose(a.data, b.data, atol=1e-5)


def test_reshape_and_concat_shape_rules():
    with pytest.raises(ShapeError):
        reshape(Tensor(np.ones(6)), [4, 2])
    with pytest.raises(ShapeError):
        concat_rows([Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3)))])
    out = concat_rows([Tensor(np.ones((1, 2))), Tensor(np.zeros((2, 2)))])
    assert out.shape == (3, 2)


def test_primitive_registry_is_complete():
    expected = {
        "add", "mul", "matmul", "transpose", "scale", "conv2d", "max_pool2", "avg_pool_global", "relu",
        "batch_norm", "l2_normalize_rows", "log_softmax_rows", "mean_all", "reshape", "concat_rows",
    }
    assert set(PRIMITIVES) == expected


def test_detach_blocks_gradient():
    x = Tensor([1.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = mean_all(mul(x, x.detach()))
    grads = backward(loss, tape, wrt=[x])
    np.testing.assert_allclose(grads[x.node_id].data, [0.5, 1.5])
    assert not x.detach().requires_grad
