import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from serfocal.errors import DegenerateBatchWarning, DomainError, NumericError, ShapeError
from serfocal.nn import BatchNorm, Conv2d, Linear, Tensor, grad_check, numeric_gradient, relative_error
from serfocal.nn import functional as F
from serfocal.nn.checkpoint import load_checkpoint, save_checkpoint
from serfocal.nn.optim import SGD, Adam


def layer_error(layer, x, rng, training=True, eps=1e-5):
    """Max relative error over input and parameter gradients for a random
    linear functional of the layer output."""
    out = layer.forward(x, training)
    proj = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.forward(x, training) * proj))

    layer.zero_grad()
    layer.forward(x, training)
    dx = layer.backward(proj)
    errors = [relative_error(dx, numeric_gradient(loss, x, eps))]
    for p in layer.parameters().values():
        errors.append(relative_error(p.grad, numeric_gradient(loss, p.data, eps)))
    return max(errors)


def f64_layer(layer):
    for p in layer.parameters().values():
        p.data = p.data.astype(np.float64)
        p.grad = np.zeros_like(p.data)
    for name in ("running_mean", "running_var"):
        if hasattr(layer, name):
            setattr(layer, name, getattr(layer, name).astype(np.float64))
    return layer


# -- grad_check ---------------------------------------------------------------


def test_grad_check_linear_function():
    assert grad_check(lambda x: (x.sum(), np.ones_like(x)), np.array([0.3, -1.2, 4.0])) < 1e-10


def test_grad_check_quadratic():
    assert grad_check(lambda x: ((x**2).sum(), 2 * x), np.array([1.0, 2.0])) < 1e-8


def test_grad_check_detects_wrong_gradient():
    assert grad_check(lambda x: ((x**2).sum(), 3 * x), np.array([1.0, 2.0])) > 0.1


def test_grad_check_rejects_bad_step_and_nonfinite():
    with pytest.raises(DomainError):
        grad_check(lambda x: (x.sum(), np.ones_like(x)), np.ones(2), eps=1e-1)
    with pytest.raises(NumericError):
        grad_check(lambda x: (np.inf, np.ones_like(x)), np.ones(2))


# -- conv2d -------------------------------------------------------------------


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 6))
    out, _ = F.conv2d_forward(x, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(out, x)


def test_conv_counts_overlapping_ones():
    out, _ = F.conv2d_forward(np.ones((1, 1, 4, 4)), np.ones((1, 1, 3, 3)), pad=1)
    expected = np.array([[4, 6, 6, 4], [6, 9, 9, 6], [6, 9, 9, 6], [4, 6, 6, 4]])
    np.testing.assert_array_equal(out[0, 0], expected)


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out, _ = F.conv2d_forward(x, w, b, stride=2, pad=1)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 4, 3))
    for n in range(2):
        for o in range(4):
            for i in range(4):
                for j in range(3):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("kernel, stride, pad", [(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3)])
def test_conv_gradients(rng, kernel, stride, pad):
    x = rng.standard_normal((1, 2, 9, 8))
    layer = f64_layer(Conv2d(2, 3, kernel, stride, pad, bias=True, rng=rng))
    assert layer_error(layer, x, rng) < 1e-5


def test_conv_linearity(rng):
    w = rng.standard_normal((3, 2, 3, 3))
    x, y = rng.standard_normal((2, 1, 2, 6, 6))
    a, b = 1.7, -0.4
    lhs, _ = F.conv2d_forward(a * x + b * y, w, pad=1)
    rhs = a * F.conv2d_forward(x, w, pad=1)[0] + b * F.conv2d_forward(y, w, pad=1)[0]
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_conv_shape_errors(rng):
    with pytest.raises(ShapeError):
        F.conv2d_forward(rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((1, 3, 3, 3)))
    with pytest.raises(ShapeError):
        F.conv2d_forward(rng.standard_normal((1, 1, 2, 2)), rng.standard_normal((1, 1, 5, 5)))


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 20), w=st.integers(1, 20), k=st.sampled_from([1, 3, 7]),
       stride=st.integers(1, 3), pad=st.integers(0, 3))
def test_conv_shape_formula(h, w, k, stride, pad):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    out, _ = F.conv2d_forward(np.zeros((1, 1, h, w)), np.zeros((2, 1, k, k)), stride=stride, pad=pad)
    assert out.shape == (1, 2, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


# -- batch norm ---------------------------------------------------------------


def test_batchnorm_fixed_point(rng):
    x = rng.standard_normal((64, 3, 4, 4))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    bn = f64_layer(BatchNorm(3))
    out = bn.forward(x, training=True)
    # eps shrinks a unit-variance batch by 1/sqrt(1 + eps)
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-12)
    assert np.all(np.abs(out - x) <= 1e-6 + 5e-6 * np.abs(x))


def test_batchnorm_zero_gamma_gives_beta(rng):
    bn = f64_layer(BatchNorm(3))
    bn.gamma.data[:] = 0
    bn.beta.data[:] = [0.5, -1.0, 2.0]
    out = bn.forward(rng.standard_normal((4, 3, 2, 2)), training=True)
    np.testing.assert_array_equal(out, np.broadcast_to(bn.beta.data[None, :, None, None], out.shape))


def test_batchnorm_train_moments(rng):
    x = rng.standard_normal((8, 4, 5, 5)) * 3 + 7
    out = f64_layer(BatchNorm(4)).forward(x, training=True)
    for c in range(4):
        vals = out[:, c].ravel()
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert abs(mean) < 1e-6
        assert abs(var - 1) < 1e-4


def test_batchnorm_running_stats_update(rng):
    x = rng.standard_normal((6, 2, 3, 3)) + 4
    bn = f64_layer(BatchNorm(2))
    bn.forward(x, training=True)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    n = 6 * 9
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))


def test_batchnorm_eval_is_batch_independent(rng):
    bn = f64_layer(BatchNorm(3))
    bn.running_mean[:] = rng.standard_normal(3)
    bn.running_var[:] = rng.uniform(0.5, 2, 3)
    batch = rng.standard_normal((5, 3, 4, 4))
    whole = bn.forward(batch, training=False)
    alone = bn.forward(batch[2:3], training=False)
    np.testing.assert_array_equal(whole[2:3], alone)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(rng, training):
    bn = f64_layer(BatchNorm(3))
    bn.gamma.data[:] = rng.uniform(0.5, 2, 3)
    bn.beta.data[:] = rng.standard_normal(3)
    bn.running_var[:] = rng.uniform(0.5, 2, 3)
    assert layer_error(bn, rng.standard_normal((3, 3, 4, 5)), rng, training) < 1e-5


def test_batchnorm_degenerate_batch_warns():
    bn = f64_layer(BatchNorm(2))
    with pytest.warns(DegenerateBatchWarning):
        out = bn.forward(np.ones((1, 2, 3, 3)), training=True)
    assert np.all(np.isfinite(out))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        bn.forward(np.ones((2, 2, 3, 3)), training=True)


def test_batchnorm_channel_mismatch():
    with pytest.raises(ShapeError):
        BatchNorm(3).forward(np.zeros((2, 4, 2, 2)), training=True)


# -- relu, pooling, fc --------------------------------------------------------


def test_relu_values():
    out, _ = F.relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out, [0, 0, 2])
    assert not F.relu_forward(-np.abs(np.arange(1.0, 5.0)))[0].any()


def test_relu_gradient(rng):
    x = rng.standard_normal((3, 4))
    x[np.abs(x) < 1e-3] = 0.5
    proj = rng.standard_normal(x.shape)
    out, mask = F.relu_forward(x)
    dx = F.relu_backward(proj, mask)
    numeric = numeric_gradient(lambda: float(np.sum(F.relu_forward(x)[0] * proj)), x)
    assert relative_error(dx, numeric) < 1e-8


def test_global_avg_pool_values(rng):
    out, _ = F.global_avg_pool_forward(np.full((2, 3, 4, 5), 2.5))
    np.testing.assert_array_equal(out, 2.5)
    out, _ = F.global_avg_pool_forward(np.array([1.0, 2, 3, 4]).reshape(1, 1, 2, 2))
    assert out[0, 0] == 2.5


def test_global_avg_pool_gradient(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    proj = rng.standard_normal((2, 3))
    _, shape = F.global_avg_pool_forward(x)
    dx = F.global_avg_pool_backward(proj, shape)
    np.testing.assert_allclose(dx, np.broadcast_to(proj[:, :, None, None] / 20, x.shape))
    numeric = numeric_gradient(lambda: float(np.sum(F.global_avg_pool_forward(x)[0] * proj)), x)
    assert relative_error(dx, numeric) < 1e-8


def test_maxpool_gradient(rng):
    x = rng.standard_normal((2, 2, 7, 9))
    proj = rng.standard_normal((2, 2, 4, 5))
    out, cache = F.maxpool_forward(x)
    assert out.shape == (2, 2, 4, 5)
    dx = F.maxpool_backward(proj, cache)
    numeric = numeric_gradient(lambda: float(np.sum(F.maxpool_forward(x)[0] * proj)), x)
    assert relative_error(dx, numeric) < 1e-8


def test_fc_identity_and_bias(rng):
    fc = f64_layer(Linear(4, 4))
    fc.weight.data[:] = np.eye(4)
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(fc.forward(x), x)
    fc.weight.data[:] = 0
    fc.bias.data[:] = [1, 2, 3, 4]
    np.testing.assert_array_equal(fc.forward(x), np.tile([1.0, 2, 3, 4], (3, 1)))


def test_fc_gradients(rng):
    assert layer_error(f64_layer(Linear(5, 3, rng=rng)), rng.standard_normal((4, 5)), rng) < 1e-5


def test_fc_shape_error(rng):
    with pytest.raises(ShapeError):
        Linear(5, 3).forward(rng.standard_normal((2, 4)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 3), c=st.integers(1, 3),
       h=st.integers(3, 7), w=st.integers(3, 7))
def test_randomized_layer_gradients(seed, n, c, h, w):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w))
    assert layer_error(f64_layer(Conv2d(c, 2, 3, 1 + seed % 2, 1, bias=True, rng=rng)), x, rng) < 1e-5
    bn = f64_layer(BatchNorm(c))
    bn.gamma.data[:] = rng.uniform(0.5, 2, c)
    assert layer_error(bn, x, rng) < 1e-5


# -- tensor, optimizers, checkpoint --------------------------------------------


def test_tensor_invariants():
    t = Tensor(np.zeros((2, 3)))
    assert t.grad.shape == t.shape and t.size == 6
    assert Tensor(np.zeros(3), requires_grad=False).grad is None


def test_sgd_and_adam_zero_lr_leave_params():
    for opt_cls in (SGD, Adam):
        t = Tensor(np.arange(3.0))
        t.grad[:] = 1.0
        opt_cls([t], lr=0.0).step()
        np.testing.assert_array_equal(t.data, np.arange(3.0))


def test_adam_first_step_moves_by_lr():
    t = Tensor(np.zeros(2))
    t.grad[:] = [3.0, -0.5]
    Adam([t], lr=0.1).step()
    np.testing.assert_allclose(t.data, [-0.1, 0.1], rtol=1e-6)


def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {"a.weight": rng.standard_normal((2, 3, 1, 1)).astype(np.float32),
              "b": np.float32([1.5]), "scalar_like": np.ones((1,), np.float32)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, arrays, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    assert list(loaded) == list(arrays)
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])
    raw = path.read_bytes()
    assert raw[:4] == b"SERC"
