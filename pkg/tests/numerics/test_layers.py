import numpy as np
import pytest

from zocertify import gradcheck
from zocertify.errors import ShapeMismatchError
from zocertify.numerics import functional as F
from zocertify.numerics.params import LayerParams
from zocertify.numerics.tensor import parameter
from zocertify.numerics.tensor import Tensor

SEEDS = range(5)


@pytest.mark.timeout(120)
@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize(
    "check", gradcheck.LAYER_CHECKS, ids=lambda c: getattr(c, "__name__", "check")
)
def test_layer_gradients_match_finite_differences(check, seed):
    result = check(seed)
    assert result.passed, result


def test_conv2d_same_padding_shape(rng):
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    p = LayerParams.conv(3, 5, 3, rng)
    assert F.conv2d(x, p).shape == (2, 5, 8, 8)
    assert F.conv2d(x, p, stride=2, padding=1).shape == (2, 5, 4, 4)


def test_conv2d_matches_direct_sum(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    p = LayerParams.conv(2, 1, 3, rng)
    out = F.conv2d(Tensor(x), p, padding=0).data
    expected = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            expected[i, j] = (x[0, :, i : i + 3, j : j + 3] * p.weights.data[0]).sum()
    np.testing.assert_allclose(out[0, 0], expected, rtol=1e-12, atol=1e-12)


def test_conv2d_transpose_output_size(rng):
    y = Tensor(rng.standard_normal((1, 4, 3, 3)))
    p = LayerParams.conv_transpose(4, 2, 2, 2, rng)
    assert F.conv2d_transpose(y, p, stride=2).shape == (1, 2, 6, 6)


def test_conv2d_transpose_is_adjoint_of_conv2d(rng):
    # <conv(x), y> == <x, conv_transpose(y)> with shared weights, no bias
    p = LayerParams.conv_transpose(3, 2, 2, 2, rng)
    x = rng.standard_normal((1, 2, 6, 6))
    y = rng.standard_normal((1, 3, 3, 3))
    forward = LayerParams("conv", p.weights, parameter(np.zeros(3)))
    lhs = (F.conv2d(Tensor(x), forward, stride=2, padding=0).data * y).sum()
    rhs = (x * F.conv2d_transpose(Tensor(y), p, stride=2).data).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conv2d_rejects_channel_mismatch(rng):
    p = LayerParams.conv(3, 2, 3, rng)
    with pytest.raises(ShapeMismatchError) as e:
        F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), p)
    assert "conv2d" in str(e.value)


def test_maxpool_ties_route_to_first_element():
    x = parameter(np.ones((1, 1, 2, 2)))
    y = F.maxpool2(x)
    y.backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_rejects_odd_sizes():
    with pytest.raises(ShapeMismatchError):
        F.maxpool2(Tensor(np.zeros((1, 1, 3, 4))))


def test_batchnorm_updates_running_statistics(rng):
    p = LayerParams.batchnorm(2)
    x = rng.standard_normal((4, 2, 3, 3)) + 2.0
    F.batchnorm(Tensor(x), p, training=True)
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(p.running_mean, 0.1 * mean)
    np.testing.assert_allclose(p.running_var, 0.9 + 0.1 * var)


def test_batchnorm_eval_leaves_statistics_alone(rng):
    p = LayerParams.batchnorm(2)
    F.batchnorm(Tensor(rng.standard_normal((1, 2, 3, 3))), p, training=False)
    np.testing.assert_array_equal(p.running_mean, np.zeros(2))
    np.testing.assert_array_equal(p.running_var, np.ones(2))


def test_batchnorm_training_needs_two_examples(rng):
    p = LayerParams.batchnorm(2)
    with pytest.raises(ValueError):
        F.batchnorm(Tensor(rng.standard_normal((1, 2, 3, 3))), p, training=True)


def test_softmax_is_shift_stable():
    x = Tensor(np.array([[1000.0, 1000.0, 999.0]]))
    p = F.softmax(x).data
    assert np.all(np.isfinite(p))
    assert p.sum() == pytest.approx(1.0)
    assert p[0, 0] == pytest.approx(p[0, 1])


def test_cross_entropy_of_uniform_logits():
    logits = Tensor(np.zeros((2, 4)))
    assert float(F.cross_entropy(logits, [0, 3]).data) == pytest.approx(np.log(4.0))


def test_squared_error_is_batch_mean(rng):
    x = rng.standard_normal((3, 2))
    target = np.zeros((3, 2))
    value = float(F.squared_error(Tensor(x), target).data)
    assert value == pytest.approx((x**2).sum() / 3)


def test_concat_splits_gradient():
    a = parameter(np.zeros((1, 1, 2, 2)))
    b = parameter(np.zeros((1, 2, 2, 2)))
    out = F.concat(a, b, axis=1)
    assert out.shape == (1, 3, 2, 2)
    seed = np.arange(12.0).reshape(1, 3, 2, 2)
    out.backward(seed)
    np.testing.assert_array_equal(a.grad, seed[:, :1])
    np.testing.assert_array_equal(b.grad, seed[:, 1:])
