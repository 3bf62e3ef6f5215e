import numpy as np
import pytest

from zocertify.errors import EstimateAbortedError
from zocertify.errors import ShapeMismatchError
from zocertify.numerics import functional as F
from zocertify.numerics.params import LayerParams
from zocertify.numerics.tensor import Tensor
from zocertify.zo.estimators import cge_estimate
from zocertify.zo.estimators import chain_to_params
from zocertify.zo.estimators import Directions
from zocertify.zo.estimators import estimate
from zocertify.zo.estimators import rge_estimate
from zocertify.zo.estimators import sample_directions
from zocertify.zo.estimators import ZOConfig
from zocertify.zo.estimators import ZOMethod


def quadratic(rng, d):
    a = rng.standard_normal((d, d))
    a = a @ a.T
    b = rng.standard_normal(d)
    return (lambda z: float(z @ a @ z + b @ z)), (lambda z: 2.0 * a @ z + b)


def test_cge_matches_quadratic_gradient(rng):
    loss, gradient = quadratic(rng, 6)
    z0 = rng.standard_normal(6)
    result = cge_estimate(loss, z0, ZOConfig(method=ZOMethod.CGE))
    np.testing.assert_allclose(result.vector, gradient(z0), atol=1e-8)
    assert result.queries_spent == 13
    assert result.size == 6


def test_unhalved_cge_doubles_the_estimate(rng):
    loss, gradient = quadratic(rng, 4)
    z0 = rng.standard_normal(4)
    cfg = ZOConfig(method=ZOMethod.CGE, unhalved_cge=True)
    np.testing.assert_allclose(
        cge_estimate(loss, z0, cfg).vector, 2.0 * gradient(z0), atol=1e-7
    )


def test_cge_keeps_the_point_shape(rng):
    z0 = rng.standard_normal((2, 3))
    result = cge_estimate(lambda z: float((z**2).sum()), z0, ZOConfig(method=ZOMethod.CGE))
    assert result.vector.shape == (2, 3)
    np.testing.assert_allclose(result.vector, 2.0 * z0, atol=1e-9)


def test_rge_spends_q_plus_one_evaluations(rng):
    calls = []

    def loss(z):
        calls.append(1)
        return float(z.sum())

    cfg = ZOConfig(q=7)
    result = rge_estimate(loss, np.zeros(5), cfg, rng=rng)
    assert result.queries_spent == 8
    assert len(calls) == 8
    calls.clear()
    rge_estimate(loss, np.zeros(5), cfg, rng=rng, base_value=0.0)
    assert len(calls) == 7


def test_rge_is_reproducible_from_seed():
    cfg = ZOConfig(q=5, seed=11)
    loss = lambda z: float(np.sin(z).sum())
    first = rge_estimate(loss, np.ones(4), cfg)
    second = rge_estimate(loss, np.ones(4), cfg)
    np.testing.assert_array_equal(first.vector, second.vector)


@pytest.mark.parametrize("directions", list(Directions))
def test_rge_is_unbiased_for_linear_losses(directions):
    rng = np.random.default_rng(3)
    a = rng.standard_normal(8)
    cfg = ZOConfig(q=50, xi=1e-3, directions=directions)
    mean = np.mean(
        [
            rge_estimate(lambda z: float(a @ z), np.zeros(8), cfg, rng=rng).vector
            for _ in range(400)
        ],
        axis=0,
    )
    cosine = mean @ a / (np.linalg.norm(mean) * np.linalg.norm(a))
    assert cosine > 0.98
    assert np.linalg.norm(mean) == pytest.approx(np.linalg.norm(a), rel=0.15)


def test_sphere_directions_have_unit_norm(rng):
    u = sample_directions(rng, 10, 6, Directions.SPHERE)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0)


def test_batched_and_single_point_evaluation_agree(rng):
    cfg = ZOConfig(q=4, seed=2)
    single = rge_estimate(lambda z: float((z**2).sum()), np.ones(3), cfg)
    batched = rge_estimate(
        lambda zs: (zs**2).sum(axis=1), np.ones(3), cfg, batched=True
    )
    np.testing.assert_allclose(single.vector, batched.vector, rtol=1e-12)


def test_non_finite_loss_aborts_the_estimate(rng):
    def loss(z):
        return np.nan if z[0] > 0 else 0.0

    with pytest.raises(EstimateAbortedError):
        cge_estimate(loss, np.zeros(2), ZOConfig(method=ZOMethod.CGE))
    with pytest.raises(EstimateAbortedError):
        rge_estimate(loss, np.zeros(2), ZOConfig(), base_value=np.inf)


def test_estimate_dispatches_on_method(rng):
    loss = lambda z: float((z**2).sum())
    result = estimate(loss, np.ones(3), ZOConfig(method=ZOMethod.CGE))
    assert result.method is ZOMethod.CGE
    result = estimate(loss, np.ones(3), ZOConfig(method=ZOMethod.RGE, q=2))
    assert result.method is ZOMethod.RGE


def test_config_validation():
    assert ZOConfig().validate() == []
    errors = ZOConfig(q=0, xi=-1.0).validate()
    assert len(errors) == 2


def test_chain_to_params_is_vector_jacobian_product(rng):
    x = Tensor(rng.standard_normal((2, 4)))
    p = LayerParams.dense(4, 3, rng)
    g = rng.standard_normal((2, 3))
    p.weights.grad = np.ones_like(p.weights.data)
    out = F.dense(x, p)
    grads = chain_to_params(g, out, [p.weights, p.biases])
    np.testing.assert_allclose(grads[0], g.T @ x.data)
    np.testing.assert_allclose(grads[1], g.sum(axis=0))


def test_chain_to_params_checks_shape(rng):
    p = LayerParams.dense(4, 3, rng)
    out = F.dense(Tensor(np.zeros((2, 4))), p)
    with pytest.raises(ShapeMismatchError):
        chain_to_params(np.zeros((2, 4)), out, [p.weights])
