import json

import numpy as np
import pytest

from zocertify import gradcheck
from zocertify.numerics import functional as F


@pytest.mark.timeout(120)
@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize(
    "check", gradcheck.COMPOSITE_CHECKS, ids=lambda c: c.__name__
)
def test_composites_match_finite_differences(check, seed):
    result = check(seed)
    assert result.passed, result


@pytest.mark.parametrize("seed", range(5))
def test_cge_is_exact_on_quadratics(seed):
    result = gradcheck.check_cge_quadratic(seed)
    assert result.error <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_chain_rule_reproduces_backprop(seed):
    result = gradcheck.check_chain_rule(seed)
    assert result.error <= 1e-10


@pytest.mark.timeout(300)
def test_rge_mean_aligns_with_gradient():
    result = gradcheck.check_rge_direction(0)
    assert result.measure == "cosine"
    assert result.error >= 0.99


def test_numerical_gradient_restores_input():
    x = np.array([1.0, 2.0, 3.0])
    grad = gradcheck.numerical_gradient(lambda: float((x**2).sum()), x)
    np.testing.assert_allclose(grad, 2.0 * x, rtol=1e-8)
    np.testing.assert_array_equal(x, [1.0, 2.0, 3.0])


def test_relative_error_of_zero_vectors():
    assert gradcheck.relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_corrupted_conv_backward_is_reported(monkeypatch):
    original = F.Conv2d.backward

    def corrupted(self, grad):
        gx, gw, gb = original(self, grad)
        return 2.0 * gx, gw, gb

    monkeypatch.setattr(F.Conv2d, "backward", corrupted)
    result = gradcheck.check_conv2d(0)
    assert not result.passed
    assert result.name == "conv2d"
    assert result.error > result.tolerance


def test_results_are_json_serialisable():
    result = gradcheck.check_relu(0)
    payload = json.loads(json.dumps(result.as_dict()))
    assert payload["name"] == "relu"
    assert payload["passed"] is True


def test_fixture_biases_are_away_from_zero():
    encoder, decoder = gradcheck.small_autoencoder(2)
    for module in (encoder, decoder, gradcheck.small_rdunet(12)):
        for layer in module.layers.values():
            assert np.all(np.abs(layer.biases.data) >= 0.1)


@pytest.mark.timeout(600)
def test_full_suite_passes_for_twenty_seeds():
    results = gradcheck.run_suite(seeds=20)
    failed = [r for r in results if not r.passed]
    assert not failed, failed
    assert {r.seed for r in results} == set(range(20))
