"""
Finite-difference and estimator oracles.

Every differentiable operation is compared against central differences
(step 1e-5, float64). The same checks back the `gradcheck` command and the
test suite.
"""
import logging
from dataclasses import asdict
from dataclasses import dataclass
from typing import Callable
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from .blackbox import WhiteBoxHandle
from .models.autoencoder import AEConfig
from .models.autoencoder import Decoder
from .models.autoencoder import Encoder
from .models.classifier import Classifier
from .models.classifier import ClassifierConfig
from .models.rdunet import RDUNet
from .models.rdunet import RDUNetConfig
from .numerics import functional as F
from .numerics.params import LayerParams
from .numerics.tensor import no_grad
from .numerics.tensor import Tensor
from .zo.estimators import cge_estimate
from .zo.estimators import chain_to_params
from .zo.estimators import rge_estimate
from .zo.estimators import ZOConfig
from .zo.estimators import ZOMethod
from .zo.trainer import fo_ds_objective

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
LAYER_TOLERANCE = 1e-4
COMPOSITE_TOLERANCE = 1e-3
CHAIN_TOLERANCE = 1e-10
CGE_TOLERANCE = 1e-8
RGE_MIN_COSINE = 0.99
COMPOSITE_COORDINATES = 48


@dataclass(frozen=True)
class CheckResult:
    name: str
    seed: int
    error: float
    tolerance: float
    passed: bool
    # "relative" or "absolute" error, or "cosine" for direction checks
    measure: str = "relative"

    def as_dict(self):
        return asdict(self)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def numerical_gradient(
    f: Callable[[], float],
    x: np.ndarray,
    eps: float = FD_STEP,
    coordinates: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Central differences of the scalar f() with respect to the array x,
    which is perturbed in place and restored. With `coordinates`, only
    those flat indices are evaluated and the result has their length.
    """
    flat = x.reshape(-1)
    indices = range(flat.size) if coordinates is None else coordinates
    grad = np.zeros(len(indices))
    for out, i in enumerate(indices):
        original = flat[i]
        flat[i] = original + eps
        plus = f()
        flat[i] = original - eps
        minus = f()
        flat[i] = original
        grad[out] = (plus - minus) / (2.0 * eps)
    return grad


def gradient_check(
    name: str,
    forward: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    rng: np.random.Generator,
    tolerance: float,
    seed: int = 0,
    max_coordinates: Optional[int] = None,
) -> CheckResult:
    """
    Compares reverse-mode gradients of <forward(), R> for a random R with
    central differences over every entry of `inputs` (or a random sample
    of `max_coordinates` entries).
    """
    out = forward()
    projection = rng.standard_normal(out.shape)
    for t in inputs:
        t.zero_grad()
    out.backward(projection)
    analytic = np.concatenate(
        [
            (t.grad if t.grad is not None else np.zeros_like(t.data)).ravel()
            for t in inputs
        ]
    )

    def scalar() -> float:
        with no_grad():
            return float((forward().data * projection).sum())

    sizes = [t.size for t in inputs]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    if max_coordinates is not None and max_coordinates < offsets[-1]:
        chosen = np.sort(rng.choice(offsets[-1], max_coordinates, replace=False))
    else:
        chosen = np.arange(offsets[-1])
    numeric = []
    for k, t in enumerate(inputs):
        local = chosen[(chosen >= offsets[k]) & (chosen < offsets[k + 1])]
        numeric.append(
            numerical_gradient(scalar, t.data, coordinates=local - offsets[k])
        )
    error = relative_error(analytic[chosen], np.concatenate(numeric))
    return CheckResult(name, seed, error, tolerance, error <= tolerance)


def _leaf(rng, shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _away_from_zero(rng, shape) -> Tensor:
    magnitude = rng.uniform(0.1, 1.0, size=shape)
    return Tensor(magnitude * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)


def _offset_biases(module, rng: np.random.Generator):
    """
    Gives every bias (and batch-norm beta) a magnitude in [0.1, 1], so that
    dead ReLU units and constant batch-norm channels do not leave later
    activations exactly on a ReLU kink.
    """
    for layer in module.layers.values():
        shape = layer.biases.data.shape
        magnitude = rng.uniform(0.1, 1.0, size=shape)
        layer.biases.data[...] = magnitude * rng.choice([-1.0, 1.0], size=shape)
    return module


def _distinct(rng, shape) -> Tensor:
    """Entries at least 0.1 apart, so no max window is tied."""
    values = rng.permutation(int(np.prod(shape))).astype(np.float64) * 0.1
    return Tensor(values.reshape(shape), requires_grad=True)


def check_conv2d(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (2, 2, 5, 5))
    p = LayerParams.conv(2, 3, 3, rng)
    p.biases.data[...] = rng.standard_normal(3)
    return gradient_check(
        "conv2d",
        lambda: F.conv2d(x, p, stride=1, padding=1),
        [x, p.weights, p.biases],
        rng,
        LAYER_TOLERANCE,
        seed,
    )


def check_conv2d_strided(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (2, 2, 6, 6))
    p = LayerParams.conv(2, 2, 3, rng)
    return gradient_check(
        "conv2d_strided",
        lambda: F.conv2d(x, p, stride=2, padding=1),
        [x, p.weights, p.biases],
        rng,
        LAYER_TOLERANCE,
        seed,
    )


def check_conv2d_transpose(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    y = _leaf(rng, (2, 4, 3, 3))
    p = LayerParams.conv_transpose(4, 2, 2, 2, rng)
    p.biases.data[...] = rng.standard_normal(2)
    return gradient_check(
        "conv2d_transpose",
        lambda: F.conv2d_transpose(y, p, stride=2),
        [y, p.weights, p.biases],
        rng,
        LAYER_TOLERANCE,
        seed,
    )


def check_maxpool2(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _distinct(rng, (2, 2, 4, 4))
    return gradient_check(
        "maxpool2", lambda: F.maxpool2(x), [x], rng, LAYER_TOLERANCE, seed
    )


def check_batchnorm(seed: int, training: bool = True) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (3, 2, 3, 3))
    p = LayerParams.batchnorm(2)
    p.weights.data[...] = rng.uniform(0.5, 1.5, 2)
    p.biases.data[...] = rng.standard_normal(2)
    p.running_mean[...] = rng.standard_normal(2)
    p.running_var[...] = rng.uniform(0.5, 2.0, 2)
    name = "batchnorm_train" if training else "batchnorm_eval"
    return gradient_check(
        name,
        lambda: F.batchnorm(x, p, training=training),
        [x, p.weights, p.biases],
        rng,
        LAYER_TOLERANCE,
        seed,
    )


def check_relu(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _away_from_zero(rng, (3, 7))
    return gradient_check("relu", lambda: F.relu(x), [x], rng, LAYER_TOLERANCE, seed)


def check_dense(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (4, 6))
    p = LayerParams.dense(6, 3, rng)
    p.biases.data[...] = rng.standard_normal(3)
    return gradient_check(
        "dense",
        lambda: F.dense(x, p),
        [x, p.weights, p.biases],
        rng,
        LAYER_TOLERANCE,
        seed,
    )


def check_softmax(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (3, 5), 2.0)
    return gradient_check(
        "softmax", lambda: F.softmax(x), [x], rng, LAYER_TOLERANCE, seed
    )


def check_soft_cross_entropy(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    logits = _leaf(rng, (4, 3))
    target = F.stable_softmax(rng.standard_normal((4, 3)))
    return gradient_check(
        "soft_cross_entropy",
        lambda: F.soft_cross_entropy_with_logits(logits, target),
        [logits],
        rng,
        LAYER_TOLERANCE,
        seed,
    )


def check_composite(seed: int) -> CheckResult:
    """conv -> relu -> dense."""
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (2, 1, 4, 4))
    conv = LayerParams.conv(1, 2, 3, rng)
    head = LayerParams.dense(32, 3, rng)

    def forward():
        return F.dense(F.flatten(F.relu(F.conv2d(x, conv))), head)

    return gradient_check(
        "composite_conv_relu_dense",
        forward,
        [x, conv.weights, conv.biases, head.weights, head.biases],
        rng,
        COMPOSITE_TOLERANCE,
        seed,
    )


def small_rdunet(seed: int) -> RDUNet:
    config = RDUNetConfig(
        input_channels=1,
        base_channels=2,
        depth=2,
        image_size=8,
        zero_init_head=False,
    )
    rng = np.random.default_rng(seed)
    return _offset_biases(RDUNet(config, rng), rng)


def check_rdunet(seed: int, max_coordinates: Optional[int] = COMPOSITE_COORDINATES) -> CheckResult:
    rng = np.random.default_rng(seed)
    denoiser = small_rdunet(seed)
    x = Tensor(rng.uniform(0.0, 1.0, (2, 1, 8, 8)))
    return gradient_check(
        "rdunet",
        lambda: denoiser(x, training=True)[1],
        denoiser.parameters(),
        rng,
        COMPOSITE_TOLERANCE,
        seed,
        max_coordinates,
    )


def small_autoencoder(seed: int):
    config = AEConfig(input_channels=1, image_size=8, latent_dim=6, widths=(2, 3))
    rng = np.random.default_rng(seed)
    encoder = _offset_biases(Encoder(config, rng), rng)
    return encoder, _offset_biases(Decoder(config, rng), rng)


def check_encoder(seed: int, max_coordinates: Optional[int] = COMPOSITE_COORDINATES) -> CheckResult:
    rng = np.random.default_rng(seed)
    encoder, _ = small_autoencoder(seed)
    x = _leaf(rng, (2, 1, 8, 8), 0.5)
    return gradient_check(
        "encoder",
        lambda: encoder(x, training=True),
        [x] + encoder.parameters(),
        rng,
        COMPOSITE_TOLERANCE,
        seed,
        max_coordinates,
    )


def check_decoder(seed: int, max_coordinates: Optional[int] = COMPOSITE_COORDINATES) -> CheckResult:
    rng = np.random.default_rng(seed)
    _, decoder = small_autoencoder(seed)
    z = _leaf(rng, (2, 6))
    return gradient_check(
        "decoder",
        lambda: decoder(z),
        [z] + decoder.parameters(),
        rng,
        COMPOSITE_TOLERANCE,
        seed,
        max_coordinates,
    )


def small_classifier(seed: int) -> Classifier:
    config = ClassifierConfig(input_channels=1, image_size=8, num_classes=3, widths=(2, 3))
    rng = np.random.default_rng(seed)
    return _offset_biases(Classifier(config, rng), rng)


def check_fo_ds_objective(seed: int, max_coordinates: Optional[int] = COMPOSITE_COORDINATES) -> CheckResult:
    rng = np.random.default_rng(seed)
    denoiser = small_rdunet(seed)
    whitebox = WhiteBoxHandle(small_classifier(seed + 1))
    x = rng.uniform(0.0, 1.0, (2, 1, 8, 8))
    x_star = x + 0.25 * rng.standard_normal(x.shape)
    p_clean = whitebox.predict_proba(x)
    return gradient_check(
        "fo_ds_objective",
        lambda: fo_ds_objective(denoiser, whitebox, x, x_star, p_clean, True)[0],
        denoiser.parameters(),
        rng,
        COMPOSITE_TOLERANCE,
        seed,
        max_coordinates,
    )


def check_chain_rule(seed: int) -> CheckResult:
    """
    Seeding reverse mode at the denoiser output with the exact gradient of a
    downstream loss reproduces end-to-end backpropagation.
    """
    rng = np.random.default_rng(seed)
    denoiser = small_rdunet(seed)
    head = LayerParams.dense(64, 3, rng)
    target = F.stable_softmax(rng.standard_normal((2, 3)))
    x = Tensor(rng.uniform(0.0, 1.0, (2, 1, 8, 8)))
    params = denoiser.parameters()

    def downstream(x_hat: Tensor) -> Tensor:
        return F.soft_cross_entropy_with_logits(F.dense(F.flatten(x_hat), head), target)

    denoiser.zero_grad()
    _, x_hat = denoiser(x, training=False)
    downstream(x_hat).backward()
    end_to_end = np.concatenate([p.grad.ravel() for p in params])

    leaf = Tensor(x_hat.data.copy(), requires_grad=True)
    downstream(leaf).backward()
    _, x_hat = denoiser(x, training=False)
    chained = chain_to_params(leaf.grad, x_hat, params)
    error = relative_error(end_to_end, np.concatenate([g.ravel() for g in chained]))
    return CheckResult("chain_to_params", seed, error, CHAIN_TOLERANCE, error <= CHAIN_TOLERANCE)


def check_cge_quadratic(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    d = 8
    a = rng.standard_normal((d, d))
    a = a @ a.T
    b = rng.standard_normal(d)
    z0 = rng.standard_normal(d)

    def loss_at(z):
        return float(z @ a @ z + b @ z)

    result = cge_estimate(loss_at, z0, ZOConfig(method=ZOMethod.CGE, xi=0.005))
    error = float(np.max(np.abs(result.vector - (2.0 * a @ z0 + b))))
    return CheckResult(
        "cge_quadratic", seed, error, CGE_TOLERANCE, error <= CGE_TOLERANCE, "absolute"
    )


def check_rge_direction(seed: int, estimates: int = 1000, q: int = 100) -> CheckResult:
    """Mean of many RGE estimates of a smooth function points along the gradient."""
    rng = np.random.default_rng(seed)
    d = 10
    scales = rng.uniform(0.5, 2.0, d)
    z0 = rng.standard_normal(d)
    true_gradient = 2.0 * scales * z0 + np.cos(z0)

    def loss_at(points):
        return (scales * points**2).sum(axis=-1) + np.sin(points).sum(axis=-1)

    cfg = ZOConfig(method=ZOMethod.RGE, q=q, xi=1e-4)
    total = np.zeros(d)
    for _ in range(estimates):
        total += rge_estimate(loss_at, z0, cfg, rng=rng, batched=True).vector
    mean = total / estimates
    cosine = float(
        mean @ true_gradient / (np.linalg.norm(mean) * np.linalg.norm(true_gradient))
    )
    return CheckResult(
        "rge_direction", seed, cosine, RGE_MIN_COSINE, cosine >= RGE_MIN_COSINE, "cosine"
    )


LAYER_CHECKS = (
    check_conv2d,
    check_conv2d_strided,
    check_conv2d_transpose,
    check_maxpool2,
    check_batchnorm,
    lambda seed: check_batchnorm(seed, training=False),
    check_relu,
    check_dense,
    check_softmax,
    check_soft_cross_entropy,
    check_composite,
    check_cge_quadratic,
    check_chain_rule,
)

COMPOSITE_CHECKS = (
    check_rdunet,
    check_encoder,
    check_decoder,
    check_fo_ds_objective,
)


def run_suite(seeds: int = 20) -> List[CheckResult]:
    results = []
    for seed in range(seeds):
        for check in LAYER_CHECKS + COMPOSITE_CHECKS:
            results.append(check(seed))
    results.append(check_rge_direction(0))
    failed = [r for r in results if not r.passed]
    logger.info(
        f"gradcheck: {len(results) - len(failed)}/{len(results)} checks passed"
    )
    for r in failed:
        logger.error(
            f"gradcheck failure: {r.name} (seed {r.seed}) {r.measure} {r.error:.3e} vs {r.tolerance:.1e}"
        )
    return results
