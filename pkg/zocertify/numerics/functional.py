"""
Differentiable layer operations on Tensor.

Convolutions are computed as window views times weights; their input
gradients are scattered back one kernel offset at a time.
"""
import logging
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..const import BN_EPSILON_DEFAULT_VALUE
from ..const import BN_MOMENTUM_DEFAULT_VALUE
from ..errors import ShapeMismatchError
from .tensor import Function
from .tensor import Tensor

logger = logging.getLogger(__name__)


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(
        x, ((0, 0), (0, 0), (padding, padding), (padding, padding))
    )


def _crop(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def _windows(xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C, H_out, W_out, k, k) strided view."""
    view = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def _correlate(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    windows = _windows(xp, w.shape[2], stride)
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _scatter(
    g: np.ndarray, w: np.ndarray, padded_shape, stride: int
) -> np.ndarray:
    """Adjoint of _correlate with respect to its input."""
    kernel = w.shape[2]
    _, _, out_h, out_w = g.shape
    dxp = np.zeros(padded_shape, dtype=np.float64)
    for i in range(kernel):
        for j in range(kernel):
            contribution = np.einsum("nohw,oc->nchw", g, w[:, :, i, j])
            dxp[
                :,
                :,
                i : i + stride * out_h : stride,
                j : j + stride * out_w : stride,
            ] += contribution
    return dxp


def _weight_grad(
    g: np.ndarray, xp: np.ndarray, kernel: int, stride: int
) -> np.ndarray:
    windows = _windows(xp, kernel, stride)
    return np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))


def _check_conv_shapes(operation, x, w, b, in_axis):
    if x.ndim != 4:
        raise ShapeMismatchError(
            operation, ("N", w.shape[in_axis], "H", "W"), x.shape
        )
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatchError(operation, ("O", "C", "k", "k"), w.shape)
    if x.shape[1] != w.shape[in_axis]:
        raise ShapeMismatchError(
            operation,
            (x.shape[0], w.shape[in_axis]) + x.shape[2:],
            x.shape,
        )
    out_axis = 1 - in_axis
    if b.shape != (w.shape[out_axis],):
        raise ShapeMismatchError(
            f"{operation} bias", (w.shape[out_axis],), b.shape
        )


class Conv2d(Function):
    def forward(self, x, w, b, stride=1, padding=0):
        _check_conv_shapes("conv2d", x, w, b, in_axis=1)
        kernel = w.shape[2]
        xp = _pad(x, padding)
        if xp.shape[2] < kernel or xp.shape[3] < kernel:
            raise ShapeMismatchError(
                "conv2d padded input",
                (x.shape[0], x.shape[1], kernel, kernel),
                xp.shape,
            )
        self.xp = xp
        self.w = w
        self.stride = stride
        self.padding = padding
        return _correlate(xp, w, stride) + b[None, :, None, None]

    def backward(self, grad):
        gx = _crop(
            _scatter(grad, self.w, self.xp.shape, self.stride), self.padding
        )
        gw = _weight_grad(grad, self.xp, self.w.shape[2], self.stride)
        gb = grad.sum(axis=(0, 2, 3))
        return gx, gw, gb


class Conv2dTranspose(Function):
    """
    Input-adjoint of Conv2d for weights of shape (O, C, k, k): maps O input
    channels to C output channels, output size stride*(H-1)+k-2*padding.
    """

    def forward(self, y, w, b, stride=2, padding=0):
        _check_conv_shapes("conv2d_transpose", y, w, b, in_axis=0)
        kernel = w.shape[2]
        n, _, h, width = y.shape
        padded_shape = (
            n,
            w.shape[1],
            stride * (h - 1) + kernel,
            stride * (width - 1) + kernel,
        )
        self.y = y
        self.w = w
        self.stride = stride
        self.padding = padding
        out = _crop(_scatter(y, w, padded_shape, stride), padding)
        return out + b[None, :, None, None]

    def backward(self, grad):
        gpad = _pad(grad, self.padding)
        gy = _correlate(gpad, self.w, self.stride)
        gw = _weight_grad(self.y, gpad, self.w.shape[2], self.stride)
        gb = grad.sum(axis=(0, 2, 3))
        return gy, gw, gb


class MaxPool2(Function):
    def forward(self, x):
        if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeMismatchError(
                "maxpool2 (even spatial dims required)",
                (x.shape[0], x.shape[1], "2m", "2n") if x.ndim == 4 else (),
                x.shape,
            )
        n, c, h, w = x.shape
        self.shape = x.shape
        blocks = (
            x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )
        # argmax returns the first maximal element in row-major window order
        self.argmax = blocks.argmax(axis=-1)
        return np.take_along_axis(blocks, self.argmax[..., None], -1)[..., 0]

    def backward(self, grad):
        n, c, h, w = self.shape
        routed = np.zeros(grad.shape + (4,), dtype=np.float64)
        np.put_along_axis(routed, self.argmax[..., None], grad[..., None], -1)
        gx = (
            routed.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (gx,)


class BatchNorm(Function):
    def forward(
        self,
        x,
        gamma,
        beta,
        running_mean=None,
        running_var=None,
        training=False,
        momentum=BN_MOMENTUM_DEFAULT_VALUE,
        epsilon=BN_EPSILON_DEFAULT_VALUE,
    ):
        if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
            raise ShapeMismatchError(
                "batchnorm", ("N", gamma.shape[0], "H", "W"), x.shape
            )
        self.training = training
        self.gamma = gamma
        if training:
            if x.shape[0] < 2:
                raise ValueError(
                    f"batchnorm in training mode needs a batch of at least 2, got {x.shape[0]}"
                )
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            count = x.shape[0] * x.shape[2] * x.shape[3]
            if running_mean is not None:
                running_mean *= 1.0 - momentum
                running_mean += momentum * mean
            if running_var is not None:
                running_var *= 1.0 - momentum
                running_var += momentum * var * count / (count - 1)
        else:
            mean = running_mean
            var = running_var
        self.inv_std = 1.0 / np.sqrt(var + epsilon)
        self.x_hat = (x - mean[None, :, None, None]) * self.inv_std[
            None, :, None, None
        ]
        return (
            gamma[None, :, None, None] * self.x_hat + beta[None, :, None, None]
        )

    def backward(self, grad):
        axes = (0, 2, 3)
        ggamma = (grad * self.x_hat).sum(axis=axes)
        gbeta = grad.sum(axis=axes)
        gx_hat = grad * self.gamma[None, :, None, None]
        inv_std = self.inv_std[None, :, None, None]
        if not self.training:
            return gx_hat * inv_std, ggamma, gbeta
        count = grad.shape[0] * grad.shape[2] * grad.shape[3]
        gx = (
            inv_std
            / count
            * (
                count * gx_hat
                - gx_hat.sum(axis=axes, keepdims=True)
                - self.x_hat * (gx_hat * self.x_hat).sum(axis=axes, keepdims=True)
            )
        )
        return gx, ggamma, gbeta


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Dense(Function):
    def forward(self, x, w, b):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ShapeMismatchError(
                "dense", (x.shape[0] if x.ndim else "N", w.shape[1]), x.shape
            )
        if b.shape != (w.shape[0],):
            raise ShapeMismatchError("dense bias", (w.shape[0],), b.shape)
        self.x = x
        self.w = w
        return x @ w.T + b

    def backward(self, grad):
        return grad @ self.w, grad.T @ self.x, grad.sum(axis=0)


def stable_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class Softmax(Function):
    def forward(self, x):
        self.out = stable_softmax(x)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


class SoftCrossEntropyWithLogits(Function):
    """Batch mean of -sum(target * log_softmax(logits))."""

    def forward(self, logits, target=None):
        target = np.asarray(target, dtype=np.float64)
        if logits.ndim != 2 or target.shape != logits.shape:
            raise ShapeMismatchError(
                "cross_entropy target", logits.shape, target.shape
            )
        self.target = target
        self.probs = stable_softmax(logits)
        return np.asarray(
            -(target * log_softmax(logits)).sum() / logits.shape[0]
        )

    def backward(self, grad):
        batch = self.target.shape[0]
        mass = self.target.sum(axis=-1, keepdims=True)
        return (grad * (self.probs * mass - self.target) / batch,)


class SquaredError(Function):
    """Batch mean of the per-example squared L2 distance to a fixed target."""

    def forward(self, x, target=None):
        target = np.asarray(target, dtype=np.float64)
        if target.shape != x.shape:
            raise ShapeMismatchError("squared_error", x.shape, target.shape)
        self.diff = x - target
        return np.asarray((self.diff**2).sum() / x.shape[0])

    def backward(self, grad):
        return (grad * 2.0 * self.diff / self.diff.shape[0],)


class Add(Function):
    def forward(self, a, b):
        if a.shape != b.shape:
            raise ShapeMismatchError("add", a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        if a.shape != b.shape:
            raise ShapeMismatchError("sub", a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Scale(Function):
    def forward(self, a, factor=1.0):
        self.factor = factor
        return a * factor

    def backward(self, grad):
        return (grad * self.factor,)


class Total(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.asarray(a.sum())

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape=None):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Concat(Function):
    def forward(self, *arrays, axis=1):
        reference = arrays[0].shape
        for a in arrays[1:]:
            if (
                a.ndim != len(reference)
                or a.shape[:axis] != reference[:axis]
                or a.shape[axis + 1 :] != reference[axis + 1 :]
            ):
                raise ShapeMismatchError("concat", reference, a.shape)
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def conv2d(x: Tensor, params, stride: int = 1, padding: int = 1) -> Tensor:
    return Conv2d.apply(
        x, params.weights, params.biases, stride=stride, padding=padding
    )


def conv2d_transpose(
    x: Tensor, params, stride: int = 2, padding: int = 0
) -> Tensor:
    return Conv2dTranspose.apply(
        x, params.weights, params.biases, stride=stride, padding=padding
    )


def maxpool2(x: Tensor) -> Tensor:
    return MaxPool2.apply(x)


def batchnorm(x: Tensor, params, training: bool) -> Tensor:
    return BatchNorm.apply(
        x,
        params.weights,
        params.biases,
        running_mean=params.running_mean,
        running_var=params.running_var,
        training=training,
        momentum=params.momentum,
        epsilon=params.epsilon,
    )


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def dense(x: Tensor, params) -> Tensor:
    return Dense.apply(x, params.weights, params.biases)


def softmax(x: Tensor) -> Tensor:
    return Softmax.apply(x)


def soft_cross_entropy_with_logits(logits: Tensor, target) -> Tensor:
    return SoftCrossEntropyWithLogits.apply(logits, target=target)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    one_hot = np.eye(logits.shape[-1])[labels]
    return SoftCrossEntropyWithLogits.apply(logits, target=one_hot)


def squared_error(x: Tensor, target) -> Tensor:
    return SquaredError.apply(x, target=target)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def scale(a: Tensor, factor: float) -> Tensor:
    return Scale.apply(a, factor=factor)


def total(a: Tensor) -> Tensor:
    return Total.apply(a)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def concat(*tensors: Tensor, axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))
