import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from ..const import BN_EPSILON_DEFAULT_VALUE
from ..const import BN_MOMENTUM_DEFAULT_VALUE
from ..const import LR_DECAY_FACTOR
from ..errors import NonFiniteGradientError
from ..errors import ShapeMismatchError
from .tensor import parameter
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class LayerParams:
    """
    Trainable weights and biases of one layer.

    Batch-norm layers store gamma in `weights`, beta in `biases` and carry
    running statistics, which are state but not trained by gradient.
    """

    kind: str
    weights: Tensor
    biases: Tensor
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    momentum: float = BN_MOMENTUM_DEFAULT_VALUE
    epsilon: float = BN_EPSILON_DEFAULT_VALUE

    def __post_init__(self):
        if self.kind == "batchnorm":
            if not self.epsilon > 0:
                raise ValueError(
                    f"batch-norm epsilon should be positive, got {self.epsilon}"
                )
            if not 0 < self.momentum < 1:
                raise ValueError(
                    f"batch-norm momentum should be in (0, 1), got {self.momentum}"
                )

    @classmethod
    def conv(
        cls,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
    ) -> "LayerParams":
        fan_in = in_channels * kernel * kernel
        w = rng.normal(
            0.0,
            np.sqrt(2.0 / fan_in),
            size=(out_channels, in_channels, kernel, kernel),
        )
        return cls("conv", parameter(w), parameter(np.zeros(out_channels)))

    @classmethod
    def conv_transpose(
        cls,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int,
        rng: np.random.Generator,
    ) -> "LayerParams":
        # each output pixel sees (kernel // stride)^2 taps per input channel
        fan_in = in_channels * max(1, (kernel // stride) ** 2)
        w = rng.normal(
            0.0,
            np.sqrt(2.0 / fan_in),
            size=(in_channels, out_channels, kernel, kernel),
        )
        return cls(
            "conv_transpose", parameter(w), parameter(np.zeros(out_channels))
        )

    @classmethod
    def dense(
        cls, in_features: int, out_features: int, rng: np.random.Generator
    ) -> "LayerParams":
        w = rng.normal(
            0.0, np.sqrt(2.0 / in_features), size=(out_features, in_features)
        )
        return cls("dense", parameter(w), parameter(np.zeros(out_features)))

    @classmethod
    def batchnorm(
        cls,
        channels: int,
        momentum: float = BN_MOMENTUM_DEFAULT_VALUE,
        epsilon: float = BN_EPSILON_DEFAULT_VALUE,
    ) -> "LayerParams":
        return cls(
            "batchnorm",
            parameter(np.ones(channels)),
            parameter(np.zeros(channels)),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            momentum=momentum,
            epsilon=epsilon,
        )

    def trainable(self) -> List[Tensor]:
        return [self.weights, self.biases]

    def state(self) -> Dict[str, np.ndarray]:
        arrays = {"weights": self.weights.data, "biases": self.biases.data}
        if self.running_mean is not None:
            arrays["running_mean"] = self.running_mean
            arrays["running_var"] = self.running_var
        return arrays

    def load_state(self, arrays: Dict[str, np.ndarray], prefix: str = ""):
        for name, current in self.state().items():
            if name not in arrays:
                raise KeyError(f"Missing state entry '{prefix}{name}'")
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != current.shape:
                raise ShapeMismatchError(
                    f"load {prefix}{name}", current.shape, value.shape
                )
            current[...] = value

    def zero_grad(self):
        for t in self.trainable():
            t.zero_grad()


def sgd_step(
    tensors: Sequence[Tensor],
    learning_rate: float,
    gradients: Optional[Sequence[Optional[np.ndarray]]] = None,
) -> None:
    """
    Applies theta <- theta - lr * g once to every tensor.

    Gradients default to each tensor's accumulated .grad; a tensor without a
    gradient is left unchanged. The whole step is rejected before any
    mutation when a gradient is misshapen or non-finite.
    """
    if gradients is None:
        gradients = [t.grad for t in tensors]
    if len(gradients) != len(tensors):
        raise ValueError(
            f"Got {len(gradients)} gradients for {len(tensors)} parameters"
        )
    for index, (t, g) in enumerate(zip(tensors, gradients)):
        if g is None:
            continue
        if g.shape != t.shape:
            raise ShapeMismatchError(f"sgd_step[{index}]", t.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                f"Non-finite gradient for parameter {index} of shape {t.shape}; step rejected"
            )
    for t, g in zip(tensors, gradients):
        if g is not None:
            t.data -= learning_rate * g


def zero_grad(tensors: Iterable[Tensor]):
    for t in tensors:
        t.zero_grad()


def default_milestones(epochs: int) -> List[int]:
    return sorted({m for m in (epochs // 3, 2 * epochs // 3) if m > 0})


@dataclass
class StepSchedule:
    """Learning rate divided by 10 at each milestone epoch."""

    base_lr: float
    milestones: Sequence[int] = field(default_factory=list)
    factor: float = LR_DECAY_FACTOR

    @classmethod
    def for_epochs(
        cls,
        base_lr: float,
        epochs: int,
        milestones: Optional[Sequence[int]] = None,
    ) -> "StepSchedule":
        if milestones is None:
            milestones = default_milestones(epochs)
        return cls(base_lr, sorted(milestones))

    def learning_rate(self, epoch: int) -> float:
        passed = sum(1 for m in self.milestones if epoch >= m)
        return self.base_lr * self.factor**passed
