import logging
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from ..errors import ShapeMismatchError
from ..numerics import functional as F
from ..numerics.params import LayerParams
from ..numerics.params import sgd_step
from ..numerics.params import StepSchedule
from ..numerics.tensor import no_grad
from ..numerics.tensor import Tensor
from .base import Module

logger = logging.getLogger(__name__)


@dataclass
class ClassifierConfig:
    input_channels: int = 3
    image_size: int = 16
    num_classes: int = 3
    widths: Sequence[int] = field(default_factory=lambda: (8, 16))
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05

    def validate(self) -> List[str]:
        errors = []
        for name in (
            "input_channels",
            "image_size",
            "epochs",
            "batch_size",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                errors.append(f"'{name}' should be a positive integer")
        if not isinstance(self.num_classes, int) or self.num_classes < 2:
            errors.append("'num_classes' should be an integer of at least 2")
        if not self.widths or any(
            not isinstance(w, int) or w <= 0 for w in self.widths
        ):
            errors.append("'widths' should be a non-empty list of positive integers")
        elif isinstance(self.image_size, int) and self.image_size % 2 ** len(
            self.widths
        ):
            errors.append(
                f"'image_size' ({self.image_size}) should be divisible by "
                f"2**{len(self.widths)} for the classifier widths"
            )
        if not self.learning_rate > 0:
            errors.append("'learning_rate' should be positive")
        return errors


class Classifier(Module):
    """Target model: conv/BN/ReLU/maxpool blocks and a dense head over L classes."""

    def __init__(self, config: ClassifierConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.blocks = []
        channels = config.input_channels
        for i, width in enumerate(config.widths):
            conv = self.register(
                f"block{i}.conv", LayerParams.conv(channels, width, 3, rng)
            )
            bn = self.register(f"block{i}.bn", LayerParams.batchnorm(width))
            self.blocks.append((conv, bn))
            channels = width
        size = config.image_size // 2 ** len(config.widths)
        self.head = self.register(
            "head",
            LayerParams.dense(channels * size * size, config.num_classes, rng),
        )

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        c, s = self.config.input_channels, self.config.image_size
        return (c, s, s)

    def forward(self, x: Tensor, training: Optional[bool] = None) -> Tensor:
        if x.data.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeMismatchError(
                "classifier_forward", ("N",) + self.input_shape, x.shape
            )
        if training is None:
            training = self.training
        y = x
        for conv, bn in self.blocks:
            y = F.maxpool2(F.relu(F.batchnorm(F.conv2d(y, conv), bn, training)))
        return F.dense(F.flatten(y), self.head)

    def logits_and_probabilities(
        self, x: Tensor, training: Optional[bool] = None
    ) -> Tuple[Tensor, Tensor]:
        logits = self.forward(x, training)
        return logits, F.softmax(logits)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return F.stable_softmax(self.forward(Tensor(x), training=False).data)

    def zero_head(self):
        self.head.weights.data[...] = 0.0
        self.head.biases.data[...] = 0.0


def accuracy(
    classifier: Classifier,
    images: np.ndarray,
    labels: np.ndarray,
    batch_size: int = 256,
) -> float:
    correct = 0
    for start in range(0, len(images), batch_size):
        chunk = slice(start, start + batch_size)
        predicted = classifier.predict_proba(images[chunk]).argmax(axis=1)
        correct += int((predicted == labels[chunk]).sum())
    return correct / len(images) if len(images) else 0.0


def fit_classifier(
    classifier: Classifier,
    images: np.ndarray,
    labels: np.ndarray,
    root_seed: int,
) -> List[float]:
    """Cross-entropy SGD on clean images; returns the mean loss per epoch."""
    from ..utils import substream

    config = classifier.config
    schedule = StepSchedule.for_epochs(config.learning_rate, config.epochs)
    params = classifier.parameters()
    classifier.train()
    history = []
    for epoch in range(config.epochs):
        lr = schedule.learning_rate(epoch)
        order = substream(root_seed, "classifier-order", epoch).permutation(
            len(images)
        )
        losses = []
        for start in range(0, len(order), config.batch_size):
            indices = order[start : start + config.batch_size]
            if len(indices) < 2:
                continue
            classifier.zero_grad()
            loss = F.cross_entropy(classifier(Tensor(images[indices])), labels[indices])
            loss.backward()
            sgd_step(params, lr)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
        logger.info(
            f"classifier epoch {epoch}: loss {history[-1]:.4f} (lr {lr:g})"
        )
    classifier.eval()
    return history
