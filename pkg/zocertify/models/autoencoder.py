import logging
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from ..data import batch_noise
from ..errors import ShapeMismatchError
from ..numerics import functional as F
from ..numerics.params import LayerParams
from ..numerics.params import sgd_step
from ..numerics.tensor import no_grad
from ..numerics.tensor import Tensor
from ..utils import substream
from .base import Module

logger = logging.getLogger(__name__)


@dataclass
class AEConfig:
    input_channels: int = 3
    image_size: int = 16
    latent_dim: int = 48
    widths: Sequence[int] = field(default_factory=lambda: (8, 16))
    pretrain_epochs: int = 5
    pretrain_learning_rate: float = 0.01
    freeze_decoder: bool = False

    @property
    def input_dim(self) -> int:
        return self.input_channels * self.image_size * self.image_size

    @property
    def bottleneck_size(self) -> int:
        return self.image_size // 2 ** len(self.widths)

    def validate(self) -> List[str]:
        errors = []
        for name in ("input_channels", "image_size", "latent_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                errors.append(f"'{name}' should be a positive integer")
        if not self.widths or any(
            not isinstance(w, int) or w <= 0 for w in self.widths
        ):
            errors.append("'widths' should be a non-empty list of positive integers")
        if not isinstance(self.pretrain_epochs, int) or self.pretrain_epochs < 0:
            errors.append("'pretrain_epochs' should be a non-negative integer")
        if not self.pretrain_learning_rate > 0:
            errors.append("'pretrain_learning_rate' should be positive")
        if errors:
            return errors
        if self.latent_dim >= self.input_dim:
            errors.append(
                f"'latent_dim' ({self.latent_dim}) should be smaller than the "
                f"input dimension ({self.input_dim})"
            )
        if self.image_size % 2 ** len(self.widths):
            errors.append(
                f"'image_size' ({self.image_size}) should be divisible by "
                f"2**{len(self.widths)} for the autoencoder widths"
            )
        return errors


class Encoder(Module):
    """conv3x3/BN/ReLU/maxpool blocks followed by a dense map to the latent."""

    def __init__(self, config: AEConfig, rng: np.random.Generator):
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
        flat = channels * config.bottleneck_size**2
        self.project = self.register(
            "project", LayerParams.dense(flat, config.latent_dim, rng)
        )

    def forward(self, x_hat: Tensor, training: Optional[bool] = None) -> Tensor:
        c, s = self.config.input_channels, self.config.image_size
        if x_hat.data.ndim != 4 or x_hat.shape[1:] != (c, s, s):
            raise ShapeMismatchError("encoder_forward", ("N", c, s, s), x_hat.shape)
        if training is None:
            training = self.training
        y = x_hat
        for conv, bn in self.blocks:
            y = F.maxpool2(F.relu(F.batchnorm(F.conv2d(y, conv), bn, training)))
        return F.dense(F.flatten(y), self.project)


class Decoder(Module):
    """Dense expansion of the latent followed by stride-2 transposed convs."""

    def __init__(self, config: AEConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        widths = list(config.widths)
        size = config.bottleneck_size
        self.expand = self.register(
            "expand",
            LayerParams.dense(config.latent_dim, widths[-1] * size * size, rng),
        )
        self.upsample = []
        targets = widths[-2::-1] + [config.input_channels]
        channels = widths[-1]
        for i, width in enumerate(targets):
            self.upsample.append(
                self.register(
                    f"upsample{i}",
                    LayerParams.conv_transpose(channels, width, 2, 2, rng),
                )
            )
            channels = width

    def forward(self, z: Tensor, training: Optional[bool] = None) -> Tensor:
        if z.data.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeMismatchError(
                "decoder_forward", ("N", self.config.latent_dim), z.shape
            )
        size = self.config.bottleneck_size
        y = F.relu(F.dense(z, self.expand))
        y = F.reshape(y, (z.shape[0], self.config.widths[-1], size, size))
        for i, layer in enumerate(self.upsample):
            y = F.conv2d_transpose(y, layer, stride=2)
            if i < len(self.upsample) - 1:
                y = F.relu(y)
        return y

    def decode(self, z: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.forward(Tensor(z), training=False).data


def pretrain_autoencoder(
    encoder: Encoder,
    decoder: Decoder,
    images: np.ndarray,
    batch_size: int,
    sigma: float,
    root_seed: int,
    epochs: Optional[int] = None,
    learning_rate: Optional[float] = None,
) -> List[float]:
    """
    Fits the autoencoder white-box on clean and noisy training images,
    reconstructing the clean image in both cases. Returns the mean
    reconstruction loss per epoch. No black-box queries are made.
    """
    config = encoder.config
    epochs = config.pretrain_epochs if epochs is None else epochs
    learning_rate = (
        config.pretrain_learning_rate if learning_rate is None else learning_rate
    )
    params = encoder.parameters() + decoder.parameters()
    encoder.train()
    decoder.train()
    history = []
    for epoch in range(epochs):
        order = substream(root_seed, "pretrain-order", epoch).permutation(
            len(images)
        )
        losses = []
        for start in range(0, len(order), batch_size):
            indices = order[start : start + batch_size]
            clean = images[indices]
            noisy = clean + batch_noise(
                root_seed, "pretrain-noise", epoch, indices, clean.shape[1:], sigma
            )
            inputs = np.concatenate([clean, noisy])
            if len(inputs) < 2:
                continue
            encoder.zero_grad()
            decoder.zero_grad()
            recon = decoder(encoder(Tensor(inputs)))
            loss = F.squared_error(recon, np.concatenate([clean, clean]))
            loss.backward()
            sgd_step(params, learning_rate)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)) if losses else 0.0)
        logger.debug(
            f"autoencoder pretrain epoch {epoch}: reconstruction {history[-1]:.6f}"
        )
    encoder.eval()
    decoder.eval()
    return history
