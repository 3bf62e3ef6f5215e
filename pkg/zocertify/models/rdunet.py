import logging
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np

from ..errors import ShapeMismatchError
from ..numerics import functional as F
from ..numerics.params import LayerParams
from ..numerics.tensor import no_grad
from ..numerics.tensor import Tensor
from .base import Module

logger = logging.getLogger(__name__)


@dataclass
class RDUNetConfig:
    input_channels: int = 3
    base_channels: int = 8
    depth: int = 4
    image_size: int = 16
    zero_init_head: bool = True

    def validate(self) -> List[str]:
        errors = []
        for name in ("input_channels", "base_channels", "depth", "image_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                errors.append(f"'{name}' should be a positive integer")
        if not errors and self.image_size % (2**self.depth):
            errors.append(
                f"'image_size' ({self.image_size}) should be divisible by "
                f"2**depth ({2 ** self.depth})"
            )
        return errors


class DConv:
    """Two rounds of conv3x3, batch norm and ReLU."""

    def __init__(self, module, name, in_channels, out_channels, rng):
        self.conv1 = module.register(
            f"{name}.conv1", LayerParams.conv(in_channels, out_channels, 3, rng)
        )
        self.bn1 = module.register(
            f"{name}.bn1", LayerParams.batchnorm(out_channels)
        )
        self.conv2 = module.register(
            f"{name}.conv2",
            LayerParams.conv(out_channels, out_channels, 3, rng),
        )
        self.bn2 = module.register(
            f"{name}.bn2", LayerParams.batchnorm(out_channels)
        )

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        x = F.relu(F.batchnorm(F.conv2d(x, self.conv1), self.bn1, training))
        return F.relu(F.batchnorm(F.conv2d(x, self.conv2), self.bn2, training))


class RDUNet(Module):
    """
    Residual UNet denoiser.

    The feedforward path halves resolution `depth` times; each feedback
    stage upsamples by a stride-2 transposed convolution, concatenates the
    lateral map of equal resolution and applies a DConv. A 1x1 convolution
    predicts the residual, and the denoised image is x_star - residual.
    """

    def __init__(self, config: RDUNetConfig, rng: np.random.Generator):
        super().__init__()
        errors = config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.config = config
        base = config.base_channels
        self.inc = DConv(self, "inc", config.input_channels, base, rng)
        self.down = [
            DConv(self, f"down{i}", base * 2 ** (i - 1), base * 2**i, rng)
            for i in range(1, config.depth + 1)
        ]
        self.upsample = {}
        self.up = {}
        for i in range(config.depth, 0, -1):
            wide, narrow = base * 2**i, base * 2 ** (i - 1)
            self.upsample[i] = self.register(
                f"up{i}.upsample",
                LayerParams.conv_transpose(wide, narrow, 2, 2, rng),
            )
            self.up[i] = DConv(self, f"up{i}.dconv", wide, narrow, rng)
        self.head = self.register(
            "head", LayerParams.conv(base, config.input_channels, 1, rng)
        )
        if config.zero_init_head:
            self.zero_residual_head()

    def _check_input(self, x: Tensor):
        c, s = self.config.input_channels, self.config.image_size
        if x.data.ndim != 4 or x.shape[1:] != (c, s, s):
            raise ShapeMismatchError(
                "rdunet_forward", ("N", c, s, s), x.shape
            )

    def forward(
        self, x_star: Tensor, training: Optional[bool] = None
    ) -> Tuple[Tensor, Tensor]:
        self._check_input(x_star)
        if training is None:
            training = self.training
        lateral = [self.inc(x_star, training)]
        for stage in self.down:
            lateral.append(stage(F.maxpool2(lateral[-1]), training))
        y = lateral[-1]
        for i in range(self.config.depth, 0, -1):
            up = F.conv2d_transpose(y, self.upsample[i], stride=2)
            y = self.up[i](F.concat(up, lateral[i - 1], axis=1), training)
        residual = F.conv2d(y, self.head, stride=1, padding=0)
        return residual, F.sub(x_star, residual)

    def zero_residual_head(self):
        self.head.weights.data[...] = 0.0
        self.head.biases.data[...] = 0.0

    def denoise(self, x_star: np.ndarray) -> np.ndarray:
        """Inference-mode denoising of a raw batch, without a tape."""
        with no_grad():
            _, denoised = self.forward(Tensor(x_star), training=False)
        return denoised.data
