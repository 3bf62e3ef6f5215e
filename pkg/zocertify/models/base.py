import logging
from collections import OrderedDict
from typing import Dict
from typing import List

import numpy as np

from ..numerics.params import LayerParams
from ..numerics.tensor import Tensor
from ..storage import load_checkpoint
from ..storage import save_checkpoint

logger = logging.getLogger(__name__)


class Module:
    """
    A network as an ordered collection of named LayerParams.

    Layers are registered in construction order, which fixes the order of
    parameters() and of checkpoint entries.
    """

    def __init__(self):
        self.layers: "OrderedDict[str, LayerParams]" = OrderedDict()
        self.training = False

    def register(self, name: str, layer: LayerParams) -> LayerParams:
        if name in self.layers:
            raise KeyError(f"Layer '{name}' registered twice")
        self.layers[name] = layer
        return layer

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def parameters(self) -> List[Tensor]:
        tensors: List[Tensor] = []
        for layer in self.layers.values():
            tensors.extend(layer.trainable())
        return tensors

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self):
        for layer in self.layers.values():
            layer.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = OrderedDict()
        for name, layer in self.layers.items():
            for key, value in layer.state().items():
                state[f"{name}.{key}"] = value.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        expected = set()
        for name, layer in self.layers.items():
            prefix = f"{name}."
            arrays = {
                k[len(prefix) :]: v
                for k, v in state.items()
                if k.startswith(prefix)
            }
            layer.load_state(arrays, prefix)
            expected.update(prefix + k for k in layer.state())
        unexpected = sorted(set(state) - expected)
        if unexpected:
            raise KeyError(f"Unexpected state entries: {unexpected}")

    def save(self, path: str) -> str:
        return save_checkpoint(path, self.state_dict())

    def load(self, path: str) -> "Module":
        self.load_state_dict(load_checkpoint(path))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError
