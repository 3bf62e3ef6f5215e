import logging
import threading
from contextlib import contextmanager
from typing import Any
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np

from ..errors import ShapeMismatchError

logger = logging.getLogger(__name__)

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """
    Disables tape recording on the current thread.

    Forward passes under no_grad() build no graph, so concurrent inference
    over shared parameters does not retain references to intermediate arrays.
    """
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Function:
    """
    Base class of differentiable operations.

    Subclasses implement forward() on the raw arrays of their inputs and
    backward(), which maps the gradient of the output to one gradient per
    input (None for inputs that need none).
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(
            f"Forward pass not implemented for {type(self).__name__}"
        )

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(
            f"Backward pass not implemented for {type(self).__name__}"
        )

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = is_grad_enabled() and any(
            t.requires_grad for t in inputs
        )
        return Tensor(
            out,
            requires_grad=requires_grad,
            _ctx=fn if requires_grad else None,
        )


class Tensor:
    """
    Dense 64-bit array with an optional gradient buffer.

    Tensors produced by a Function remember it so backward() can walk the
    recorded graph; gradients are accumulated only into leaf tensors created
    with requires_grad=True.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _ctx: Optional[Function] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._ctx = _ctx

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None):
        """
        Reverse-mode pass seeded with `grad` (ones for a single-element
        tensor when omitted).
        """
        if not self.requires_grad:
            raise RuntimeError(
                "backward() called on a tensor that does not require grad"
            )
        if grad is None:
            if self.size != 1:
                raise RuntimeError(
                    f"grad must be given for non-scalar output of shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeMismatchError("backward seed", self.shape, grad.shape)

        pending = {id(self): grad}
        for node in reversed(self._topological_order()):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._ctx is None:
                if node.grad is None:
                    node.grad = node_grad.copy()
                else:
                    node.grad = node.grad + node_grad
                continue
            input_grads = node._ctx.backward(node_grad)
            for parent, parent_grad in zip(node._ctx.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + parent_grad
                else:
                    pending[id(parent)] = parent_grad

    def __add__(self, other: "Tensor") -> "Tensor":
        from .functional import add

        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from .functional import sub

        return sub(self, other)

    def __neg__(self) -> "Tensor":
        from .functional import scale

        return scale(self, -1.0)

    def __mul__(self, factor: float) -> "Tensor":
        from .functional import scale

        return scale(self, float(factor))

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        from .functional import total

        return total(self)

    def reshape(self, *shape) -> "Tensor":
        from .functional import reshape

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)
