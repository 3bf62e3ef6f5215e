"""
The information boundary around the target classifier.

A BlackBox only answers queries with probabilities and labels and counts
every single-input evaluation. Code that legitimately needs gradients of
the classifier (the first-order baseline) receives a WhiteBoxHandle, which
is a separate type built from the classifier itself.
"""
import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np

from .const import PIXEL_MAX
from .const import PIXEL_MIN
from .errors import QueryRejectedError
from .numerics import functional as F
from .numerics.tensor import Tensor

logger = logging.getLogger(__name__)


class QueryPhase(Enum):
    REFERENCE = "reference"
    TRAINING = "training"
    CERTIFICATION = "certification"
    EVALUATION = "evaluation"


@dataclass(frozen=True)
class BlackBoxReply:
    probabilities: np.ndarray
    predicted_label: int


class QueryCounter:
    """Monotone, thread-safe count of black-box evaluations per phase."""

    def __init__(self):
        self._lock = threading.Lock()
        self._by_phase: Dict[QueryPhase, int] = {p: 0 for p in QueryPhase}

    def record(self, phase: QueryPhase, count: int):
        if count < 0:
            raise ValueError(f"Query count cannot be negative: {count}")
        with self._lock:
            self._by_phase[phase] += count

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self._by_phase.values())

    def phase_total(self, phase: QueryPhase) -> int:
        with self._lock:
            return self._by_phase[phase]

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            counts = {p.value: n for p, n in self._by_phase.items()}
        counts["total"] = sum(counts.values())
        return counts

    def __repr__(self):
        return f"QueryCounter({self.snapshot()})"


class BlackBox:
    """
    Query-only access to a classifier.

    Inputs are rejected, without counting, when their shape differs from
    `input_shape`, when they are not finite or when they fall outside
    `value_range` (None disables the range check).
    """

    __slots__ = (
        "_predict",
        "counter",
        "input_shape",
        "num_classes",
        "value_range",
    )

    def __init__(
        self,
        predict_proba: Callable[[np.ndarray], np.ndarray],
        input_shape: Tuple[int, ...],
        num_classes: int,
        value_range: Optional[Tuple[float, float]] = (PIXEL_MIN, PIXEL_MAX),
        counter: Optional[QueryCounter] = None,
    ):
        self._predict = predict_proba
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.value_range = value_range
        self.counter = counter if counter is not None else QueryCounter()

    @classmethod
    def from_classifier(
        cls, classifier, counter: Optional[QueryCounter] = None
    ) -> "BlackBox":
        return cls(
            classifier.predict_proba,
            classifier.input_shape,
            classifier.config.num_classes,
            counter=counter,
        )

    def _validate(self, x: np.ndarray) -> np.ndarray:
        if x.shape == self.input_shape:
            x = x[None]
        if x.ndim != len(self.input_shape) + 1 or x.shape[1:] != self.input_shape:
            raise QueryRejectedError(
                f"Query shape {x.shape} does not match the model input shape "
                f"{self.input_shape}"
            )
        if not np.all(np.isfinite(x)):
            raise QueryRejectedError("Query contains non-finite values")
        if self.value_range is not None:
            low, high = self.value_range
            if x.size and (x.min() < low or x.max() > high):
                raise QueryRejectedError(
                    f"Query values [{x.min():g}, {x.max():g}] outside the "
                    f"valid range [{low:g}, {high:g}]"
                )
        return x

    def query_probabilities(
        self, x: np.ndarray, phase: QueryPhase = QueryPhase.TRAINING
    ) -> np.ndarray:
        """Batch of replies as an (N, L) probability array."""
        x = self._validate(np.asarray(x, dtype=np.float64))
        probabilities = np.asarray(self._predict(x.copy()), dtype=np.float64)
        if probabilities.shape != (x.shape[0], self.num_classes):
            raise QueryRejectedError(
                f"Model replied with shape {probabilities.shape}, expected "
                f"{(x.shape[0], self.num_classes)}"
            )
        self.counter.record(phase, x.shape[0])
        probabilities.setflags(write=False)
        return probabilities

    def query(
        self, x: np.ndarray, phase: QueryPhase = QueryPhase.TRAINING
    ) -> List[BlackBoxReply]:
        probabilities = self.query_probabilities(x, phase)
        return [
            BlackBoxReply(row, int(np.argmax(row))) for row in probabilities
        ]


class WhiteBoxHandle:
    """Differentiable access to the classifier for the first-order baseline."""

    def __init__(self, classifier):
        self._classifier = classifier

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self._classifier.input_shape

    @property
    def num_classes(self) -> int:
        return self._classifier.config.num_classes

    def logits(self, x: Tensor) -> Tensor:
        return self._classifier.forward(x, training=False)

    def probabilities(self, x: Tensor) -> Tensor:
        return F.softmax(self.logits(x))

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self._classifier.predict_proba(x)

    def zero_grad(self):
        self._classifier.zero_grad()
