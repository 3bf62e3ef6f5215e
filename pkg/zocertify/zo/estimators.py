"""
Zeroth-order gradient estimators.

Both estimators only evaluate a scalar loss at perturbed points; the loss
is expected to be deterministic for the duration of one estimate. A
`loss_at` callable either maps one point to a float or, with
batched=True, maps a stack of points (P, *shape) to P values.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable
from typing import List
from typing import Optional
from typing import Sequence
from typing import Union

import numpy as np

from ..const import ZO_Q_DEFAULT_VALUE
from ..const import ZO_XI_DEFAULT_VALUE
from ..errors import EstimateAbortedError
from ..errors import ShapeMismatchError
from ..numerics.tensor import Tensor

logger = logging.getLogger(__name__)


class ZOMethod(Enum):
    RGE = "rge"
    CGE = "cge"


class Directions(Enum):
    SPHERE = "sphere"
    NORMAL = "normal"


@dataclass
class ZOConfig:
    method: ZOMethod = ZOMethod.RGE
    q: int = ZO_Q_DEFAULT_VALUE
    xi: float = ZO_XI_DEFAULT_VALUE
    seed: int = 0
    directions: Directions = Directions.SPHERE
    unhalved_cge: bool = False

    def validate(self) -> List[str]:
        errors = []
        if not isinstance(self.q, int) or isinstance(self.q, bool) or self.q < 1:
            errors.append("'q' should be a positive integer")
        if not (np.isfinite(self.xi) and self.xi > 0):
            errors.append("'xi' should be a positive number")
        if not isinstance(self.method, ZOMethod):
            errors.append(f"'method' should be one of {[m.value for m in ZOMethod]}")
        if not isinstance(self.directions, Directions):
            errors.append(
                f"'directions' should be one of {[d.value for d in Directions]}"
            )
        return errors


@dataclass(frozen=True)
class GradientEstimate:
    vector: np.ndarray
    method: ZOMethod
    queries_spent: int
    xi: float
    base_value: float
    # number of directions for RGE, perturbed dimension for CGE
    size: int


def _evaluate(loss_at, points: np.ndarray, batched: bool) -> np.ndarray:
    if batched:
        values = np.asarray(loss_at(points), dtype=np.float64).reshape(-1)
        if len(values) != len(points):
            raise ShapeMismatchError("batched loss_at", (len(points),), values.shape)
    else:
        values = np.array([float(loss_at(p)) for p in points])
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise EstimateAbortedError(
            f"Non-finite loss value {values[bad]} at perturbation {bad}; estimate aborted"
        )
    return values


def _base(loss_at, z0: np.ndarray, base_value, batched: bool) -> float:
    if base_value is None:
        return float(_evaluate(loss_at, z0[None], batched)[0])
    if not np.isfinite(base_value):
        raise EstimateAbortedError(f"Non-finite base loss value {base_value}")
    return float(base_value)


def sample_directions(
    rng: np.random.Generator, q: int, d: int, directions: Directions
) -> np.ndarray:
    u = rng.standard_normal((q, d))
    if directions is Directions.SPHERE:
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        u = u / np.where(norms == 0, 1.0, norms)
    return u


def rge_estimate(
    loss_at: Callable,
    z0: np.ndarray,
    cfg: ZOConfig,
    rng: Optional[np.random.Generator] = None,
    base_value: Optional[float] = None,
    batched: bool = False,
) -> GradientEstimate:
    """
    Randomized gradient estimate from q random directions:

        g = scale * sum_k (L(z0 + xi u_k) - L(z0)) u_k

    with scale d / (xi q) for unit-sphere directions and 1 / (xi q) for
    standard normal directions. `base_value`, when given, stands in for
    L(z0); the estimate is still charged q + 1 evaluations.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    d = z0.size
    u = sample_directions(rng, cfg.q, d, cfg.directions)
    base = _base(loss_at, z0, base_value, batched)
    points = z0.reshape(1, -1) + cfg.xi * u
    values = _evaluate(loss_at, points.reshape((cfg.q,) + z0.shape), batched)
    if cfg.directions is Directions.SPHERE:
        scale = d / (cfg.xi * cfg.q)
    else:
        scale = 1.0 / (cfg.xi * cfg.q)
    vector = scale * ((values - base) @ u)
    return GradientEstimate(
        vector=vector.reshape(z0.shape),
        method=ZOMethod.RGE,
        queries_spent=cfg.q + 1,
        xi=cfg.xi,
        base_value=base,
        size=cfg.q,
    )


def cge_estimate(
    loss_at: Callable,
    z0: np.ndarray,
    cfg: ZOConfig,
    base_value: Optional[float] = None,
    batched: bool = False,
) -> GradientEstimate:
    """
    Coordinate-wise central differences (L(z0 + xi e_k) - L(z0 - xi e_k))
    / (2 xi); with unhalved_cge the divisor is xi. Costs 2 d + 1
    evaluations including the base value.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    d = z0.size
    base = _base(loss_at, z0, base_value, batched)
    steps = cfg.xi * np.eye(d)
    flat = z0.reshape(1, -1)
    points = np.concatenate([flat + steps, flat - steps])
    values = _evaluate(loss_at, points.reshape((2 * d,) + z0.shape), batched)
    divisor = cfg.xi if cfg.unhalved_cge else 2.0 * cfg.xi
    vector = (values[:d] - values[d:]) / divisor
    return GradientEstimate(
        vector=vector.reshape(z0.shape),
        method=ZOMethod.CGE,
        queries_spent=2 * d + 1,
        xi=cfg.xi,
        base_value=base,
        size=d,
    )


def estimate(
    loss_at: Callable,
    z0: np.ndarray,
    cfg: ZOConfig,
    rng: Optional[np.random.Generator] = None,
    base_value: Optional[float] = None,
    batched: bool = False,
) -> GradientEstimate:
    if cfg.method is ZOMethod.RGE:
        return rge_estimate(loss_at, z0, cfg, rng, base_value, batched)
    return cge_estimate(loss_at, z0, cfg, base_value, batched)


def chain_to_params(
    g_z: Union[GradientEstimate, np.ndarray],
    output: Tensor,
    params: Sequence[Tensor],
) -> List[np.ndarray]:
    """
    Reverse-mode pass through the white-box path seeded with g_z.

    `output` is the already computed path output at which g_z was
    estimated. Parameter gradients are reset first and the returned list
    holds J^T g_z for each parameter (zeros when it is off the path).
    """
    vector = g_z.vector if isinstance(g_z, GradientEstimate) else g_z
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != output.shape:
        raise ShapeMismatchError("chain_to_params", output.shape, vector.shape)
    for p in params:
        p.zero_grad()
    output.backward(vector)
    return [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        for p in params
    ]
