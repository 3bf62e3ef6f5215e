import logging
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.spatial.distance import pdist

from .const import LOG_PROB_FLOOR
from .const import MEDIAN_BANDWIDTH
from .const import MMD_FALLBACK_BANDWIDTH
from .errors import ShapeMismatchError

logger = logging.getLogger(__name__)

Bandwidth = Union[float, str]


@dataclass
class LossWeights:
    lambda_cs: float = 1.0
    lambda_mmd: float = 1.0
    bandwidth: Bandwidth = MEDIAN_BANDWIDTH

    def validate(self) -> List[str]:
        errors = []
        for name in ("lambda_cs", "lambda_mmd"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                errors.append(f"'{name}' should be a finite non-negative number")
        if self.bandwidth != MEDIAN_BANDWIDTH and not (
            isinstance(self.bandwidth, (int, float))
            and np.isfinite(self.bandwidth)
            and self.bandwidth > 0
        ):
            errors.append(
                f"'bandwidth' should be '{MEDIAN_BANDWIDTH}' or a positive number"
            )
        return errors


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    cs: float
    mmd: float
    total: float


def _as_rows(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v[None] if v.ndim == 1 else v


def _check_probabilities(name: str, p: np.ndarray):
    if np.any(p < 0):
        raise ValueError(f"'{name}' has negative entries")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError(
            f"'{name}' rows should sum to 1 within 1e-6, got {sums.min():.9f}..{sums.max():.9f}"
        )


def soft_cross_entropy(p_clean, p_denoised) -> float:
    """
    -sum_l p_clean[l] * log(p_denoised[l]), with the log clamped at 1e-12.
    For 2-D inputs the per-row values are averaged.
    """
    p_clean, p_denoised = _as_rows(p_clean), _as_rows(p_denoised)
    if p_clean.shape != p_denoised.shape:
        raise ShapeMismatchError("soft_cross_entropy", p_clean.shape, p_denoised.shape)
    _check_probabilities("p_clean", p_clean)
    _check_probabilities("p_denoised", p_denoised)
    log_p = np.log(np.maximum(p_denoised, LOG_PROB_FLOOR))
    return float(np.mean(-(p_clean * log_p).sum(axis=-1)))


def entropy(p) -> float:
    return soft_cross_entropy(p, p)


def cosine_loss(v_clean, v_denoised) -> float:
    """1 - cos(v_clean, v_denoised), averaged over rows for 2-D input."""
    v_clean, v_denoised = _as_rows(v_clean), _as_rows(v_denoised)
    if v_clean.shape != v_denoised.shape:
        raise ShapeMismatchError("cosine_loss", v_clean.shape, v_denoised.shape)
    norms = np.linalg.norm(v_clean, axis=-1) * np.linalg.norm(v_denoised, axis=-1)
    dots = (v_clean * v_denoised).sum(axis=-1)
    degenerate = norms == 0
    if np.any(degenerate):
        logger.warning(
            f"cosine_loss: {int(degenerate.sum())} zero-norm vector pair(s), loss set to 1"
        )
    cosines = np.where(degenerate, 0.0, dots / np.where(degenerate, 1.0, norms))
    return float(np.mean(1.0 - np.clip(cosines, -1.0, 1.0)))


def median_bandwidth(X, Y) -> float:
    points = np.vstack([_as_rows(X), _as_rows(Y)])
    if len(points) < 2:
        return MMD_FALLBACK_BANDWIDTH
    h = float(np.median(pdist(points)))
    if h <= 0:
        logger.warning(
            f"median pairwise distance is 0, using fallback bandwidth {MMD_FALLBACK_BANDWIDTH}"
        )
        return MMD_FALLBACK_BANDWIDTH
    return h


def resolve_bandwidth(bandwidth: Bandwidth, X, Y) -> float:
    if bandwidth == MEDIAN_BANDWIDTH:
        return median_bandwidth(X, Y)
    return float(bandwidth)


def mmd_rbf(X, Y, bandwidth: Bandwidth = MEDIAN_BANDWIDTH) -> float:
    """
    Biased (V-statistic) squared MMD with the Gaussian kernel
    exp(-||a - b||^2 / (2 h^2)).
    """
    X, Y = _as_rows(X), _as_rows(Y)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("mmd_rbf needs at least one vector in each set")
    if X.shape[1] != Y.shape[1]:
        raise ShapeMismatchError("mmd_rbf", X.shape, Y.shape)
    h = resolve_bandwidth(bandwidth, X, Y)
    gamma = 1.0 / (2.0 * h * h)
    k_xx = np.exp(-gamma * cdist(X, X, "sqeuclidean")).mean()
    k_yy = np.exp(-gamma * cdist(Y, Y, "sqeuclidean")).mean()
    k_xy = np.exp(-gamma * cdist(X, Y, "sqeuclidean")).mean()
    return max(0.0, float(k_xx + k_yy - 2.0 * k_xy))


def total_loss(
    p_clean,
    p_denoised,
    weights: LossWeights,
    features_clean=None,
    features_denoised=None,
    bandwidth: Optional[Bandwidth] = None,
) -> LossBreakdown:
    """
    Batch objective ce + lambda_cs * cs + lambda_mmd * mmd.

    CE and CS are batch means; MMD compares the clean and denoised feature
    sets once. Features default to the reply probabilities. `bandwidth`
    overrides weights.bandwidth, which lets a caller hold it fixed while
    individual rows are perturbed.
    """
    p_clean, p_denoised = _as_rows(p_clean), _as_rows(p_denoised)
    if len(p_clean) == 0:
        raise ValueError("total_loss needs a non-empty batch")
    if p_clean.shape != p_denoised.shape:
        raise ShapeMismatchError("total_loss", p_clean.shape, p_denoised.shape)
    f_clean = p_clean if features_clean is None else _as_rows(features_clean)
    f_denoised = (
        p_denoised if features_denoised is None else _as_rows(features_denoised)
    )
    ce = soft_cross_entropy(p_clean, p_denoised)
    cs = cosine_loss(f_clean, f_denoised)
    mmd = mmd_rbf(
        f_clean,
        f_denoised,
        weights.bandwidth if bandwidth is None else bandwidth,
    )
    total = ce + weights.lambda_cs * cs + weights.lambda_mmd * mmd
    return LossBreakdown(ce=ce, cs=cs, mmd=mmd, total=total)
