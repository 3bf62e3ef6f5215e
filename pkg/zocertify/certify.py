"""
Monte-Carlo randomized-smoothing prediction and certification.

A top class is selected from n0 noisy samples, then a one-sided
Clopper-Pearson bound on its probability is computed from n fresh samples.
The certified L2 radius is sigma * Phi^-1(p_lower); the smoothed model
abstains when p_lower does not exceed 1/2.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import humanfriendly
import numpy as np
from scipy.stats import norm
from sortedcontainers import SortedList
from statsmodels.stats.proportion import proportion_confint

from .blackbox import BlackBox
from .blackbox import QueryPhase
from .const import ABSTAIN
from .const import CERTIFY_ALPHA_DEFAULT_VALUE
from .const import CERTIFY_BATCH_SIZE_DEFAULT_VALUE
from .const import CERTIFY_N0_DEFAULT_VALUE
from .const import CERTIFY_N_DEFAULT_VALUE
from .const import CERTIFY_RADII_DEFAULT_VALUE
from .const import NOISE_SIGMA_DEFAULT_VALUE
from .data import Dataset
from .data import gaussian_noise
from .errors import ZOCertifyError
from .numerics.tensor import no_grad
from .numerics.tensor import Tensor
from .utils import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class CertifyConfig:
    sigma: float = NOISE_SIGMA_DEFAULT_VALUE
    n0: int = CERTIFY_N0_DEFAULT_VALUE
    n: int = CERTIFY_N_DEFAULT_VALUE
    alpha: float = CERTIFY_ALPHA_DEFAULT_VALUE
    radii: Sequence[float] = CERTIFY_RADII_DEFAULT_VALUE
    batch_size: int = CERTIFY_BATCH_SIZE_DEFAULT_VALUE

    def validate(self) -> List[str]:
        errors = []
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            errors.append("'sigma' should be a positive number")
        for name in ("n0", "n", "batch_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                errors.append(f"'{name}' should be a positive integer")
        if (
            isinstance(self.n, int)
            and isinstance(self.n0, int)
            and self.n < self.n0
        ):
            errors.append(f"'n' ({self.n}) should be at least 'n0' ({self.n0})")
        if not 0 < self.alpha < 1:
            errors.append("'alpha' should be in (0, 1)")
        radii = list(self.radii)
        if not radii or 0.0 not in radii:
            errors.append("'radii' should include 0")
        if any(r < 0 for r in radii) or radii != sorted(radii):
            errors.append("'radii' should be non-negative and sorted ascending")
        return errors


@dataclass
class CertificationResult:
    label: int
    radius: float
    p_lower: float
    counts: np.ndarray
    queries_spent: int
    error: Optional[str] = None

    @property
    def abstained(self) -> bool:
        return self.label == ABSTAIN


@dataclass(frozen=True)
class CurvePoint:
    radius: float
    certified_accuracy: float
    n_examples: int


class DenoisedBlackBox:
    """
    The base model of the smoothed classifier: optional white-box
    preprocessing (denoiser, then encoder and decoder for the autoencoder
    variant) followed by a black-box query. Without a denoiser it is the
    plain black box.
    """

    def __init__(
        self,
        blackbox: BlackBox,
        denoiser=None,
        encoder=None,
        decoder=None,
        phase: QueryPhase = QueryPhase.CERTIFICATION,
    ):
        if (encoder is None) != (decoder is None):
            raise ValueError("encoder and decoder must be given together")
        self.blackbox = blackbox
        self.denoiser = denoiser
        self.encoder = encoder
        self.decoder = decoder
        self.phase = phase

    @property
    def num_classes(self) -> int:
        return self.blackbox.num_classes

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self.blackbox.input_shape

    def preprocess(self, x: np.ndarray) -> np.ndarray:
        if self.denoiser is not None:
            x = self.denoiser.denoise(x)
        if self.encoder is not None:
            with no_grad():
                z = self.encoder.forward(Tensor(x), training=False).data
            x = self.decoder.decode(z)
        if self.blackbox.value_range is not None:
            x = np.clip(x, *self.blackbox.value_range)
        return x

    def predict_labels(self, x: np.ndarray) -> np.ndarray:
        probabilities = self.blackbox.query_probabilities(
            self.preprocess(x), self.phase
        )
        return probabilities.argmax(axis=1)


def gaussian_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"gaussian_quantile needs p in (0, 1), got {p}")
    return float(norm.ppf(p))


def clopper_pearson_lower(k: int, n: int, alpha: float) -> float:
    """One-sided exact lower confidence bound at level 1 - alpha."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n should be a positive integer, got {n}")
    if not isinstance(k, (int, np.integer)) or not 0 <= k <= n:
        raise ValueError(f"k should be an integer in [0, {n}], got {k}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha should be in (0, 1), got {alpha}")
    if k == 0:
        return 0.0
    lower, _ = proportion_confint(int(k), int(n), alpha=2 * alpha, method="beta")
    return float(lower)


def radius_from_p_lower(p_lower: float, sigma: float) -> float:
    if p_lower <= 0.5:
        return 0.0
    return sigma * gaussian_quantile(p_lower)


def sample_under_noise(
    model: DenoisedBlackBox,
    x: np.ndarray,
    count: int,
    sigma: float,
    seed,
    batch_size: int = CERTIFY_BATCH_SIZE_DEFAULT_VALUE,
) -> np.ndarray:
    """Per-class tally of labels over `count` noisy copies of x."""
    if count < 1:
        raise ValueError(f"count should be at least 1, got {count}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tally = np.zeros(model.num_classes, dtype=np.int64)
    remaining = count
    while remaining > 0:
        this_batch = min(batch_size, remaining)
        remaining -= this_batch
        batch = np.repeat(x[None], this_batch, axis=0)
        batch = batch + gaussian_noise(batch.shape, sigma, rng)
        labels = model.predict_labels(batch)
        tally += np.bincount(labels, minlength=model.num_classes)
    return tally


def certify(
    model: DenoisedBlackBox, x: np.ndarray, cfg: CertifyConfig, seed
) -> CertificationResult:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    counts = np.zeros(model.num_classes, dtype=np.int64)
    queries = 0
    try:
        selection = sample_under_noise(
            model, x, cfg.n0, cfg.sigma, rng, cfg.batch_size
        )
        queries += cfg.n0
        top = int(np.argmax(selection))
        estimation = sample_under_noise(
            model, x, cfg.n, cfg.sigma, rng, cfg.batch_size
        )
        queries += cfg.n
    except (ZOCertifyError, ArithmeticError) as e:
        logger.warning(f"Sampling failed, abstaining: {e}")
        return CertificationResult(
            ABSTAIN, 0.0, 0.0, counts, max(queries, 1), error=str(e)
        )
    counts = selection + estimation
    p_lower = clopper_pearson_lower(int(estimation[top]), cfg.n, cfg.alpha)
    if p_lower <= 0.5:
        return CertificationResult(ABSTAIN, 0.0, p_lower, counts, queries)
    return CertificationResult(
        top, radius_from_p_lower(p_lower, cfg.sigma), p_lower, counts, queries
    )


def certify_dataset(
    model: DenoisedBlackBox,
    dataset: Dataset,
    cfg: CertifyConfig,
    root_seed: int,
    threads: int = 1,
) -> List[CertificationResult]:
    """
    Certifies every example with a seed derived from (root_seed, index),
    so results do not depend on the number of threads.
    """
    started = time.perf_counter()

    def run(index: int) -> CertificationResult:
        return certify(
            model,
            dataset.images[index],
            cfg,
            derive_seed(root_seed, "certify", index),
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(run, range(len(dataset))))
    abstained = sum(r.abstained for r in results)
    logger.info(
        f"Certified {len(results)} examples in "
        f"{humanfriendly.format_timespan(time.perf_counter() - started)} "
        f"({abstained} abstained)"
    )
    return results


def accuracy_curve(
    results: Sequence[CertificationResult],
    labels: Sequence[int],
    radii: Sequence[float],
) -> List[CurvePoint]:
    """
    Fraction of examples certified with the true label at radius >= r, for
    every r in `radii`. Abstentions count as incorrect.
    """
    if len(results) == 0:
        raise ValueError("Cannot build a certified accuracy curve from no examples")
    if len(results) != len(labels):
        raise ValueError(f"{len(results)} results but {len(labels)} labels")
    correct = SortedList(
        r.radius
        for r, label in zip(results, labels)
        if not r.abstained and r.label == int(label)
    )
    total = len(results)
    return [
        CurvePoint(
            float(r), (len(correct) - correct.bisect_left(r)) / total, total
        )
        for r in radii
    ]


def certified_accuracy_curve(
    model: DenoisedBlackBox,
    dataset: Dataset,
    cfg: CertifyConfig,
    root_seed: int,
    threads: int = 1,
) -> Tuple[List[CertificationResult], List[CurvePoint]]:
    if len(dataset) == 0:
        raise ValueError("Cannot certify an empty dataset")
    results = certify_dataset(model, dataset, cfg, root_seed, threads)
    return results, accuracy_curve(results, dataset.labels, cfg.radii)


def noisy_accuracy(
    model: DenoisedBlackBox,
    dataset: Dataset,
    sigma: float,
    root_seed: int,
) -> float:
    """Top-1 accuracy of the base model on one noisy copy of each example."""
    if len(dataset) == 0:
        return 0.0
    noise = np.stack(
        [
            gaussian_noise(
                dataset.sample_shape,
                sigma,
                derive_seed(root_seed, "noisy-accuracy", i),
            )
            for i in range(len(dataset))
        ]
    )
    predicted = model.predict_labels(dataset.images + noise)
    return float(np.mean(predicted == dataset.labels))

