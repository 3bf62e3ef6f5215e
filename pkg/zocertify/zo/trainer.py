"""
Denoiser training procedures.

ZO-RUDS and ZO-AE-RUDS see the target model only through a BlackBox:
probabilities in, query counts out. FO-DS is the first-order baseline and
is the only trainer that receives a WhiteBoxHandle.
"""
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence

import humanfriendly
import numpy as np

from ..blackbox import BlackBox
from ..blackbox import QueryPhase
from ..blackbox import WhiteBoxHandle
from ..const import LEARNING_RATE_DEFAULT_VALUE
from ..const import NOISE_SIGMA_DEFAULT_VALUE
from ..const import PIXEL_MAX
from ..const import PIXEL_MIN
from ..data import Dataset
from ..data import noisy_batch
from ..errors import NumericalError
from ..errors import TrainingDivergedError
from ..losses import LossBreakdown
from ..losses import LossWeights
from ..losses import resolve_bandwidth
from ..losses import total_loss
from ..models.autoencoder import Decoder
from ..models.autoencoder import Encoder
from ..models.base import Module
from ..models.rdunet import RDUNet
from ..numerics import functional as F
from ..numerics.params import sgd_step
from ..numerics.params import StepSchedule
from ..numerics.tensor import Tensor
from ..utils import substream
from .estimators import chain_to_params
from .estimators import estimate
from .estimators import ZOConfig

logger = logging.getLogger(__name__)

REFERENCE_BATCH_SIZE = 256


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = LEARNING_RATE_DEFAULT_VALUE
    sigma: float = NOISE_SIGMA_DEFAULT_VALUE
    lr_milestones: Optional[Sequence[int]] = None
    record_wall_time: bool = False

    def validate(self) -> List[str]:
        errors = []
        if not isinstance(self.epochs, int) or self.epochs < 0:
            errors.append("'epochs' should be a non-negative integer")
        if not isinstance(self.batch_size, int) or self.batch_size <= 0:
            errors.append("'batch_size' should be a positive integer")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            errors.append("'learning_rate' should be a positive number")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            errors.append("'sigma' should be a non-negative number")
        if self.lr_milestones is not None and any(
            not isinstance(m, int) or m <= 0 for m in self.lr_milestones
        ):
            errors.append("'lr_milestones' should be a list of positive integers")
        return errors

    def schedule(self) -> StepSchedule:
        return StepSchedule.for_epochs(
            self.learning_rate, self.epochs, self.lr_milestones
        )


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    ce: float
    cs: float
    mmd: float
    total: float
    objective: float
    queries_total: int
    wall_ms: float


@dataclass
class RunLog:
    records: List[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def initial_total(self) -> Optional[float]:
        return self.records[0].total if self.records else None

    @property
    def final_total(self) -> Optional[float]:
        return self.records[-1].total if self.records else None

    def epoch_means(self, column: str = "total") -> List[float]:
        by_epoch: Dict[int, List[float]] = {}
        for r in self.records:
            by_epoch.setdefault(r.epoch, []).append(getattr(r, column))
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def clip_to_pixels(x: np.ndarray) -> np.ndarray:
    return np.clip(x, PIXEL_MIN, PIXEL_MAX)


def reference_probabilities(
    blackbox: BlackBox, images: np.ndarray
) -> np.ndarray:
    """f(x) for every clean training image, queried once per run."""
    chunks = [
        blackbox.query_probabilities(
            images[start : start + REFERENCE_BATCH_SIZE], QueryPhase.REFERENCE
        )
        for start in range(0, len(images), REFERENCE_BATCH_SIZE)
    ]
    return np.concatenate(chunks) if chunks else np.zeros((0, blackbox.num_classes))


@contextmanager
def _divergence_guard(modules: Sequence[Module], step: int, run_log: RunLog):
    """Restores the last finite state of `modules` when a step fails."""
    snapshots = [m.state_dict() for m in modules]
    try:
        yield
    except NumericalError as e:
        for module, state in zip(modules, snapshots):
            module.load_state_dict(state)
        raise TrainingDivergedError(
            f"Training diverged at step {step}: {e}", step, run_log
        ) from e


def _check_finite(breakdown: LossBreakdown, step: int):
    if not np.isfinite(breakdown.total):
        raise NumericalError(f"non-finite loss {breakdown} at step {step}")


def _batches(n: int, batch_size: int, root_seed: int, epoch: int):
    order = substream(root_seed, "train-order", epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _batched_estimates(
    blackbox: BlackBox,
    decode: Callable[[np.ndarray], np.ndarray],
    z: np.ndarray,
    p_clean: np.ndarray,
    base_probs: np.ndarray,
    base_value: float,
    bandwidth: float,
    weights: LossWeights,
    zo_cfg: ZOConfig,
    root_seed: int,
    step: int,
) -> np.ndarray:
    """
    One estimate per example of d(total)/d(z_b): every perturbation of row
    b is decoded, clipped and queried, and the batch total is recomputed
    with only row b's reply replaced.
    """
    grads = np.zeros_like(z)
    for b in range(len(z)):

        def loss_at(points, b=b):
            probs = blackbox.query_probabilities(
                clip_to_pixels(decode(points)), QueryPhase.TRAINING
            )
            values = np.empty(len(probs))
            for k, p in enumerate(probs):
                replaced = base_probs.copy()
                replaced[b] = p
                values[k] = total_loss(
                    p_clean, replaced, weights, bandwidth=bandwidth
                ).total
            return values

        result = estimate(
            loss_at,
            z[b],
            zo_cfg,
            rng=substream(root_seed, "train-directions", step, b),
            base_value=base_value,
            batched=True,
        )
        grads[b] = result.vector
    return grads


def _record(
    run_log: RunLog,
    step: int,
    epoch: int,
    breakdown: LossBreakdown,
    objective: float,
    queries_total: int,
    started: float,
    train_cfg: TrainConfig,
):
    wall_ms = (
        (time.perf_counter() - started) * 1000.0
        if train_cfg.record_wall_time
        else 0
    )
    run_log.append(
        StepRecord(
            step=step,
            epoch=epoch,
            ce=breakdown.ce,
            cs=breakdown.cs,
            mmd=breakdown.mmd,
            total=breakdown.total,
            objective=objective,
            queries_total=queries_total,
            wall_ms=wall_ms,
        )
    )
    logger.debug(
        f"step {step} epoch {epoch}: ce {breakdown.ce:.5f} cs {breakdown.cs:.5f} "
        f"mmd {breakdown.mmd:.5f} total {breakdown.total:.5f} queries {queries_total}"
    )


def _log_run_finished(name: str, run_log: RunLog, started: float, queries: int):
    if not run_log.records:
        logger.info(f"{name}: no optimizer steps")
        return
    logger.info(
        f"{name}: {len(run_log)} steps in "
        f"{humanfriendly.format_timespan(time.perf_counter() - started)}, "
        f"total loss {run_log.initial_total:.5f} -> {run_log.final_total:.5f}, "
        f"{queries} black-box queries"
    )


def train_zo_ruds(
    dataset: Dataset,
    denoiser: RDUNet,
    blackbox: BlackBox,
    weights: LossWeights,
    zo_cfg: ZOConfig,
    train_cfg: TrainConfig,
    root_seed: int,
) -> RunLog:
    """
    Trains the denoiser against a black box with the estimate taken at the
    denoised image. Per batch of B examples the black box answers B base
    queries plus q (RGE) or 2 d (CGE) perturbed queries per example.
    """
    run_log = RunLog()
    if train_cfg.epochs == 0 or len(dataset) == 0:
        return run_log
    started = time.perf_counter()
    reference = reference_probabilities(blackbox, dataset.images)
    schedule = train_cfg.schedule()
    params = denoiser.parameters()
    step = 0
    for epoch in range(train_cfg.epochs):
        lr = schedule.learning_rate(epoch)
        for indices in _batches(
            len(dataset), train_cfg.batch_size, root_seed, epoch
        ):
            step_started = time.perf_counter()
            with _divergence_guard([denoiser], step, run_log):
                sample = noisy_batch(
                    dataset.images,
                    indices,
                    root_seed,
                    "train-noise",
                    epoch,
                    train_cfg.sigma,
                )
                _, x_hat = denoiser(
                    Tensor(sample.x_star), training=len(indices) >= 2
                )
                p_clean = reference[indices]
                base_probs = blackbox.query_probabilities(
                    clip_to_pixels(x_hat.data), QueryPhase.TRAINING
                )
                bandwidth = resolve_bandwidth(
                    weights.bandwidth, p_clean, base_probs
                )
                breakdown = total_loss(
                    p_clean, base_probs, weights, bandwidth=bandwidth
                )
                _check_finite(breakdown, step)
                grads = _batched_estimates(
                    blackbox,
                    lambda points: points,
                    x_hat.data,
                    p_clean,
                    base_probs,
                    breakdown.total,
                    bandwidth,
                    weights,
                    zo_cfg,
                    root_seed,
                    step,
                )
                chain_to_params(grads, x_hat, params)
                sgd_step(params, lr)
            _record(
                run_log,
                step,
                epoch,
                breakdown,
                breakdown.total,
                blackbox.counter.total,
                step_started,
                train_cfg,
            )
            step += 1
    _log_run_finished("zo-ruds", run_log, started, blackbox.counter.total)
    return run_log


def train_zo_ae_ruds(
    dataset: Dataset,
    denoiser: RDUNet,
    encoder: Encoder,
    decoder: Decoder,
    blackbox: BlackBox,
    weights: LossWeights,
    zo_cfg: ZOConfig,
    train_cfg: TrainConfig,
    root_seed: int,
    freeze_decoder: bool = False,
) -> RunLog:
    """
    Trains denoiser and encoder with estimates taken in the latent space:
    the black box is queried at decoder(z) and its perturbations, costing
    2 d_r + 1 (CGE) or q + 1 (RGE) queries per example. Unless frozen, the
    decoder then takes a white-box reconstruction step towards the denoised
    image.
    """
    run_log = RunLog()
    if train_cfg.epochs == 0 or len(dataset) == 0:
        return run_log
    started = time.perf_counter()
    reference = reference_probabilities(blackbox, dataset.images)
    schedule = train_cfg.schedule()
    params = denoiser.parameters() + encoder.parameters()
    decoder_params = decoder.parameters()

    def decode(z: np.ndarray) -> np.ndarray:
        return decoder.decode(z)

    step = 0
    for epoch in range(train_cfg.epochs):
        lr = schedule.learning_rate(epoch)
        for indices in _batches(
            len(dataset), train_cfg.batch_size, root_seed, epoch
        ):
            step_started = time.perf_counter()
            training = len(indices) >= 2
            with _divergence_guard([denoiser, encoder, decoder], step, run_log):
                sample = noisy_batch(
                    dataset.images,
                    indices,
                    root_seed,
                    "train-noise",
                    epoch,
                    train_cfg.sigma,
                )
                _, x_hat = denoiser(Tensor(sample.x_star), training=training)
                z = encoder(x_hat, training=training)
                p_clean = reference[indices]
                base_probs = blackbox.query_probabilities(
                    clip_to_pixels(decode(z.data)), QueryPhase.TRAINING
                )
                bandwidth = resolve_bandwidth(
                    weights.bandwidth, p_clean, base_probs
                )
                breakdown = total_loss(
                    p_clean, base_probs, weights, bandwidth=bandwidth
                )
                _check_finite(breakdown, step)
                grads = _batched_estimates(
                    blackbox,
                    decode,
                    z.data,
                    p_clean,
                    base_probs,
                    breakdown.total,
                    bandwidth,
                    weights,
                    zo_cfg,
                    root_seed,
                    step,
                )
                chain_to_params(grads, z, params)
                sgd_step(params, lr)
                if not freeze_decoder:
                    decoder.zero_grad()
                    reconstruction = F.squared_error(
                        decoder(Tensor(z.data.copy()), training=training),
                        x_hat.data.copy(),
                    )
                    reconstruction.backward()
                    sgd_step(decoder_params, lr)
            _record(
                run_log,
                step,
                epoch,
                breakdown,
                breakdown.total,
                blackbox.counter.total,
                step_started,
                train_cfg,
            )
            step += 1
    _log_run_finished("zo-ae-ruds", run_log, started, blackbox.counter.total)
    return run_log


def fo_ds_objective(
    denoiser: RDUNet,
    whitebox: WhiteBoxHandle,
    x: np.ndarray,
    x_star: np.ndarray,
    p_clean: np.ndarray,
    training: bool,
):
    """
    Stability-regularized denoising objective: batch mean of
    ||D(x*) - x||^2 plus the soft cross-entropy between f(x) and f(D(x*)).
    Returns (objective, logits of the denoised batch).
    """
    _, x_hat = denoiser(Tensor(x_star), training=training)
    mse = F.squared_error(x_hat, x)
    logits = whitebox.logits(x_hat)
    stability = F.soft_cross_entropy_with_logits(logits, p_clean)
    return F.add(mse, stability), logits


def train_fo_ds(
    dataset: Dataset,
    denoiser: RDUNet,
    whitebox: WhiteBoxHandle,
    weights: LossWeights,
    train_cfg: TrainConfig,
    root_seed: int,
) -> RunLog:
    """
    First-order denoised-smoothing baseline with full backpropagation
    through the classifier. The run log carries the same loss breakdown as
    the zeroth-order trainers, computed from white-box probabilities, and
    the minimized objective in its own column. No black-box queries are
    made.
    """
    run_log = RunLog()
    if train_cfg.epochs == 0 or len(dataset) == 0:
        return run_log
    started = time.perf_counter()
    reference = whitebox.predict_proba(dataset.images)
    schedule = train_cfg.schedule()
    params = denoiser.parameters()
    step = 0
    for epoch in range(train_cfg.epochs):
        lr = schedule.learning_rate(epoch)
        for indices in _batches(
            len(dataset), train_cfg.batch_size, root_seed, epoch
        ):
            step_started = time.perf_counter()
            with _divergence_guard([denoiser], step, run_log):
                sample = noisy_batch(
                    dataset.images,
                    indices,
                    root_seed,
                    "train-noise",
                    epoch,
                    train_cfg.sigma,
                )
                p_clean = reference[indices]
                denoiser.zero_grad()
                objective, logits = fo_ds_objective(
                    denoiser,
                    whitebox,
                    sample.x,
                    sample.x_star,
                    p_clean,
                    training=len(indices) >= 2,
                )
                if not np.isfinite(objective.data):
                    raise NumericalError(
                        f"non-finite objective {float(objective.data)} at step {step}"
                    )
                objective.backward()
                whitebox.zero_grad()
                sgd_step(params, lr)
                breakdown = total_loss(
                    p_clean, F.stable_softmax(logits.data), weights
                )
            _record(
                run_log,
                step,
                epoch,
                breakdown,
                float(objective.data),
                0,
                step_started,
                train_cfg,
            )
            step += 1
    _log_run_finished("fo-ds", run_log, started, 0)
    return run_log
