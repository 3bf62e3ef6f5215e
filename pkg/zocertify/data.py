import logging
import struct
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import fsspec
import numpy as np

from .const import IDX_IMAGES_MAGIC
from .const import IDX_LABELS_MAGIC
from .errors import ConfigValidationError
from .errors import FormatError
from .storage import load_checkpoint
from .storage import save_checkpoint
from .utils import derive_seed
from .utils import path_exists
from .utils import substream

logger = logging.getLogger(__name__)

PATTERNS = ("bars", "disk", "cross", "ring", "diagonal")
TINT_ON = 1.0
TINT_OFF = 0.35
PIXEL_JITTER = 0.05

_IDX_HEADER = struct.Struct(">I")


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    num_classes: int = 3
    channels: int = 3
    image_size: int = 16
    train_per_class: int = 100
    test_per_class: int = 20
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    cache: Optional[str] = None
    certify_limit: int = 0

    def validate(self) -> List[str]:
        errors = []
        if self.kind not in ("synthetic", "idx"):
            errors.append("'kind' should be one of ['synthetic', 'idx']")
        for name in ("channels", "image_size", "train_per_class", "test_per_class"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                errors.append(f"'{name}' should be a positive integer")
        if not isinstance(self.num_classes, int) or self.num_classes < 2:
            errors.append("'num_classes' should be an integer of at least 2")
        if not isinstance(self.certify_limit, int) or self.certify_limit < 0:
            errors.append("'certify_limit' should be a non-negative integer")
        if self.kind == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                path = getattr(self, name)
                if not path:
                    errors.append(f"'{name}' is required for idx datasets")
                elif not path_exists(path):
                    errors.append(f"'{name}' file does not exist: {path}")
        return errors


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str
    seed: int
    num_classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, limit: int) -> "Dataset":
        if limit <= 0 or limit >= len(self):
            return self
        return Dataset(
            self.images[:limit],
            self.labels[:limit],
            self.split,
            self.seed,
            self.num_classes,
        )


@dataclass
class NoisySample:
    x: np.ndarray
    eta: np.ndarray
    sigma: float
    x_star: np.ndarray = field(init=False)

    def __post_init__(self):
        self.x_star = self.x + self.eta


def gaussian_noise(shape, sigma: float, seed) -> np.ndarray:
    """
    i.i.d. N(0, sigma^2) entries; `seed` is an integer or a Generator.
    sigma = 0 yields an exact zero array.
    """
    if sigma < 0:
        raise ValueError(f"sigma should be non-negative, got {sigma}")
    if sigma == 0:
        return np.zeros(shape, dtype=np.float64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.normal(0.0, sigma, size=shape)


def batch_noise(
    root_seed: int,
    stream: str,
    epoch: int,
    indices: Sequence[int],
    sample_shape: Tuple[int, ...],
    sigma: float,
) -> np.ndarray:
    """Per-example noise, drawn from a substream keyed by (epoch, index)."""
    shape = (len(indices),) + tuple(sample_shape)
    if sigma == 0:
        return np.zeros(shape, dtype=np.float64)
    return np.stack(
        [
            gaussian_noise(
                sample_shape, sigma, derive_seed(root_seed, stream, epoch, int(i))
            )
            for i in indices
        ]
    ).reshape(shape)


def noisy_batch(
    images: np.ndarray,
    indices: Sequence[int],
    root_seed: int,
    stream: str,
    epoch: int,
    sigma: float,
) -> NoisySample:
    x = images[np.asarray(indices)]
    eta = batch_noise(root_seed, stream, epoch, indices, x.shape[1:], sigma)
    return NoisySample(x=x, eta=eta, sigma=sigma)


def _pattern_mask(pattern: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.35 * size, 0.65 * size, size=2)
    r = rng.uniform(0.25 * size, 0.4 * size)
    w = max(1.0, r / 3.0)
    dy, dx = yy - cy, xx - cx
    box = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if pattern == "bars":
        period = max(2.0, r / 2.0)
        return box & (np.mod(dy + r, period) < period / 2.0)
    if pattern == "disk":
        return dy**2 + dx**2 <= r**2
    if pattern == "cross":
        return ((np.abs(dy) < w) & (np.abs(dx) <= r)) | (
            (np.abs(dx) < w) & (np.abs(dy) <= r)
        )
    if pattern == "ring":
        dist = np.sqrt(dy**2 + dx**2)
        return (dist <= r) & (dist >= r / 2.0)
    if pattern == "diagonal":
        return box & (np.abs(dy - dx) < w)
    raise ValueError(f"Unknown pattern '{pattern}'")


def _synthetic_image(
    label: int, channels: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    mask = _pattern_mask(PATTERNS[label % len(PATTERNS)], size, rng)
    tint = np.full(channels, TINT_OFF)
    tint[label % channels] = TINT_ON
    image = tint[:, None, None] * mask[None].astype(np.float64)
    image += rng.normal(0.0, PIXEL_JITTER, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def generate_synthetic(
    n_per_class: int,
    num_classes: int,
    size: int,
    seed: int,
    channels: int = 3,
    split: str = "train",
    divisor: int = 1,
) -> Dataset:
    """
    Geometric-pattern classes (bars, disk, cross, ring, diagonal) with a
    class color tint, random position and scale, and pixel jitter. Each
    split draws from its own seed stream, so train and test never share an
    image generator state.
    """
    if not isinstance(size, int) or size <= 0 or size % divisor:
        raise ValueError(
            f"image size {size} should be a positive multiple of {divisor}"
        )
    if n_per_class <= 0 or num_classes < 2:
        raise ValueError(
            f"need n_per_class > 0 and at least 2 classes, got {n_per_class}, {num_classes}"
        )
    labels = np.repeat(np.arange(num_classes), n_per_class)
    order = substream(seed, f"synthetic-{split}-order").permutation(len(labels))
    labels = labels[order]
    images = np.stack(
        [
            _synthetic_image(
                int(label), channels, size, substream(seed, f"synthetic-{split}", i)
            )
            for i, label in enumerate(labels)
        ]
    )
    logger.debug(
        f"Generated {len(labels)} synthetic {split} images of size {channels}x{size}x{size}"
    )
    return Dataset(images, labels.astype(np.int64), split, seed, num_classes)


def _read_idx(path: str, magic: int, what: str) -> Tuple[Tuple[int, ...], bytes]:
    with fsspec.open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise FormatError(
            f"{path}: truncated {what} header, expected at least 4 bytes but got {len(data)}",
            0,
        )
    (found,) = _IDX_HEADER.unpack_from(data, 0)
    if found != magic:
        raise FormatError(
            f"{path}: bad {what} magic at offset 0, expected 0x{magic:08x} but got 0x{found:08x}",
            0,
        )
    ndim = magic & 0xFF
    header_size = 4 + 4 * ndim
    if len(data) < header_size:
        raise FormatError(
            f"{path}: truncated {what} header, expected {header_size} bytes but got {len(data)}",
            4,
        )
    dims = tuple(
        _IDX_HEADER.unpack_from(data, 4 + 4 * i)[0] for i in range(ndim)
    )
    expected = header_size + int(np.prod(dims, dtype=np.int64))
    if len(data) != expected:
        raise FormatError(
            f"{path}: {what} payload at offset {header_size} has wrong size, "
            f"expected {expected} bytes in total but got {len(data)}",
            header_size,
        )
    return dims, data[header_size:]


def load_idx(
    images_path: str,
    labels_path: str,
    split: str = "train",
    num_classes: Optional[int] = None,
) -> Dataset:
    """Reads an IDX uint8 image file and its label file; pixels scaled to [0, 1]."""
    image_dims, pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    label_dims, raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if image_dims[0] != label_dims[0]:
        raise FormatError(
            f"count mismatch at offset 4: {images_path} holds {image_dims[0]} images "
            f"but {labels_path} holds {label_dims[0]} labels",
            4,
        )
    count, rows, cols = image_dims
    images = (
        np.frombuffer(pixels, dtype=np.uint8)
        .reshape(count, 1, rows, cols)
        .astype(np.float64)
        / 255.0
    )
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(images, labels, split, 0, num_classes)


def save_dataset_cache(path: str, datasets: Dict[str, Dataset]) -> str:
    arrays = {}
    for split, dataset in datasets.items():
        arrays[f"{split}.images"] = dataset.images
        arrays[f"{split}.labels"] = dataset.labels.astype(np.float64)
        arrays[f"{split}.meta"] = np.array(
            [dataset.seed, dataset.num_classes], dtype=np.float64
        )
    return save_checkpoint(path, arrays)


def load_dataset_cache(path: str) -> Dict[str, Dataset]:
    arrays = load_checkpoint(path)
    splits = sorted({name.split(".", 1)[0] for name in arrays})
    datasets = {}
    for split in splits:
        seed, num_classes = arrays[f"{split}.meta"]
        datasets[split] = Dataset(
            arrays[f"{split}.images"],
            arrays[f"{split}.labels"].astype(np.int64),
            split,
            int(seed),
            int(num_classes),
        )
    return datasets


def load_datasets(config: DatasetConfig, seed: int, divisor: int = 1) -> Dict[str, Dataset]:
    """Train and test splits for an experiment, using the cache when present."""
    if config.kind == "idx":
        missing = [
            f"'{name}' file does not exist: {getattr(config, name)}"
            for name in ("train_images", "train_labels", "test_images", "test_labels")
            if not getattr(config, name) or not path_exists(getattr(config, name))
        ]
        if missing:
            raise ConfigValidationError(missing)
        return {
            "train": load_idx(
                config.train_images, config.train_labels, "train", config.num_classes
            ),
            "test": load_idx(
                config.test_images, config.test_labels, "test", config.num_classes
            ),
        }
    if config.cache and path_exists(config.cache):
        datasets = load_dataset_cache(config.cache)
        if datasets["train"].seed == seed:
            logger.info(f"Loaded synthetic dataset cache {config.cache}")
            return datasets
        logger.warning(
            f"Dataset cache {config.cache} was built with seed {datasets['train'].seed}, regenerating"
        )
    datasets = {
        "train": generate_synthetic(
            config.train_per_class,
            config.num_classes,
            config.image_size,
            seed,
            config.channels,
            "train",
            divisor,
        ),
        "test": generate_synthetic(
            config.test_per_class,
            config.num_classes,
            config.image_size,
            seed,
            config.channels,
            "test",
            divisor,
        ),
    }
    if config.cache:
        save_dataset_cache(config.cache, datasets)
    return datasets
