"""
Experiment configuration.

An experiment is an INI file with one section per component. Every
section maps onto the dataclass owned by that component; validation runs
before any compute and reports every problem at once.
"""
import configparser
import io
import logging
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from dataclasses import replace
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import fsspec

from .certify import CertifyConfig
from .const import MEDIAN_BANDWIDTH
from .const import ZOCERTIFY_OUTPUT_DIR_DEFAULT_VALUE
from .const import ZOCERTIFY_SEED_DEFAULT_VALUE
from .const import ZOCERTIFY_THREADS_DEFAULT_VALUE
from .data import DatasetConfig
from .errors import ConfigValidationError
from .losses import LossWeights
from .models.autoencoder import AEConfig
from .models.classifier import ClassifierConfig
from .models.rdunet import RDUNetConfig
from .utils import format_value
from .zo.estimators import Directions
from .zo.estimators import ZOConfig
from .zo.trainer import TrainConfig

logger = logging.getLogger(__name__)

LOG_LEVELS = ("debug", "info", "warn", "warning")


@dataclass
class RunConfig:
    seed: int = ZOCERTIFY_SEED_DEFAULT_VALUE
    output_dir: str = ZOCERTIFY_OUTPUT_DIR_DEFAULT_VALUE
    threads: int = ZOCERTIFY_THREADS_DEFAULT_VALUE
    log_level: str = "info"
    record_wall_time: bool = False

    def validate(self) -> List[str]:
        errors = []
        if not isinstance(self.seed, int) or self.seed < 0:
            errors.append("'seed' should be a non-negative integer")
        if not isinstance(self.threads, int) or self.threads <= 0:
            errors.append("'threads' should be a positive integer")
        if not self.output_dir:
            errors.append("'output_dir' should not be empty")
        if self.log_level.lower() not in LOG_LEVELS:
            errors.append(f"'log_level' should be one of {list(LOG_LEVELS)}")
        return errors


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("should be a boolean")


def _parse_int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ValueError("should be an integer") from None


def _parse_float(text: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ValueError("should be a number") from None


def _parse_list(item: Callable[[str], Any]) -> Callable[[str], Tuple]:
    def parse(text: str) -> Tuple:
        parts = [p for p in text.replace(",", " ").split() if p]
        return tuple(item(p) for p in parts)

    return parse


def _parse_optional(inner: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str):
        stripped = text.strip()
        if stripped == "" or stripped.lower() == "none":
            return None
        return inner(stripped)

    return parse


def _parse_bandwidth(text: str):
    stripped = text.strip().lower()
    if stripped == MEDIAN_BANDWIDTH:
        return MEDIAN_BANDWIDTH
    try:
        return float(stripped)
    except ValueError:
        raise ValueError(
            f"should be '{MEDIAN_BANDWIDTH}' or a positive number"
        ) from None


def _parse_directions(text: str) -> Directions:
    try:
        return Directions(text.strip().lower())
    except ValueError:
        raise ValueError(
            f"should be one of {[d.value for d in Directions]}"
        ) from None


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Directions):
        return value.value
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    return format_value(value)


_str = str
_opt_str = _parse_optional(str)
_int_list = _parse_list(_parse_int)
_float_list = _parse_list(_parse_float)

# section -> (attribute of ExperimentConfig, {key: parser})
SCHEMA: Dict[str, Tuple[str, Dict[str, Callable[[str], Any]]]] = {
    "run": (
        "run",
        {
            "seed": _parse_int,
            "output_dir": _str,
            "threads": _parse_int,
            "log_level": _str,
            "record_wall_time": _parse_bool,
        },
    ),
    "dataset": (
        "dataset",
        {
            "kind": _str,
            "num_classes": _parse_int,
            "channels": _parse_int,
            "image_size": _parse_int,
            "train_per_class": _parse_int,
            "test_per_class": _parse_int,
            "train_images": _opt_str,
            "train_labels": _opt_str,
            "test_images": _opt_str,
            "test_labels": _opt_str,
            "cache": _opt_str,
            "certify_limit": _parse_int,
        },
    ),
    "classifier": (
        "classifier",
        {
            "widths": _int_list,
            "epochs": _parse_int,
            "batch_size": _parse_int,
            "learning_rate": _parse_float,
        },
    ),
    "rdunet": (
        "rdunet",
        {
            "base_channels": _parse_int,
            "depth": _parse_int,
            "zero_init_head": _parse_bool,
        },
    ),
    "autoencoder": (
        "autoencoder",
        {
            "latent_dim": _parse_int,
            "widths": _int_list,
            "pretrain_epochs": _parse_int,
            "pretrain_learning_rate": _parse_float,
            "freeze_decoder": _parse_bool,
        },
    ),
    "zo": (
        "zo",
        {
            "q": _parse_int,
            "xi": _parse_float,
            "directions": _parse_directions,
            "unhalved_cge": _parse_bool,
        },
    ),
    "loss": (
        "loss",
        {
            "lambda_cs": _parse_float,
            "lambda_mmd": _parse_float,
            "bandwidth": _parse_bandwidth,
        },
    ),
    "train": (
        "train",
        {
            "epochs": _parse_int,
            "batch_size": _parse_int,
            "learning_rate": _parse_float,
            "sigma": _parse_float,
            "lr_milestones": _parse_optional(_int_list),
        },
    ),
    "certify": (
        "certify",
        {
            "sigma": _parse_float,
            "n0": _parse_int,
            "n": _parse_int,
            "alpha": _parse_float,
            "radii": _float_list,
            "batch_size": _parse_int,
        },
    ),
}


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    rdunet: RDUNetConfig = field(default_factory=RDUNetConfig)
    autoencoder: AEConfig = field(default_factory=AEConfig)
    zo: ZOConfig = field(default_factory=ZOConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)

    def __post_init__(self):
        self.sync()

    def sync(self):
        """Propagates dataset dimensions and the run seed into the model sections."""
        dims = dict(
            input_channels=self.dataset.channels,
            image_size=self.dataset.image_size,
        )
        self.classifier = replace(
            self.classifier, num_classes=self.dataset.num_classes, **dims
        )
        self.rdunet = replace(self.rdunet, **dims)
        self.autoencoder = replace(self.autoencoder, **dims)
        self.zo = replace(self.zo, seed=self.run.seed)
        self.train = replace(
            self.train, record_wall_time=self.run.record_wall_time
        )

    def validate(self) -> List[str]:
        errors = []
        for section, (attribute, _) in SCHEMA.items():
            for message in getattr(self, attribute).validate():
                errors.append(f"[{section}] {message}")
        if self.dataset.kind == "idx" and self.dataset.channels != 1:
            errors.append("[dataset] 'channels' should be 1 for idx datasets")
        return errors

    def check(self) -> "ExperimentConfig":
        errors = self.validate()
        if errors:
            raise ConfigValidationError(errors)
        return self

    def with_overrides(
        self,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        output_dir: Optional[str] = None,
    ) -> "ExperimentConfig":
        run = self.run
        if seed is not None:
            run = replace(run, seed=seed)
        if threads is not None:
            run = replace(run, threads=threads)
        if output_dir is not None:
            run = replace(run, output_dir=output_dir)
        return replace(self, run=run)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """
    Builds an ExperimentConfig from INI text. Unknown sections and keys and
    unparsable values are all collected into one ConfigValidationError.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigValidationError([f"{source}: {e}"]) from e
    errors = []
    sections: Dict[str, Any] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        attribute, keys = SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in keys:
                errors.append(f"[{section}] unknown key '{key}'")
                continue
            try:
                values[key] = keys[key](raw)
            except ValueError as e:
                errors.append(f"[{section}] '{key}' {e}")
        sections[attribute] = values
    if errors:
        raise ConfigValidationError(errors)
    defaults = ExperimentConfig()
    parts = {
        attribute: replace(getattr(defaults, attribute), **values)
        for attribute, values in sections.items()
    }
    return ExperimentConfig(**parts)


def load_config(path: str) -> ExperimentConfig:
    try:
        with fsspec.open(path, "rb") as f:
            text = f.read().decode("utf-8")
    except FileNotFoundError as e:
        raise ConfigValidationError([f"config file does not exist: {path}"]) from e
    return parse_config(text, source=path)


def render_config(config: ExperimentConfig) -> str:
    """The resolved configuration as INI text, in a fixed order."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, (attribute, keys) in SCHEMA.items():
        part = getattr(config, attribute)
        names = {f.name for f in fields(part)}
        parser[section] = {
            key: _format(getattr(part, key)) for key in keys if key in names
        }
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def write_resolved(config: ExperimentConfig, path: str):
    with fsspec.open(path, "wb") as f:
        f.write(render_config(config).encode("utf-8"))
