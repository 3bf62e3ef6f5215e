from .blackbox import BlackBox
from .blackbox import QueryCounter
from .blackbox import QueryPhase
from .certify import CertifyConfig
from .certify import DenoisedBlackBox
from .config import ExperimentConfig
from .config import load_config
from .errors import ConfigValidationError
from .errors import NumericalError
from .errors import ZOCertifyError
from .losses import LossWeights

__version__ = "0.1.0"

__all__ = [
    "BlackBox",
    "CertifyConfig",
    "ConfigValidationError",
    "DenoisedBlackBox",
    "ExperimentConfig",
    "LossWeights",
    "NumericalError",
    "QueryCounter",
    "QueryPhase",
    "ZOCertifyError",
    "load_config",
]
