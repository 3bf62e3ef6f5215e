from .estimators import cge_estimate
from .estimators import chain_to_params
from .estimators import Directions
from .estimators import GradientEstimate
from .estimators import rge_estimate
from .estimators import ZOConfig
from .estimators import ZOMethod
from .trainer import RunLog
from .trainer import StepRecord
from .trainer import TrainConfig
from .trainer import train_fo_ds
from .trainer import train_zo_ae_ruds
from .trainer import train_zo_ruds

__all__ = [
    "Directions",
    "GradientEstimate",
    "RunLog",
    "StepRecord",
    "TrainConfig",
    "ZOConfig",
    "ZOMethod",
    "cge_estimate",
    "chain_to_params",
    "rge_estimate",
    "train_fo_ds",
    "train_zo_ae_ruds",
    "train_zo_ruds",
]
