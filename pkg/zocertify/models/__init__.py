from .autoencoder import AEConfig
from .autoencoder import Decoder
from .autoencoder import Encoder
from .autoencoder import pretrain_autoencoder
from .classifier import Classifier
from .classifier import ClassifierConfig
from .classifier import fit_classifier
from .rdunet import RDUNet
from .rdunet import RDUNetConfig

__all__ = [
    "AEConfig",
    "Classifier",
    "ClassifierConfig",
    "Decoder",
    "Encoder",
    "RDUNet",
    "RDUNetConfig",
    "fit_classifier",
    "pretrain_autoencoder",
]
