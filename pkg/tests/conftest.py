import os

import numpy as np
import pytest

from zocertify.blackbox import BlackBox
from zocertify.blackbox import QueryCounter
from zocertify.data import generate_synthetic
from zocertify.models.autoencoder import AEConfig
from zocertify.models.autoencoder import Decoder
from zocertify.models.autoencoder import Encoder
from zocertify.models.classifier import Classifier
from zocertify.models.classifier import ClassifierConfig
from zocertify.models.rdunet import RDUNet
from zocertify.models.rdunet import RDUNetConfig

TEST_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "assets")
TINY_SIZE = 8
TINY_CHANNELS = 1
TINY_CLASSES = 3
DESK_ENV = "ZOCERTIFY_DESK"


def desk_enabled():
    return os.getenv(DESK_ENV) == "1"


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_datasets():
    return {
        "train": generate_synthetic(
            4, TINY_CLASSES, TINY_SIZE, 0, TINY_CHANNELS, "train"
        ),
        "test": generate_synthetic(
            2, TINY_CLASSES, TINY_SIZE, 0, TINY_CHANNELS, "test"
        ),
    }


@pytest.fixture
def tiny_classifier():
    config = ClassifierConfig(
        input_channels=TINY_CHANNELS,
        image_size=TINY_SIZE,
        num_classes=TINY_CLASSES,
        widths=(2, 3),
        epochs=1,
        batch_size=4,
    )
    return Classifier(config, np.random.default_rng(0)).eval()


@pytest.fixture
def counter():
    return QueryCounter()


@pytest.fixture
def blackbox(tiny_classifier, counter):
    return BlackBox.from_classifier(tiny_classifier, counter)


@pytest.fixture
def tiny_rdunet():
    config = RDUNetConfig(
        input_channels=TINY_CHANNELS,
        base_channels=2,
        depth=2,
        image_size=TINY_SIZE,
    )
    return RDUNet(config, np.random.default_rng(1))


@pytest.fixture
def tiny_autoencoder():
    config = AEConfig(
        input_channels=TINY_CHANNELS,
        image_size=TINY_SIZE,
        latent_dim=4,
        widths=(2, 3),
        pretrain_epochs=1,
    )
    return (
        Encoder(config, np.random.default_rng(2)),
        Decoder(config, np.random.default_rng(3)),
    )


class LinearBlackBoxModel:
    """
    Two-class model whose probability of class 1 is a fixed function of
    the mean pixel, so every reply is known in closed form.
    """

    def __init__(self, threshold=0.5, sharpness=20.0):
        self.threshold = threshold
        self.sharpness = sharpness

    def __call__(self, x):
        mean = x.reshape(len(x), -1).mean(axis=1)
        p1 = 1.0 / (1.0 + np.exp(-self.sharpness * (mean - self.threshold)))
        return np.stack([1.0 - p1, p1], axis=1)


@pytest.fixture
def linear_blackbox(counter):
    return BlackBox(
        LinearBlackBoxModel(),
        (TINY_CHANNELS, TINY_SIZE, TINY_SIZE),
        2,
        value_range=None,
        counter=counter,
    )
