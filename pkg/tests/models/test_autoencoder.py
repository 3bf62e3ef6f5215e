import numpy as np
import pytest

from zocertify.errors import ShapeMismatchError
from zocertify.models.autoencoder import AEConfig
from zocertify.models.autoencoder import pretrain_autoencoder
from zocertify.numerics.tensor import Tensor


def test_latent_and_reconstruction_shapes(tiny_autoencoder, rng):
    encoder, decoder = tiny_autoencoder
    x = rng.uniform(0.0, 1.0, (3, 1, 8, 8))
    z = encoder(Tensor(x), training=False)
    assert z.shape == (3, 4)
    assert decoder.decode(z.data).shape == x.shape


def test_latent_must_be_smaller_than_input():
    errors = AEConfig(input_channels=1, image_size=4, latent_dim=16, widths=(2,)).validate()
    assert any("latent_dim" in e for e in errors)


def test_decoder_rejects_wrong_latent(tiny_autoencoder):
    _, decoder = tiny_autoencoder
    with pytest.raises(ShapeMismatchError):
        decoder(Tensor(np.zeros((2, 5))))


@pytest.mark.timeout(60)
def test_pretraining_reduces_reconstruction_loss(tiny_autoencoder, tiny_datasets):
    encoder, decoder = tiny_autoencoder
    images = tiny_datasets["train"].images
    history = pretrain_autoencoder(
        encoder,
        decoder,
        images,
        batch_size=4,
        sigma=0.25,
        root_seed=0,
        epochs=8,
        learning_rate=0.01,
    )
    assert len(history) == 8
    assert history[-1] < history[0]
    assert not encoder.training and not decoder.training


def test_pretraining_is_deterministic(tiny_datasets):
    from zocertify.models.autoencoder import Decoder
    from zocertify.models.autoencoder import Encoder

    config = AEConfig(input_channels=1, image_size=8, latent_dim=4, widths=(2, 3))
    states = []
    for _ in range(2):
        encoder = Encoder(config, np.random.default_rng(0))
        decoder = Decoder(config, np.random.default_rng(1))
        pretrain_autoencoder(
            encoder, decoder, tiny_datasets["train"].images, 4, 0.25, 3, epochs=1
        )
        states.append(encoder.state_dict())
    for key in states[0]:
        np.testing.assert_array_equal(states[0][key], states[1][key])
