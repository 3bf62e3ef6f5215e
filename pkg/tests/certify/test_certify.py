import numpy as np
import pytest
from scipy.stats import norm

from zocertify.blackbox import BlackBox
from zocertify.blackbox import QueryCounter
from zocertify.blackbox import QueryPhase
from zocertify.certify import accuracy_curve
from zocertify.certify import certified_accuracy_curve
from zocertify.certify import certify
from zocertify.certify import certify_dataset
from zocertify.certify import CertificationResult
from zocertify.certify import CertifyConfig
from zocertify.certify import clopper_pearson_lower
from zocertify.certify import DenoisedBlackBox
from zocertify.certify import gaussian_quantile
from zocertify.certify import noisy_accuracy
from zocertify.certify import radius_from_p_lower
from zocertify.certify import sample_under_noise
from zocertify.const import ABSTAIN

SHAPE = (1, 8, 8)


class ThresholdModel:
    """Class 1 exactly when the first pixel exceeds `threshold`."""

    def __init__(self, threshold=0.5):
        self.threshold = threshold

    def __call__(self, x):
        ones = (x[:, 0, 0, 0] > self.threshold).astype(np.float64)
        return np.stack([1.0 - ones, ones], axis=1)


def threshold_model(counter=None, threshold=0.5):
    return DenoisedBlackBox(
        BlackBox(ThresholdModel(threshold), SHAPE, 2, value_range=None, counter=counter)
    )


def constant_model(counter=None, label=0, classes=3):
    def predict(x):
        p = np.zeros((len(x), classes))
        p[:, label] = 1.0
        return p

    return DenoisedBlackBox(BlackBox(predict, SHAPE, classes, counter=counter))


def test_radius_matches_closed_form():
    assert radius_from_p_lower(0.99, 0.25) == pytest.approx(0.58159, abs=1e-4)
    assert radius_from_p_lower(0.5, 0.25) == 0.0
    assert radius_from_p_lower(0.3, 0.25) == 0.0


def test_gaussian_quantile_rejects_endpoints():
    assert gaussian_quantile(0.5) == pytest.approx(0.0, abs=1e-15)
    for p in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            gaussian_quantile(p)


@pytest.mark.parametrize("n", [1, 10, 1000])
def test_clopper_pearson_all_successes(n):
    alpha = 0.001
    assert clopper_pearson_lower(n, n, alpha) == pytest.approx(
        alpha ** (1.0 / n), abs=1e-9
    )


def test_clopper_pearson_bounds():
    assert clopper_pearson_lower(0, 100, 0.001) == 0.0
    lowers = [clopper_pearson_lower(k, 100, 0.001) for k in range(0, 101, 10)]
    assert lowers == sorted(lowers)
    assert all(0.0 <= v < k / 100 or k == 0 for v, k in zip(lowers, range(0, 101, 10)))
    assert clopper_pearson_lower(50, 100, 0.01) < clopper_pearson_lower(50, 100, 0.1)


@pytest.mark.parametrize(
    "k,n,alpha", [(-1, 10, 0.01), (11, 10, 0.01), (1, 0, 0.01), (1, 10, 0.0), (1, 10, 1.0)]
)
def test_clopper_pearson_rejects_bad_arguments(k, n, alpha):
    with pytest.raises(ValueError):
        clopper_pearson_lower(k, n, alpha)


def test_sampling_matches_smoothed_probability():
    sigma = 0.25
    x = np.zeros(SHAPE)
    x[0, 0, 0] = 0.5 + 0.4 * sigma
    tally = sample_under_noise(threshold_model(), x, 20000, sigma, 0, batch_size=1000)
    assert tally.sum() == 20000
    assert tally[1] / 20000 == pytest.approx(norm.cdf(0.4), abs=0.01)


def test_sampling_is_reproducible_and_batch_size_free():
    x = np.full(SHAPE, 0.5)
    a = sample_under_noise(threshold_model(), x, 50, 0.25, 3, batch_size=7)
    b = sample_under_noise(threshold_model(), x, 50, 0.25, 3, batch_size=7)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        sample_under_noise(threshold_model(), x, 0, 0.25, 3)


def test_certify_constant_model():
    counter = QueryCounter()
    cfg = CertifyConfig(sigma=0.25, n0=10, n=100, alpha=0.001, batch_size=30)
    result = certify(constant_model(counter, label=2), np.full(SHAPE, 0.5), cfg, 0)
    p_lower = 0.001 ** (1.0 / 100)
    assert result.label == 2
    assert result.p_lower == pytest.approx(p_lower, abs=1e-9)
    assert result.radius == pytest.approx(0.25 * norm.ppf(p_lower), abs=1e-9)
    assert result.queries_spent == 110
    assert counter.phase_total(QueryPhase.CERTIFICATION) == 110
    np.testing.assert_array_equal(result.counts, [0, 0, 110])


def test_certify_abstains_at_the_decision_boundary():
    cfg = CertifyConfig(sigma=0.25, n0=20, n=200)
    x = np.zeros(SHAPE)
    x[0, 0, 0] = 0.5
    result = certify(threshold_model(), x, cfg, 1)
    assert result.abstained
    assert result.label == ABSTAIN
    assert result.radius == 0.0
    assert result.p_lower <= 0.5


def test_certify_abstains_when_queries_fail():
    def broken(x):
        return np.zeros((len(x), 5))

    model = DenoisedBlackBox(BlackBox(broken, SHAPE, 2))
    result = certify(model, np.full(SHAPE, 0.5), CertifyConfig(n0=5, n=10), 0)
    assert result.abstained
    assert result.error is not None
    assert result.queries_spent >= 1


def test_certification_is_thread_count_independent(tiny_classifier, tiny_datasets):
    cfg = CertifyConfig(sigma=0.25, n0=5, n=20, batch_size=10)
    test = tiny_datasets["test"]
    runs = []
    for threads in (1, 3):
        counter = QueryCounter()
        model = DenoisedBlackBox(BlackBox.from_classifier(tiny_classifier, counter))
        runs.append(certify_dataset(model, test, cfg, 11, threads=threads))
        assert counter.phase_total(QueryPhase.CERTIFICATION) == len(test) * 25
    for a, b in zip(*runs):
        assert a.label == b.label
        assert a.radius == b.radius
        np.testing.assert_array_equal(a.counts, b.counts)


def result(label, radius):
    return CertificationResult(label, radius, 0.9, np.zeros(3, dtype=np.int64), 10)


def test_accuracy_curve_counts_correct_certificates():
    results = [result(0, 0.3), result(1, 0.6), result(ABSTAIN, 0.0), result(2, 0.9)]
    labels = [0, 1, 1, 0]
    curve = accuracy_curve(results, labels, (0.0, 0.25, 0.5, 0.75))
    assert [p.certified_accuracy for p in curve] == [0.5, 0.5, 0.25, 0.0]
    assert [p.radius for p in curve] == [0.0, 0.25, 0.5, 0.75]
    assert all(p.n_examples == 4 for p in curve)


def test_accuracy_curve_is_inclusive_at_the_radius():
    curve = accuracy_curve([result(0, 0.5)], [0], (0.0, 0.5, 0.5000001))
    assert [p.certified_accuracy for p in curve] == [1.0, 1.0, 0.0]


def test_accuracy_curve_rejects_bad_input():
    with pytest.raises(ValueError):
        accuracy_curve([], [], (0.0,))
    with pytest.raises(ValueError):
        accuracy_curve([result(0, 0.1)], [0, 1], (0.0,))


def test_certified_accuracy_curve(tiny_classifier, tiny_datasets):
    cfg = CertifyConfig(sigma=0.25, n0=5, n=20, radii=(0.0, 0.25), batch_size=10)
    model = DenoisedBlackBox(BlackBox.from_classifier(tiny_classifier))
    results, curve = certified_accuracy_curve(model, tiny_datasets["test"], cfg, 0)
    assert len(results) == len(tiny_datasets["test"])
    assert [p.radius for p in curve] == [0.0, 0.25]
    assert curve[0].certified_accuracy >= curve[1].certified_accuracy


def test_denoised_blackbox_preprocessing(tiny_classifier, tiny_rdunet, tiny_autoencoder, rng):
    blackbox = BlackBox.from_classifier(tiny_classifier)
    x = rng.normal(0.5, 1.0, (4,) + SHAPE)
    plain = DenoisedBlackBox(blackbox)
    np.testing.assert_array_equal(plain.preprocess(x), np.clip(x, 0.0, 1.0))
    # a zero head makes the denoiser the identity
    denoised = DenoisedBlackBox(blackbox, denoiser=tiny_rdunet)
    np.testing.assert_array_equal(denoised.preprocess(x), np.clip(x, 0.0, 1.0))
    encoder, decoder = tiny_autoencoder
    full = DenoisedBlackBox(blackbox, tiny_rdunet, encoder, decoder)
    out = full.preprocess(x)
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert full.predict_labels(x).shape == (4,)
    assert blackbox.counter.phase_total(QueryPhase.CERTIFICATION) == 4
    with pytest.raises(ValueError):
        DenoisedBlackBox(blackbox, encoder=encoder)


def test_noisy_accuracy_without_noise_is_clean_accuracy(tiny_classifier, tiny_datasets):
    test = tiny_datasets["test"]
    model = DenoisedBlackBox(
        BlackBox.from_classifier(tiny_classifier), phase=QueryPhase.EVALUATION
    )
    clean = np.mean(tiny_classifier.predict_proba(test.images).argmax(axis=1) == test.labels)
    assert noisy_accuracy(model, test, 0.0, 0) == pytest.approx(clean)
    assert model.blackbox.counter.phase_total(QueryPhase.EVALUATION) == len(test)


def test_certify_config_validation():
    assert CertifyConfig().validate() == []
    errors = CertifyConfig(sigma=0.0, n0=10, n=5, alpha=1.0, radii=(0.5, 0.25)).validate()
    assert len(errors) == 5
