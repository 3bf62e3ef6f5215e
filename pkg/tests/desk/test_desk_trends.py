"""
Desk-scale trend checks. Each takes minutes, so the module only runs with
ZOCERTIFY_DESK=1.
"""
import json
import os

import numpy as np
import pytest
from scipy.stats import norm

from tests.certify.test_certify import threshold_model
from tests.conftest import desk_enabled
from zocertify import cli
from zocertify.certify import certify
from zocertify.certify import CertifyConfig
from zocertify.const import EXIT_OK
from zocertify.report import read_curve
from zocertify.utils import read_csv

DESK_CONFIG = os.path.join(
    os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))),
    "benchmark",
    "desk.ini",
)

pytestmark = pytest.mark.skipif(
    not desk_enabled(), reason="desk runs need ZOCERTIFY_DESK=1"
)

DEFENSES = (
    ("zo-ruds", "rge"),
    ("zo-ae-ruds", "cge"),
    ("fo-ds", None),
)


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("desk"))

    def run(*argv):
        code = cli.main([argv[0], "--config", DESK_CONFIG, "--out", out, *argv[1:]])
        assert code == EXIT_OK, argv

    run("train-target")
    run("certify", "--no-denoiser")
    for method, estimator in DEFENSES:
        args = ["defend", "--method", method]
        if estimator:
            args += ["--estimator", estimator]
        run(*args)
        label = cli.defense_label(method, estimator)
        run("certify", "--defense", os.path.join(out, f"defend-{label}"))
    return out


def sca(out, label):
    return read_curve(os.path.join(out, f"certify-{label}", "curve.csv"))[0].certified_accuracy


@pytest.mark.timeout(3600)
def test_target_classifier_accuracy(desk_runs):
    rows = read_csv(os.path.join(desk_runs, "target", "accuracy.csv"))
    test = next(row for row in rows if row["split"] == "test")
    assert float(test["accuracy"]) >= 0.95


@pytest.mark.timeout(3600)
@pytest.mark.parametrize("label", ["zo-ruds-rge", "zo-ae-ruds-cge", "fo-ds"])
def test_training_lowers_the_loss(desk_runs, label):
    rows = read_csv(os.path.join(desk_runs, f"defend-{label}", "run_log.csv"))
    epochs = sorted({int(r["epoch"]) for r in rows})
    first = [float(r["total"]) for r in rows if int(r["epoch"]) == epochs[0]]
    last = [float(r["total"]) for r in rows if int(r["epoch"]) == epochs[-1]]
    assert sum(last) / len(last) < sum(first) / len(first)


@pytest.mark.timeout(3600)
def test_run_log_components_are_active(desk_runs):
    rows = read_csv(os.path.join(desk_runs, "defend-zo-ruds-rge", "run_log.csv"))
    for row in rows:
        ce, cs, mmd, total = (float(row[k]) for k in ("ce", "cs", "mmd", "total"))
        assert abs(total - (ce + cs + mmd)) <= 1e-12
    assert any(float(row["mmd"]) > 0 for row in rows)
    assert any(float(row["cs"]) > 0 for row in rows)


@pytest.mark.timeout(3600)
def test_defenses_beat_the_undefended_model(desk_runs):
    identity = sca(desk_runs, "identity")
    assert sca(desk_runs, "zo-ruds-rge") >= identity + 0.10
    assert sca(desk_runs, "zo-ae-ruds-cge") >= identity + 0.10


@pytest.mark.timeout(3600)
def test_method_ordering(desk_runs):
    rge = sca(desk_runs, "zo-ruds-rge")
    assert sca(desk_runs, "zo-ae-ruds-cge") >= rge
    assert sca(desk_runs, "fo-ds") >= rge - 0.05


@pytest.mark.timeout(3600)
def test_query_accounting(desk_runs):
    with open(os.path.join(desk_runs, "defend-zo-ruds-rge", "manifest.json")) as f:
        manifest = json.load(f)
    n_train, q, epochs = 300, 20, 30
    assert manifest["queries"]["training"] == epochs * n_train * (q + 1)
    assert manifest["queries"]["reference"] == n_train


@pytest.mark.timeout(1200)
def test_lower_bound_is_sound_over_repeated_certifications():
    sigma = 0.25
    p_star = norm.cdf(0.4)
    x = np.zeros((1, 8, 8))
    x[0, 0, 0] = 0.5 + 0.4 * sigma
    cfg = CertifyConfig(sigma=sigma, n0=100, n=1000, alpha=0.001, batch_size=1100)
    model = threshold_model()
    exceed = sum(
        certify(model, x, cfg, seed).p_lower > p_star for seed in range(1000)
    )
    assert exceed / 1000 <= 0.005
