import os

import pytest

from zocertify.certify import CurvePoint
from zocertify.errors import ConfigValidationError
from zocertify.errors import FormatError
from zocertify.report import build_report
from zocertify.report import collect_rows
from zocertify.report import read_curve
from zocertify.report import write_curve
from zocertify.storage import write_json
from zocertify.utils import read_csv


def fake_run(
    out, label, accuracies, *, radii=(0.0, 0.25, 0.5), method="", estimator="", train=0
):
    run_dir = out / f"certify-{label}"
    run_dir.mkdir(parents=True)
    write_curve(
        str(run_dir / "curve.csv"),
        [CurvePoint(r, a, 4) for r, a in zip(radii, accuracies)],
    )
    write_json(
        str(run_dir / "manifest.json"),
        {
            "method": method,
            "estimator": estimator,
            "queries": {"train": train, "certify": 25},
            "wall_s": 0.0,
        },
    )


def test_report_table(tmp_path):
    fake_run(tmp_path, "identity", (0.5, 0.25, 0.0))
    fake_run(
        tmp_path,
        "zo-ruds-rge",
        (0.75, 0.5, 0.25),
        method="zo-ruds",
        estimator="rge",
        train=36,
    )
    (tmp_path / "defend-zo-ruds-rge").mkdir()
    text = build_report(str(tmp_path))
    table = read_csv(str(tmp_path / "report" / "table.csv"))
    assert [row["run"] for row in table] == ["identity", "zo-ruds-rge"]
    rge = table[1]
    assert rge["method"] == "zo-ruds"
    assert rge["estimator"] == "rge"
    assert float(rge["SCA"]) == 0.75
    assert float(rge["RCA@0.25"]) == 0.5
    assert float(rge["RCA@0.5"]) == 0.25
    assert int(rge["train_queries"]) == 36
    assert int(rge["certify_queries"]) == 25
    plot = read_csv(str(tmp_path / "report" / "plot_data.csv"))
    assert len(plot) == 6
    assert {row["series"] for row in plot} == {"identity", "zo-ruds-rge"}
    assert "zo-ruds-rge" in text
    assert "RCA@0.25" in text


def test_report_rejects_mixed_radii(tmp_path):
    fake_run(tmp_path, "identity", (0.5, 0.25, 0.0))
    fake_run(tmp_path, "fo-ds", (0.5, 0.25), radii=(0.0, 0.3))
    with pytest.raises(ConfigValidationError, match="one radii grid"):
        build_report(str(tmp_path))


def test_incomplete_runs_are_skipped(tmp_path):
    fake_run(tmp_path, "identity", (0.5, 0.25, 0.0))
    (tmp_path / "certify-broken").mkdir()
    rows = collect_rows(str(tmp_path))
    assert [row.run for row in rows] == ["identity"]
    assert rows[0].radii == (0.0, 0.25, 0.5)
    assert rows[0].sca == 0.5


def test_no_runs(tmp_path):
    with pytest.raises(ConfigValidationError):
        build_report(str(tmp_path / "missing"))


def test_malformed_curve(tmp_path):
    path = tmp_path / "curve.csv"
    path.write_text("radius,certified_accuracy,n_examples\n0.0,high,4\n")
    with pytest.raises(FormatError):
        read_curve(str(path))
    assert not os.path.exists(tmp_path / "report")
