"""
CSV emission for run logs, certifications and curves, and the
consolidated comparison table across certification runs.
"""
import logging
from dataclasses import dataclass
from typing import Dict
from typing import List
from typing import Sequence
from typing import Tuple

import fsspec
from humanfriendly.tables import format_pretty_table

from .certify import CertificationResult
from .certify import CurvePoint
from .const import CERTIFICATION_FIELDS
from .const import CURVE_FIELDS
from .const import CURVE_FILE_NAME
from .const import MANIFEST_FILE_NAME
from .const import PLOT_DATA_FILE_NAME
from .const import REPORT_RUN_DIR
from .const import RUN_LOG_FIELDS
from .const import TABLE_FILE_NAME
from .errors import ConfigValidationError
from .errors import FormatError
from .storage import read_json
from .utils import format_value
from .utils import join_path
from .utils import makedirs
from .utils import read_csv
from .utils import write_csv
from .zo.trainer import RunLog

logger = logging.getLogger(__name__)

CERTIFY_DIR_PREFIX = "certify-"


def write_run_log(path: str, run_log: RunLog):
    write_csv(
        path,
        RUN_LOG_FIELDS,
        (
            [getattr(record, name) for name in RUN_LOG_FIELDS]
            for record in run_log.records
        ),
    )


def write_certification(
    path: str,
    results: Sequence[CertificationResult],
    labels: Sequence[int],
):
    write_csv(
        path,
        CERTIFICATION_FIELDS,
        (
            [i, int(label), r.label, r.radius, r.p_lower, r.queries_spent]
            for i, (r, label) in enumerate(zip(results, labels))
        ),
    )


def write_curve(path: str, curve: Sequence[CurvePoint]):
    write_csv(
        path,
        CURVE_FIELDS,
        ([p.radius, p.certified_accuracy, p.n_examples] for p in curve),
    )


def read_curve(path: str) -> List[CurvePoint]:
    rows = read_csv(path)
    try:
        return [
            CurvePoint(
                float(row["radius"]),
                float(row["certified_accuracy"]),
                int(row["n_examples"]),
            )
            for row in rows
        ]
    except (KeyError, ValueError) as e:
        raise FormatError(f"Malformed curve file {path}: {e}") from e


@dataclass
class ReportRow:
    run: str
    method: str
    estimator: str
    curve: List[CurvePoint]
    train_queries: int
    certify_queries: int
    wall_s: float

    @property
    def radii(self) -> Tuple[float, ...]:
        return tuple(p.radius for p in self.curve)

    @property
    def sca(self) -> float:
        return self.curve[0].certified_accuracy


def _certify_dirs(out_dir: str) -> List[str]:
    fs, _, paths = fsspec.get_fs_token_paths(out_dir)
    if not fs.exists(paths[0]):
        return []
    names = []
    for entry in fs.ls(paths[0], detail=True):
        name = entry["name"].rstrip("/").rsplit("/", 1)[-1]
        if entry["type"] == "directory" and name.startswith(CERTIFY_DIR_PREFIX):
            names.append(name)
    return sorted(names)


def collect_rows(out_dir: str) -> List[ReportRow]:
    rows = []
    for name in _certify_dirs(out_dir):
        run_dir = join_path(out_dir, name)
        manifest_path = join_path(run_dir, MANIFEST_FILE_NAME)
        curve_path = join_path(run_dir, CURVE_FILE_NAME)
        try:
            manifest = read_json(manifest_path)
            curve = read_curve(curve_path)
        except FileNotFoundError:
            logger.warning(f"Skipping incomplete certification run {run_dir}")
            continue
        if not curve:
            logger.warning(f"Skipping certification run {run_dir} with an empty curve")
            continue
        queries = manifest.get("queries", {})
        rows.append(
            ReportRow(
                run=name[len(CERTIFY_DIR_PREFIX) :],
                method=manifest.get("method", ""),
                estimator=manifest.get("estimator", ""),
                curve=curve,
                train_queries=int(queries.get("train", 0)),
                certify_queries=int(queries.get("certify", 0)),
                wall_s=float(manifest.get("wall_s", 0.0)),
            )
        )
    return rows


def _radius_label(radius: float) -> str:
    return f"RCA@{format_value(radius)}"


def build_report(out_dir: str) -> str:
    """
    Writes report/table.csv (one row per certification run) and
    report/plot_data.csv ((x, y, series) triples), and returns the table as
    aligned text. All runs must share one radii grid.
    """
    rows = collect_rows(out_dir)
    if not rows:
        raise ConfigValidationError(
            [f"no completed certification runs under {out_dir}"]
        )
    grids: Dict[Tuple[float, ...], List[str]] = {}
    for row in rows:
        grids.setdefault(row.radii, []).append(row.run)
    if len(grids) > 1:
        raise ConfigValidationError(
            [
                f"runs {runs} use radii {list(radii)}"
                for radii, runs in grids.items()
            ]
            + ["certification runs must share one radii grid"]
        )
    radii = rows[0].radii
    header = (
        ["run", "method", "estimator", "SCA"]
        + [_radius_label(r) for r in radii if r > 0]
        + ["train_queries", "certify_queries", "wall_s"]
    )
    table = [
        [row.run, row.method, row.estimator, row.sca]
        + [p.certified_accuracy for p in row.curve if p.radius > 0]
        + [row.train_queries, row.certify_queries, row.wall_s]
        for row in rows
    ]
    report_dir = join_path(out_dir, REPORT_RUN_DIR)
    makedirs(report_dir)
    write_csv(join_path(report_dir, TABLE_FILE_NAME), header, table)
    write_csv(
        join_path(report_dir, PLOT_DATA_FILE_NAME),
        ("x", "y", "series"),
        (
            [p.radius, p.certified_accuracy, row.run]
            for row in rows
            for p in row.curve
        ),
    )
    logger.info(f"Wrote report for {len(rows)} runs to {report_dir}")
    return format_pretty_table(
        [[format_value(v) for v in line] for line in table], header
    )
