import logging
from abc import ABC
from abc import abstractmethod
from typing import Dict
from typing import Optional

from zocertify import cli
from zocertify.const import ACCURACY_FILE_NAME
from zocertify.const import CERTIFY_RUN_DIR_FORMAT
from zocertify.const import CLASSIFIER_CHECKPOINT
from zocertify.const import CURVE_FILE_NAME
from zocertify.const import DEFEND_RUN_DIR_FORMAT
from zocertify.const import EXIT_OK
from zocertify.const import MANIFEST_FILE_NAME
from zocertify.const import TARGET_RUN_DIR
from zocertify.report import read_curve
from zocertify.storage import read_json
from zocertify.utils import format_value
from zocertify.utils import join_path
from zocertify.utils import path_exists
from zocertify.utils import read_csv

logger = logging.getLogger("bench")


class Metrics:
    SCA = "sca"
    TRAIN_QUERIES = "train_queries"
    CERTIFY_QUERIES = "certify_queries"
    CLEAN_ACCURACY = "clean_accuracy"
    NOISY_ACCURACY = "noisy_accuracy"

    def __init__(self):
        self.metrics_dict: Dict[str, float] = {}

    def update(self, metrics_key, metrics_value):
        self.metrics_dict[metrics_key] = metrics_value

    def get(self, metrics_key):
        return self.metrics_dict.get(metrics_key)

    def to_str(self):
        return str(self.metrics_dict)

    def __str__(self):
        return self.to_str()

    def __repr__(self):
        return self.to_str()


def rca_key(radius: float) -> str:
    return f"rca@{format_value(float(radius))}"


class AbstractBench(ABC):
    """
    One defense suite run end to end through the CLI commands: the shared
    target classifier (trained once per output directory), the defense,
    and its certification.
    """

    def __init__(self, args):
        self.args = args
        self.metrics = Metrics()
        self.label: Optional[str] = None

    def run(self, *argv) -> int:
        command = [
            argv[0],
            "--config",
            self.args.config,
            "--out",
            self.args.out,
            "--seed",
            str(self.args.seed),
            *argv[1:],
        ]
        logger.info(f"zocertify {' '.join(command)}")
        code = cli.main(command)
        if code != EXIT_OK:
            raise RuntimeError(f"zocertify {argv[0]} exited with status {code}")
        return code

    def init(self):
        checkpoint = join_path(self.args.out, TARGET_RUN_DIR, CLASSIFIER_CHECKPOINT)
        if path_exists(checkpoint):
            logger.info(f"Reusing target classifier {checkpoint}")
            return
        self.run("train-target")

    @abstractmethod
    def defend(self) -> Optional[str]:
        """Trains the defense and returns its run directory, or None."""

    def execute(self):
        defense_dir = self.defend()
        if defense_dir is None:
            self.run("certify", "--no-denoiser")
        else:
            self.run("certify", "--defense", defense_dir)
        self.collect()

    def collect(self):
        run_dir = join_path(
            self.args.out, CERTIFY_RUN_DIR_FORMAT.format(label=self.label)
        )
        manifest = read_json(join_path(run_dir, MANIFEST_FILE_NAME))
        curve = read_curve(join_path(run_dir, CURVE_FILE_NAME))
        self.metrics.update(Metrics.SCA, curve[0].certified_accuracy)
        for point in curve[1:]:
            self.metrics.update(rca_key(point.radius), point.certified_accuracy)
        self.metrics.update(Metrics.TRAIN_QUERIES, manifest["queries"]["train"])
        self.metrics.update(Metrics.CERTIFY_QUERIES, manifest["queries"]["certify"])
        for row in read_csv(join_path(run_dir, ACCURACY_FILE_NAME)):
            key = (
                Metrics.CLEAN_ACCURACY
                if row["measure"] == "clean"
                else Metrics.NOISY_ACCURACY
            )
            self.metrics.update(key, float(row["accuracy"]))


class AbstractDefenseBench(AbstractBench, ABC):
    method: str = ""

    def estimator(self) -> Optional[str]:
        return None

    def defend(self) -> str:
        estimator = cli.resolve_estimator(self.method, self.estimator())
        self.label = cli.defense_label(self.method, estimator)
        argv = ["defend", "--method", self.method]
        if estimator is not None:
            argv += ["--estimator", estimator]
        self.run(*argv)
        return join_path(
            self.args.out, DEFEND_RUN_DIR_FORMAT.format(label=self.label)
        )


class AbstractArgumentParser(ABC):
    @abstractmethod
    def parse_args(self, args=None, namespace=None):
        pass
