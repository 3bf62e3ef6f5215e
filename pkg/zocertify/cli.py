"""
Command-line driver for the zocertify pipeline.

    zocertify train-target --config PATH [--seed N] [--threads K] [--out DIR]
    zocertify defend       --config PATH --method METHOD [--estimator EST]
    zocertify certify      --config PATH (--defense DIR | --no-denoiser)
    zocertify gradcheck    [--seeds N]
    zocertify report       --out DIR

Exit status is 0 on success, 2 on a validation error and 3 on a numerical
failure.
"""
import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import replace
from typing import Dict
from typing import Optional
from typing import Tuple

import humanfriendly

from .blackbox import BlackBox
from .blackbox import QueryCounter
from .blackbox import QueryPhase
from .blackbox import WhiteBoxHandle
from .certify import certified_accuracy_curve
from .certify import DenoisedBlackBox
from .certify import noisy_accuracy
from .config import ExperimentConfig
from .config import load_config
from .config import write_resolved
from .const import ACCURACY_FILE_NAME
from .const import CERTIFICATION_FILE_NAME
from .const import CERTIFY_RUN_DIR_FORMAT
from .const import CLASSIFIER_CHECKPOINT
from .const import CONFIG_FILE_NAME
from .const import CURVE_FILE_NAME
from .const import DECODER_CHECKPOINT
from .const import DEFEND_RUN_DIR_FORMAT
from .const import DENOISER_CHECKPOINT
from .const import ENCODER_CHECKPOINT
from .const import EXIT_NUMERICAL_ERROR
from .const import EXIT_OK
from .const import EXIT_VALIDATION_ERROR
from .const import MANIFEST_FILE_NAME
from .const import NO_DENOISER_LABEL
from .const import RUN_LOG_FILE_NAME
from .const import TARGET_RUN_DIR
from .data import Dataset
from .data import load_datasets
from .errors import ConfigValidationError
from .errors import FormatError
from .errors import NumericalError
from .errors import TrainingDivergedError
from .gradcheck import run_suite
from .models.autoencoder import Decoder
from .models.autoencoder import Encoder
from .models.autoencoder import pretrain_autoencoder
from .models.classifier import accuracy
from .models.classifier import Classifier
from .models.classifier import fit_classifier
from .models.rdunet import RDUNet
from .report import build_report
from .report import write_certification
from .report import write_curve
from .report import write_run_log
from .storage import read_json
from .storage import write_json
from .utils import configure_logging
from .utils import file_content_hash
from .utils import join_path
from .utils import makedirs
from .utils import path_exists
from .utils import set_log_level
from .utils import substream
from .utils import write_csv
from .zo.estimators import ZOMethod
from .zo.trainer import train_fo_ds
from .zo.trainer import train_zo_ae_ruds
from .zo.trainer import train_zo_ruds

logger = logging.getLogger(__name__)

# method -> valid estimators; fo-ds takes none
METHOD_ESTIMATORS: Dict[str, Tuple[str, ...]] = {
    "zo-ruds": ("rge", "cge"),
    "zo-ae-ruds": ("cge", "rge"),
    "fo-ds": (),
}
# estimator used when --estimator is omitted
DEFAULT_ESTIMATORS: Dict[str, str] = {
    "zo-ae-ruds": "cge",
}


def method_matrix() -> str:
    return "; ".join(
        f"{method}: {', '.join(estimators) if estimators else '(none)'}"
        for method, estimators in METHOD_ESTIMATORS.items()
    )


def resolve_estimator(method: str, estimator: Optional[str]) -> Optional[str]:
    """
    Checks a method/estimator pair against the valid matrix. A method with
    a listed default gets it when the estimator is omitted.
    """
    if method not in METHOD_ESTIMATORS:
        raise ConfigValidationError(
            [f"unknown method '{method}', valid pairs are {method_matrix()}"]
        )
    valid = METHOD_ESTIMATORS[method]
    if estimator is None and method in DEFAULT_ESTIMATORS:
        return DEFAULT_ESTIMATORS[method]
    if estimator is None and not valid:
        return None
    if estimator is None:
        raise ConfigValidationError(
            [f"method '{method}' requires --estimator, valid pairs are {method_matrix()}"]
        )
    if estimator not in valid:
        raise ConfigValidationError(
            [
                f"method '{method}' does not accept estimator '{estimator}', "
                f"valid pairs are {method_matrix()}"
            ]
        )
    return estimator


def defense_label(method: str, estimator: Optional[str]) -> str:
    return method if estimator is None else f"{method}-{estimator}"


def init_main_parser():
    parser = argparse.ArgumentParser(
        prog="zocertify",
        description="Zeroth-order denoised smoothing for black-box classifiers",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub, threads=False):
        sub.add_argument(
            "--config", type=str, required=True, help="experiment INI file"
        )
        sub.add_argument(
            "--seed", type=int, default=None, help="overrides [run] seed"
        )
        sub.add_argument(
            "--out", type=str, default=None, help="overrides [run] output_dir"
        )
        if threads:
            sub.add_argument(
                "--threads",
                type=int,
                default=None,
                help="caps the number of worker threads",
            )

    common(
        subparsers.add_parser(
            "train-target", help="train the classifier sealed as the black box"
        ),
        threads=True,
    )
    defend = subparsers.add_parser("defend", help="train a denoiser")
    common(defend)
    defend.add_argument(
        "--method", choices=list(METHOD_ESTIMATORS), required=True
    )
    defend.add_argument(
        "--estimator",
        choices=sorted({e for v in METHOD_ESTIMATORS.values() for e in v}),
        default=None,
        help=f"valid pairs: {method_matrix()}",
    )
    certify = subparsers.add_parser(
        "certify", help="certify the smoothed classifier on the test split"
    )
    common(certify, threads=True)
    source = certify.add_mutually_exclusive_group(required=True)
    source.add_argument(
        "--defense", type=str, help="run directory written by 'defend'"
    )
    source.add_argument(
        "--no-denoiser",
        action="store_true",
        default=False,
        help="certify the black box without a denoiser",
    )
    gradcheck = subparsers.add_parser(
        "gradcheck", help="finite-difference and estimator oracle suite"
    )
    gradcheck.add_argument("--seeds", type=int, default=20)
    report = subparsers.add_parser(
        "report", help="consolidate certification runs into one table"
    )
    report.add_argument("--out", type=str, required=True)
    return parser


def prepare_config(args) -> ExperimentConfig:
    config = load_config(args.config).with_overrides(
        seed=args.seed,
        threads=getattr(args, "threads", None),
        output_dir=args.out,
    )
    return config.check()


@contextmanager
def run_directory(config: ExperimentConfig, name: str):
    """Creates a run directory holding the resolved config and a log file."""
    run_dir = join_path(config.run.output_dir, name)
    makedirs(run_dir)
    write_resolved(config, join_path(run_dir, CONFIG_FILE_NAME))
    handler = None
    if "://" not in run_dir:
        handler = configure_logging(run_dir, "zocertify")
        set_log_level(
            logging.getLogger("zocertify"), {"log_level": config.run.log_level}
        )
    try:
        yield run_dir
    finally:
        if handler is not None:
            logging.getLogger("zocertify").removeHandler(handler)
            handler.close()


def _datasets(config: ExperimentConfig) -> Dict[str, Dataset]:
    return load_datasets(config.dataset, config.run.seed)


def _target_checkpoint(config: ExperimentConfig) -> str:
    path = join_path(
        config.run.output_dir, TARGET_RUN_DIR, CLASSIFIER_CHECKPOINT
    )
    if not path_exists(path):
        raise ConfigValidationError(
            [f"classifier checkpoint does not exist: {path} (run train-target first)"]
        )
    return path


def _load_classifier(config: ExperimentConfig) -> Tuple[Classifier, str]:
    path = _target_checkpoint(config)
    classifier = Classifier(
        config.classifier, substream(config.run.seed, "classifier-init")
    ).load(path)
    return classifier.eval(), path


def _elapsed(config: ExperimentConfig, started: float) -> float:
    if not config.run.record_wall_time:
        return 0.0
    return time.perf_counter() - started


def cmd_train_target(config: ExperimentConfig) -> int:
    started = time.perf_counter()
    with run_directory(config, TARGET_RUN_DIR) as run_dir:
        datasets = _datasets(config)
        classifier = Classifier(
            config.classifier, substream(config.run.seed, "classifier-init")
        )
        history = fit_classifier(
            classifier,
            datasets["train"].images,
            datasets["train"].labels,
            config.run.seed,
        )
        checkpoint = join_path(run_dir, CLASSIFIER_CHECKPOINT)
        digest = classifier.save(checkpoint)
        accuracies = {
            split: accuracy(classifier, d.images, d.labels)
            for split, d in datasets.items()
        }
        write_csv(
            join_path(run_dir, ACCURACY_FILE_NAME),
            ("split", "accuracy", "n_examples"),
            [
                [split, accuracies[split], len(datasets[split])]
                for split in sorted(datasets)
            ],
        )
        write_json(
            join_path(run_dir, MANIFEST_FILE_NAME),
            {
                "command": "train-target",
                "seed": config.run.seed,
                "consumed": {},
                "produced": {CLASSIFIER_CHECKPOINT: digest},
                "final_loss": history[-1] if history else None,
                "accuracy": accuracies,
                "wall_s": _elapsed(config, started),
            },
        )
        logger.info(
            f"Trained target classifier: test accuracy "
            f"{accuracies['test']:.4f} in "
            f"{humanfriendly.format_timespan(time.perf_counter() - started)}"
        )
    return EXIT_OK


def cmd_defend(
    config: ExperimentConfig, method: str, estimator: Optional[str]
) -> int:
    estimator = resolve_estimator(method, estimator)
    label = defense_label(method, estimator)
    classifier, classifier_path = _load_classifier(config)
    started = time.perf_counter()
    seed = config.run.seed
    with run_directory(
        config, DEFEND_RUN_DIR_FORMAT.format(label=label)
    ) as run_dir:
        train = _datasets(config)["train"]
        counter = QueryCounter()
        blackbox = BlackBox.from_classifier(classifier, counter)
        denoiser = RDUNet(config.rdunet, substream(seed, "denoiser-init"))
        modules = {DENOISER_CHECKPOINT: denoiser}
        status = "failed"
        run_log = None
        try:
            if method == "zo-ruds":
                run_log = train_zo_ruds(
                    train,
                    denoiser,
                    blackbox,
                    config.loss,
                    replace(config.zo, method=ZOMethod(estimator)),
                    config.train,
                    seed,
                )
            elif method == "zo-ae-ruds":
                encoder = Encoder(config.autoencoder, substream(seed, "encoder-init"))
                decoder = Decoder(config.autoencoder, substream(seed, "decoder-init"))
                modules[ENCODER_CHECKPOINT] = encoder
                modules[DECODER_CHECKPOINT] = decoder
                pretrain_autoencoder(
                    encoder,
                    decoder,
                    train.images,
                    config.train.batch_size,
                    config.train.sigma,
                    seed,
                )
                run_log = train_zo_ae_ruds(
                    train,
                    denoiser,
                    encoder,
                    decoder,
                    blackbox,
                    config.loss,
                    replace(config.zo, method=ZOMethod(estimator)),
                    config.train,
                    seed,
                    freeze_decoder=config.autoencoder.freeze_decoder,
                )
            else:
                run_log = train_fo_ds(
                    train,
                    denoiser,
                    WhiteBoxHandle(classifier),
                    config.loss,
                    config.train,
                    seed,
                )
            status = "completed"
        except TrainingDivergedError as e:
            status = "diverged"
            run_log = e.run_log
            logger.error(f"{label}: {e}; saving the restored state")
            raise
        finally:
            produced = {
                name: module.save(join_path(run_dir, name))
                for name, module in modules.items()
            }
            if run_log is not None:
                write_run_log(join_path(run_dir, RUN_LOG_FILE_NAME), run_log)
            write_json(
                join_path(run_dir, MANIFEST_FILE_NAME),
                {
                    "command": "defend",
                    "label": label,
                    "method": method,
                    "estimator": estimator or "",
                    "seed": seed,
                    "status": status,
                    "steps": len(run_log) if run_log is not None else 0,
                    "consumed": {
                        CLASSIFIER_CHECKPOINT: file_content_hash(classifier_path)
                    },
                    "produced": produced,
                    "queries": counter.snapshot(),
                    "wall_s": _elapsed(config, started),
                },
            )
    return EXIT_OK


def _load_defense(config: ExperimentConfig, defense_dir: str):
    manifest_path = join_path(defense_dir, MANIFEST_FILE_NAME)
    if not path_exists(manifest_path):
        raise ConfigValidationError(
            [f"defense run manifest does not exist: {manifest_path}"]
        )
    manifest = read_json(manifest_path)
    seed = config.run.seed
    modules = {}
    for name, module in (
        (DENOISER_CHECKPOINT, lambda: RDUNet(config.rdunet, substream(seed, "denoiser-init"))),
        (ENCODER_CHECKPOINT, lambda: Encoder(config.autoencoder, substream(seed, "encoder-init"))),
        (DECODER_CHECKPOINT, lambda: Decoder(config.autoencoder, substream(seed, "decoder-init"))),
    ):
        if name not in manifest.get("produced", {}):
            continue
        path = join_path(defense_dir, name)
        if not path_exists(path):
            raise ConfigValidationError([f"checkpoint does not exist: {path}"])
        modules[name] = module().load(path).eval()
    if DENOISER_CHECKPOINT not in modules:
        raise ConfigValidationError(
            [f"defense run {defense_dir} produced no denoiser checkpoint"]
        )
    return manifest, modules


def cmd_certify(
    config: ExperimentConfig, defense_dir: Optional[str]
) -> int:
    classifier, classifier_path = _load_classifier(config)
    consumed = {CLASSIFIER_CHECKPOINT: file_content_hash(classifier_path)}
    modules = {}
    if defense_dir is None:
        manifest = {"label": NO_DENOISER_LABEL, "method": NO_DENOISER_LABEL}
    else:
        manifest, modules = _load_defense(config, defense_dir)
        consumed.update(manifest.get("produced", {}))
    label = manifest["label"]
    started = time.perf_counter()
    with run_directory(
        config, CERTIFY_RUN_DIR_FORMAT.format(label=label)
    ) as run_dir:
        test = _datasets(config)["test"].subset(config.dataset.certify_limit)
        counter = QueryCounter()
        blackbox = BlackBox.from_classifier(classifier, counter)
        parts = dict(
            denoiser=modules.get(DENOISER_CHECKPOINT),
            encoder=modules.get(ENCODER_CHECKPOINT),
            decoder=modules.get(DECODER_CHECKPOINT),
        )
        results, curve = certified_accuracy_curve(
            DenoisedBlackBox(blackbox, **parts),
            test,
            config.certify,
            config.run.seed,
            config.run.threads,
        )
        write_certification(
            join_path(run_dir, CERTIFICATION_FILE_NAME), results, test.labels
        )
        write_curve(join_path(run_dir, CURVE_FILE_NAME), curve)
        clean = accuracy(classifier, test.images, test.labels)
        noisy = noisy_accuracy(
            DenoisedBlackBox(blackbox, phase=QueryPhase.EVALUATION, **parts),
            test,
            config.certify.sigma,
            config.run.seed,
        )
        write_csv(
            join_path(run_dir, ACCURACY_FILE_NAME),
            ("measure", "accuracy", "n_examples"),
            [["clean", clean, len(test)], ["noisy", noisy, len(test)]],
        )
        write_json(
            join_path(run_dir, MANIFEST_FILE_NAME),
            {
                "command": "certify",
                "label": label,
                "method": manifest.get("method", ""),
                "estimator": manifest.get("estimator", ""),
                "seed": config.run.seed,
                "radii": [float(r) for r in config.certify.radii],
                "consumed": consumed,
                "produced": {},
                "queries": {
                    "train": int(manifest.get("queries", {}).get("total", 0)),
                    "certify": counter.phase_total(QueryPhase.CERTIFICATION),
                },
                "wall_s": _elapsed(config, started),
            },
        )
        logger.info(
            f"{label}: SCA {curve[0].certified_accuracy:.4f} over {len(test)} "
            f"examples, noisy accuracy {noisy:.4f}"
        )
    return EXIT_OK


def cmd_gradcheck(seeds: int) -> int:
    results = run_suite(seeds)
    passed = all(r.passed for r in results)
    print(
        json.dumps(
            {"passed": passed, "checks": [r.as_dict() for r in results]},
            indent=2,
        )
    )
    return EXIT_OK if passed else EXIT_NUMERICAL_ERROR


def cmd_report(out_dir: str) -> int:
    print(build_report(out_dir))
    return EXIT_OK


def dispatch(args) -> int:
    if args.command == "gradcheck":
        return cmd_gradcheck(args.seeds)
    if args.command == "report":
        return cmd_report(args.out)
    config = prepare_config(args)
    if args.command == "train-target":
        return cmd_train_target(config)
    if args.command == "defend":
        return cmd_defend(config, args.method, args.estimator)
    if args.command == "certify":
        return cmd_certify(config, None if args.no_denoiser else args.defense)
    raise ValueError(f"Unknown command {args.command}")


def main(argv=None) -> int:
    parser = init_main_parser()
    args = parser.parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.INFO,
            format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
        )
    try:
        return dispatch(args)
    except ConfigValidationError as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_VALIDATION_ERROR
    except FormatError as e:
        logger.error(f"Invalid input file: {e}")
        print(f"Invalid input file: {e}", file=sys.stderr)
        return EXIT_VALIDATION_ERROR
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        print(f"Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
