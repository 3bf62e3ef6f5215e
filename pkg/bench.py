#!/bin/python3
import argparse
import json
import logging
import os
import time
from enum import Enum

import humanfriendly

from benchmark.bench import FODSBench
from benchmark.bench import IdentityBench
from benchmark.bench import ZOAERUDSBench
from benchmark.bench import ZORUDSBench

PROFILE_RESULT_FORMAT = "{}_profile_result.prof"
BENCH_RESULT_FORMAT = "{}_bench_result.json"
DURATION_METRIC_KEY = "duration"
DESK_CONFIG = os.path.join(os.path.dirname(__file__), "benchmark", "desk.ini")


class TestSuite(Enum):
    IDENTITY = "IDENTITY"
    ZO_RUDS = "ZO_RUDS"
    ZO_AE_RUDS = "ZO_AE_RUDS"
    FO_DS = "FO_DS"


def init_main_parser():
    parser = argparse.ArgumentParser(
        description="Desk-scale defense benchmark"
    )
    parser.add_argument(
        "--testsuite",
        choices=[ts.value for ts in TestSuite],
        required=True,
        help="The test suite name, choices:{}".format(list(TestSuite)),
    )
    parser.add_argument(
        "--config",
        type=str,
        default=DESK_CONFIG,
        help="experiment INI file",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help="root seed shared by every stage",
    )
    parser.add_argument(
        "--out",
        type=str,
        default=os.path.join(os.path.dirname(__file__), "bench_runs"),
        help="zocertify output directory; the target classifier is reused across suites",
    )
    parser.add_argument(
        "--profile",
        action="store_true",
        default=False,
        required=False,
        help="Whether to use cProfile to profile the benchmark",
    )
    parser.add_argument(
        "--result_dir",
        type=str,
        default=os.path.join(os.path.dirname(__file__), "bench_result"),
        required=False,
        help="The location to store the benchmark result",
    )
    return parser


def get_test_suite(main_parser, main_args):
    if main_args.testsuite == TestSuite.IDENTITY.name:
        testsuite = IdentityBench.IdentityBench(main_args)
    elif main_args.testsuite == TestSuite.ZO_RUDS.name:
        suite_parser = ZORUDSBench.ZORUDSArgumentParser(main_parser)
        testsuite = ZORUDSBench.ZORUDSBench(suite_parser.parse_args())
    elif main_args.testsuite == TestSuite.ZO_AE_RUDS.name:
        suite_parser = ZOAERUDSBench.ZOAERUDSArgumentParser(main_parser)
        testsuite = ZOAERUDSBench.ZOAERUDSBench(suite_parser.parse_args())
    elif main_args.testsuite == TestSuite.FO_DS.name:
        testsuite = FODSBench.FODSBench(main_args)
    else:
        raise ValueError("No test suite specified, bail.")
    return testsuite


def configure_logging(path):
    log_path = os.path.join(path, "bench.log")
    logging.basicConfig(
        filename=log_path,
        level=logging.INFO,
        format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
    )
    return logging.getLogger("bench")


def main():
    main_parser = init_main_parser()
    main_args, _ = main_parser.parse_known_args()
    os.makedirs(main_args.result_dir, exist_ok=True)
    logger = configure_logging(main_args.result_dir)
    test_suite = get_test_suite(main_parser, main_args)
    start_time = time.time()
    test_suite.init()
    if main_args.profile:
        import cProfile

        profile_result_location = os.path.join(
            main_args.result_dir,
            PROFILE_RESULT_FORMAT.format(main_args.testsuite),
        )
        cProfile.runctx(
            "test_suite.execute()",
            globals(),
            locals(),
            filename=profile_result_location,
        )
        print(f"Profile result saved to {profile_result_location}")
    else:
        test_suite.execute()
    duration = time.time() - start_time
    print(
        f"Benchmark {main_args.testsuite} ({test_suite.label}): "
        f"total time: {humanfriendly.format_timespan(duration)}"
    )
    result = {
        "suite": main_args.testsuite,
        "label": test_suite.label,
        "seed": main_args.seed,
        "metrics": {
            DURATION_METRIC_KEY: duration,
            **test_suite.metrics.metrics_dict,
        },
    }
    for key, value in test_suite.metrics.metrics_dict.items():
        print(f"{key}: {value}")
    json_result_location = os.path.join(
        main_args.result_dir, BENCH_RESULT_FORMAT.format(main_args.testsuite)
    )
    with open(json_result_location, "w") as f:
        json.dump(result, f, indent=2)
    logger.info(f"{main_args.testsuite}: {test_suite.metrics}")
    print(f"Find more benchmark results in dir {main_args.result_dir}")


if __name__ == "__main__":
    main()
