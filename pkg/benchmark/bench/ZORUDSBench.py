from benchmark.AbstractBench import AbstractArgumentParser
from benchmark.AbstractBench import AbstractDefenseBench


class ZORUDSArgumentParser(AbstractArgumentParser):
    def __init__(self, main_parser):
        self.parser = main_parser
        self.parser.add_argument(
            "--estimator",
            choices=["rge", "cge"],
            default="rge",
            help="gradient estimator for the denoiser",
        )

    def parse_args(self, args=None, namespace=None):
        return self.parser.parse_args(args, namespace)


class ZORUDSBench(AbstractDefenseBench):
    method = "zo-ruds"

    def estimator(self):
        return self.args.estimator
