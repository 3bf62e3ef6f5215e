from benchmark.AbstractBench import AbstractArgumentParser
from benchmark.AbstractBench import AbstractDefenseBench


class ZOAERUDSArgumentParser(AbstractArgumentParser):
    def __init__(self, main_parser):
        self.parser = main_parser
        self.parser.add_argument(
            "--estimator",
            choices=["cge", "rge"],
            default="cge",
            help="gradient estimator in the latent space",
        )

    def parse_args(self, args=None, namespace=None):
        return self.parser.parse_args(args, namespace)


class ZOAERUDSBench(AbstractDefenseBench):
    """Denoiser and encoder trained with latent-space estimates."""

    method = "zo-ae-ruds"

    def estimator(self):
        return self.args.estimator
