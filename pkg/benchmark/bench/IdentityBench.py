from benchmark.AbstractBench import AbstractBench
from zocertify.const import NO_DENOISER_LABEL


class IdentityBench(AbstractBench):
    """The black box smoothed without any denoiser."""

    def defend(self):
        self.label = NO_DENOISER_LABEL
        return None
