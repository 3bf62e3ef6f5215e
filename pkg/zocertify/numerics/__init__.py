from .functional import batchnorm
from .functional import concat
from .functional import conv2d
from .functional import conv2d_transpose
from .functional import cross_entropy
from .functional import dense
from .functional import maxpool2
from .functional import relu
from .functional import softmax
from .functional import squared_error
from .params import LayerParams
from .params import sgd_step
from .params import StepSchedule
from .tensor import no_grad
from .tensor import parameter
from .tensor import Tensor

__all__ = [
    "Tensor",
    "LayerParams",
    "StepSchedule",
    "batchnorm",
    "concat",
    "conv2d",
    "conv2d_transpose",
    "cross_entropy",
    "dense",
    "maxpool2",
    "no_grad",
    "parameter",
    "relu",
    "sgd_step",
    "softmax",
    "squared_error",
]
