from .layers import (
    Conv2d,
    MaxPool2d,
    Param,
    ReLU,
    conv2d_backward,
    conv2d_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
)
from .loss import mse_loss
from .optim import Adam, TrainingDiverged
from .network import Network, Sequential, network_from_spec
from .gradcheck import GradCheckReport, gradient_check
from .checkpoint import NNCK_MAGIC, NNCK_VERSION, load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "Conv2d",
    "GradCheckReport",
    "NNCK_MAGIC",
    "NNCK_VERSION",
    "MaxPool2d",
    "Network",
    "Param",
    "ReLU",
    "Sequential",
    "TrainingDiverged",
    "conv2d_backward",
    "conv2d_forward",
    "gradient_check",
    "load_checkpoint",
    "maxpool_backward",
    "maxpool_forward",
    "mse_loss",
    "network_from_spec",
    "relu_backward",
    "relu_forward",
    "save_checkpoint",
]
