from serfocal.nn.checkpoint import load_checkpoint, save_checkpoint
from serfocal.nn.gradcheck import grad_check, numeric_gradient, relative_error
from serfocal.nn.layers import BatchNorm, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2d, ReLU
from serfocal.nn.optim import SGD, Adam
from serfocal.nn.tensor import Tensor

__all__ = [
    "Adam", "BatchNorm", "Conv2d", "GlobalAvgPool", "Layer", "Linear", "MaxPool2d",
    "ReLU", "SGD", "Tensor", "grad_check", "load_checkpoint", "numeric_gradient",
    "relative_error", "save_checkpoint",
]
