"""Small reverse-mode autodiff engine with conv/dense layers and Adam."""
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Network, build_network, forward
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor, conv2d

__all__ = [
    "Adam", "AdamState", "Network", "Tensor", "adam_step", "as_tensor", "build_network",
    "conv2d", "forward", "load_checkpoint", "save_checkpoint",
]
