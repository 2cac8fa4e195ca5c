"""Coarse-box-supervised image manipulation localization at desk scale."""

from .tensor import Tensor, NonFiniteError, backward, no_grad
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
