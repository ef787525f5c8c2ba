"""Sparse-transformer siamese tracker built on a small numpy autodiff core."""

from .tensor import Tape, Tensor, backward, no_grad, tensor

__version__ = "0.1.0"

__all__ = ["Tape", "Tensor", "backward", "no_grad", "tensor", "__version__"]
