"""Dual-graph convolutional recurrent traffic forecasting."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_grad  # noqa: F401
