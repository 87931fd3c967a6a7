"""Random-order online optimization with stability-based SGD variants."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
