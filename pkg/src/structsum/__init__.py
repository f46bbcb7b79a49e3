"""Abstractive sentence summarization with structure-aware copy attention."""

from .autodiff import Tensor, grad_check, no_grad

__version__ = "0.1.0"
