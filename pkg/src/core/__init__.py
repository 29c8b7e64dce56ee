"""
Core module: tensor engine, kernels, gradient verification and runtime settings
"""
from .exceptions import MurTreeError
from .tensor import Tensor, GradRecord, gradients, no_grad, compute_dtype
from .gradcheck import grad_check

__all__ = ['MurTreeError', 'Tensor', 'GradRecord', 'gradients', 'no_grad', 'compute_dtype', 'grad_check']
