"""
Finite-difference verification of the gradient tape
"""
from typing import Callable

import numpy as np

from .exceptions import GradCheckError
from .tensor import Tensor, compute_dtype, gradients, no_grad

DEFAULT_STEP = 1e-3


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = DEFAULT_STEP,
    dtype=np.float64,
) -> float:
    """
    Compare tape gradients of a scalar function against central differences

    Args:
        f: function of one tensor returning a scalar tensor
        x: point of evaluation (array-like or Tensor)
        h: finite-difference step
        dtype: precision used for both the analytic and numeric evaluation

    Returns:
        max over coordinates of |analytic - numeric| / max(1, |analytic|)
    """
    point = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    with compute_dtype(dtype):
        variable = Tensor(point, requires_grad=True)
        output = f(variable)
        if not isinstance(output, Tensor) or output.size != 1:
            shape = getattr(output, "shape", type(output).__name__)
            raise GradCheckError(f"grad_check needs a scalar-valued function, got output {shape}")
        analytic = gradients(output, [variable])[0].astype(np.float64)

        numeric = np.zeros_like(point)
        with no_grad():
            for index in np.ndindex(point.shape):
                shifted = point.copy()
                shifted[index] = point[index] + h
                upper = f(Tensor(shifted)).item()
                shifted[index] = point[index] - h
                lower = f(Tensor(shifted)).item()
                numeric[index] = (upper - lower) / (2.0 * h)

    errors = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(errors.max()) if errors.size else 0.0
