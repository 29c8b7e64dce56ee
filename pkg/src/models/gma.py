"""
Gradient magnitude attention from the primary image luminance

luminance -> LAM enhancement (invert, normalise, power gamma) -> Sobel
magnitude normalised by its global max -> A = 1 - exp(-grad).
The two max-normalisations are treated as constants in the backward pass.
"""
from dataclasses import dataclass

import numpy as np

from ..core import ops
from ..core.exceptions import ConfigError, TensorShapeError
from ..core.tensor import Tensor
from ..utils.logging import get_logger

logger = get_logger(__name__)

MAX_GUARD = 1e-8
SQRT_EPS = 1e-12
DEFAULT_GAMMA = 2.0

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True)
class AttentionMap:
    values: Tensor  # [1, H, W] in [0, 1 - 1/e]


def luminance(image: Tensor) -> Tensor:
    """Mean of the first three bands; single-band images are copied"""
    if image.rank != 3 or image.shape[0] < 1:
        raise TensorShapeError(f"luminance expects [C,H,W] with C >= 1, got {image.shape}")
    bands = min(image.shape[0], 3)
    first = ops.take_rows(image, list(range(bands)))
    if bands == 1:
        return first
    return ops.mean(first, axis=0, keepdims=True)


def lam_enhance(lum: Tensor, gamma: float = DEFAULT_GAMMA) -> Tensor:
    """L_tilde = (1 - L / max(L)) ** gamma"""
    if gamma <= 1:
        raise ConfigError(f"LAM gamma must exceed 1, got {gamma}")
    peak = float(lum.data.max())
    if peak <= MAX_GUARD:
        logger.warning("LAM input has no positive luminance; enhanced map is ~1 everywhere")
    inverted = ops.clip(ops.sub(1.0, ops.div(lum, max(peak, MAX_GUARD))), 0.0, 1.0)
    return ops.power(inverted, gamma)


def _sobel_kernels() -> Tensor:
    return Tensor(np.stack([SOBEL_X, SOBEL_Y])[:, None, :, :])


def grad_magnitude(enhanced: Tensor) -> Tensor:
    """Sobel magnitude sqrt(gx^2 + gy^2 + eps^2) - eps, scaled so the max is 1"""
    if enhanced.rank != 3 or enhanced.shape[0] != 1:
        raise TensorShapeError(f"grad_magnitude expects [1,H,W], got {enhanced.shape}")
    responses = ops.conv2d(enhanced, _sobel_kernels(), Tensor(np.zeros(2)))
    energy = ops.sum(ops.mul(responses, responses), axis=0, keepdims=True)
    eps_sq = SQRT_EPS * SQRT_EPS
    floor = ops.sqrt(Tensor(eps_sq))
    magnitude = ops.sub(ops.sqrt(ops.add(energy, eps_sq)), floor)
    peak = float(magnitude.data.max())
    return ops.div(magnitude, max(peak, MAX_GUARD))


def gma_attention(grad: Tensor) -> AttentionMap:
    """A = 1 - exp(-grad)"""
    return AttentionMap(ops.sub(1.0, ops.exp(ops.neg(grad))))


def attention_from_image(image: Tensor, gamma: float = DEFAULT_GAMMA) -> AttentionMap:
    return gma_attention(grad_magnitude(lam_enhance(luminance(image), gamma)))
