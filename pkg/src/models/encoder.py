"""
Convolutional feature encoder standing in for the transformer backbone

Stage 1 keeps the patch-grid resolution, every later stage halves it; the
widths double per stage.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..core.exceptions import TensorShapeError
from ..core.tensor import Tensor
from .layers import ConvBN, Params


@dataclass(frozen=True)
class EncoderParams:
    stages: Tuple[ConvBN, ...]

    @classmethod
    def init(cls, rng: np.random.Generator, channels_in: int, widths: Sequence[int]) -> "EncoderParams":
        stages = []
        for width in widths:
            stages.append(ConvBN.init(rng, channels_in, width))
            channels_in = width
        return cls(tuple(stages))

    @classmethod
    def from_params(cls, params: Params, prefix: str, depth: int) -> "EncoderParams":
        return cls(tuple(ConvBN.from_params(params, f"{prefix}.stage{n}") for n in range(1, depth + 1)))

    def tensors(self, prefix: str) -> Params:
        out: Params = {}
        for n, stage in enumerate(self.stages, start=1):
            out.update(stage.tensors(f"{prefix}.stage{n}"))
        return out


def stage_stride(index: int) -> int:
    return 1 if index == 0 else 2


def encode(x: Tensor, params: EncoderParams) -> List[Tensor]:
    """Feature maps of every stage, highest resolution first"""
    reduction = 2 ** (len(params.stages) - 1)
    if x.rank != 3 or x.shape[1] % reduction or x.shape[2] % reduction:
        raise TensorShapeError(
            f"encoder input {x.shape} must be [C,H,W] with H, W divisible by {reduction}"
        )
    features = []
    for index, stage in enumerate(params.stages):
        x = stage(x, stride=stage_stride(index))
        features.append(x)
    return features
