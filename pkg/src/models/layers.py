"""
Parameter bundles shared by the model modules

A model's parameters live in one flat, name-sorted dict of leaf tensors
(`encoder.primary.stage1.conv_w`, ...). The bundles below are typed views over
slices of that dict: `from_params` reads a prefix, `tensors` writes one.
"""
from dataclasses import dataclass, fields
from typing import Dict, Mapping, Type, TypeVar

import numpy as np

from ..core import ops
from ..core.exceptions import ConfigError
from ..core.tensor import Tensor

Params = Dict[str, Tensor]

B = TypeVar("B", bound="Bundle")


def he_normal(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1))


def leaf(array) -> Tensor:
    return Tensor(array, requires_grad=True)


class Bundle:
    """Mixin for frozen dataclasses whose fields are all tensors"""

    @classmethod
    def from_params(cls: Type[B], params: Mapping[str, Tensor], prefix: str) -> B:
        try:
            return cls(**{f.name: params[f"{prefix}.{f.name}"] for f in fields(cls)})
        except KeyError as e:
            raise ConfigError(f"parameter {e.args[0]} is missing") from None

    def tensors(self, prefix: str) -> Params:
        return {f"{prefix}.{f.name}": getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Affine(Bundle):
    """fc: x @ w + b"""
    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> "Affine":
        return cls(leaf(he_normal(rng, fan_in, (fan_in, fan_out))), leaf(np.zeros(fan_out)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.affine(x, self.w, self.b)


@dataclass(frozen=True)
class MLP(Bundle):
    """fc(ReLU(fc(x)))"""
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, hidden: int, fan_out: int) -> "MLP":
        return cls(
            leaf(he_normal(rng, fan_in, (fan_in, hidden))),
            leaf(np.zeros(hidden)),
            leaf(he_normal(rng, hidden, (hidden, fan_out)) * 0.5),
            leaf(np.zeros(fan_out)),
        )

    def __call__(self, x: Tensor) -> Tensor:
        hidden = ops.relu(ops.affine(x, self.w1, self.b1))
        return ops.affine(hidden, self.w2, self.b2)

    @property
    def shape(self):
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]


@dataclass(frozen=True)
class ConvBN(Bundle):
    """conv -> BN -> ReLU"""
    conv_w: Tensor
    conv_b: Tensor
    bn_g: Tensor
    bn_b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, channels_in: int, channels_out: int, kernel: int = 3) -> "ConvBN":
        fan_in = channels_in * kernel * kernel
        return cls(
            leaf(he_normal(rng, fan_in, (channels_out, channels_in, kernel, kernel))),
            leaf(np.zeros(channels_out)),
            leaf(np.ones(channels_out)),
            leaf(np.zeros(channels_out)),
        )

    def __call__(self, x: Tensor, stride: int = 1) -> Tensor:
        out = ops.conv2d(x, self.conv_w, self.conv_b, stride=stride)
        return ops.relu(ops.batch_norm(out, self.bn_g, self.bn_b))

    @property
    def channels_out(self) -> int:
        return self.conv_w.shape[0]


@dataclass(frozen=True)
class Conv(Bundle):
    """Plain conv with bias (1x1 heads and projections)"""
    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, channels_in: int, channels_out: int, kernel: int = 1) -> "Conv":
        fan_in = channels_in * kernel * kernel
        return cls(
            leaf(he_normal(rng, fan_in, (channels_out, channels_in, kernel, kernel))),
            leaf(np.zeros(channels_out)),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b)
