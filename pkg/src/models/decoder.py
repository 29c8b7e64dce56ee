"""
Tree-cover refinement decoding: SE block, align/decoder units, refinement head
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import ops
from ..core.exceptions import TensorShapeError
from ..core.tensor import Tensor
from .gma import AttentionMap
from .layers import Affine, Conv, ConvBN, Params

DEFAULT_SE_REDUCTION = 4

@dataclass(frozen=True)
class SegOutput:
    seg_prob: Tensor                  # [1, H, W]
    edge_prob: Optional[Tensor]       # [1, H, W]; None without the refinement head

# ---------------------------------------------------------------------------
# SE block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SEParams:
    fc1: Affine   # C -> C / r
    fc2: Affine   # C / r -> C

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, reduction: int = DEFAULT_SE_REDUCTION) -> "SEParams":
        if reduction <= 0 or channels % reduction:
            raise TensorShapeError(f"SE reduction ratio {reduction} does not divide {channels} channels")
        squeezed = channels // reduction
        return cls(Affine.init(rng, channels, squeezed), Affine.init(rng, squeezed, channels))

    @classmethod
    def from_params(cls, params: Params, prefix: str) -> "SEParams":
        return cls(Affine.from_params(params, f"{prefix}.fc1"), Affine.from_params(params, f"{prefix}.fc2"))

    def tensors(self, prefix: str) -> Params:
        return {**self.fc1.tensors(f"{prefix}.fc1"), **self.fc2.tensors(f"{prefix}.fc2")}

    @property
    def channels(self) -> int:
        return self.fc1.w.shape[0]

def se_block(f: Tensor, params: SEParams) -> Tensor:
    """f * sigmoid(fc2(ReLU(fc1(gp(f))))), gp = per-channel max"""
    channels = f.shape[0]
    if f.rank != 3 or params.channels != channels:
        raise TensorShapeError(f"SE block built for {params.channels} channels, got features {f.shape}")
    pooled = ops.reshape(ops.global_max_pool(f), (1, channels))
    hidden = ops.relu(params.fc1(pooled))
    weights = ops.sigmoid(params.fc2(hidden))
    return ops.mul(f, ops.reshape(weights, (channels, 1, 1)))

# ---------------------------------------------------------------------------
# Align unit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlignParams:
    proj: Conv
    se: SEParams

    @classmethod
    def init(cls, rng: np.random.Generator, channels_primary: int, channels_auxiliary: int,
             channels_out: int, reduction: int = DEFAULT_SE_REDUCTION) -> "AlignParams":
        return cls(
            Conv.init(rng, channels_primary + channels_auxiliary, channels_out, kernel=1),
            SEParams.init(rng, channels_out, reduction),
        )

    @classmethod
    def from_params(cls, params: Params, prefix: str) -> "AlignParams":
        return cls(Conv.from_params(params, f"{prefix}.proj"), SEParams.from_params(params, f"{prefix}.se"))

    def tensors(self, prefix: str) -> Params:
        return {**self.proj.tensors(f"{prefix}.proj"), **self.se.tensors(f"{prefix}.se")}

def align_unit(f_primary: Tensor, f_auxiliary: Tensor, params: AlignParams) -> Tensor:
    """concat(primary, auxiliary) -> 1x1 conv -> SE"""
    if f_primary.shape[1:] != f_auxiliary.shape[1:]:
        raise TensorShapeError(
            f"align unit inputs differ spatially: {f_primary.shape} vs {f_auxiliary.shape}"
        )
    fused = ops.concat([f_primary, f_auxiliary], axis=0)
    return se_block(params.proj(fused), params.se)

# ---------------------------------------------------------------------------
# Decoder unit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecoderUnitParams:
    conv1: ConvBN
    conv2: ConvBN
    se: SEParams

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, reduction: int = DEFAULT_SE_REDUCTION) -> "DecoderUnitParams":
        if channels % 2:
            raise TensorShapeError(f"decoder unit halves its channels, got odd count {channels}")
        half = channels // 2
        return cls(ConvBN.init(rng, channels, half), ConvBN.init(rng, half, half), SEParams.init(rng, half, reduction))

    @classmethod
    def from_params(cls, params: Params, prefix: str) -> "DecoderUnitParams":
        return cls(
            ConvBN.from_params(params, f"{prefix}.conv1"),
            ConvBN.from_params(params, f"{prefix}.conv2"),
            SEParams.from_params(params, f"{prefix}.se"),
        )

    def tensors(self, prefix: str) -> Params:
        return {
            **self.conv1.tensors(f"{prefix}.conv1"),
            **self.conv2.tensors(f"{prefix}.conv2"),
            **self.se.tensors(f"{prefix}.se"),
        }

def modulate(f: Tensor, attention: AttentionMap) -> Tensor:
    """Residual gating f * (1 + A), A resampled to the feature resolution"""
    values = attention.values
    height, width = f.shape[1:]
    if values.shape[1:] != (height, width):
        values = ops.resize_bilinear(values, height, width)
    return ops.mul(f, ops.add(values, 1.0))

def decoder_unit(f: Tensor, attention: Optional[AttentionMap], params: DecoderUnitParams) -> Tensor:
    """[C,H,W] -> [C/2, 2H, 2W]: (gate) -> upsample -> conv-BN-ReLU x2 -> SE"""
    if attention is not None:
        f = modulate(f, attention)
    out = ops.bilinear_upsample2x(f)
    out = params.conv2(params.conv1(out))
    return se_block(out, params.se)

# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RefineParams:
    stage1: ConvBN
    stage2: ConvBN
    seg: Conv
    edge: Conv

    @classmethod
    def init(cls, rng: np.random.Generator, channels_in: int, channels: int) -> "RefineParams":
        return cls(
            ConvBN.init(rng, channels_in, channels),
            ConvBN.init(rng, channels, channels),
            Conv.init(rng, channels, 1, kernel=1),
            Conv.init(rng, channels, 1, kernel=1),
        )

    @classmethod
    def from_params(cls, params: Params, prefix: str = "rh") -> "RefineParams":
        return cls(
            ConvBN.from_params(params, f"{prefix}.stage1"),
            ConvBN.from_params(params, f"{prefix}.stage2"),
            Conv.from_params(params, f"{prefix}.seg"),
            Conv.from_params(params, f"{prefix}.edge"),
        )

    def tensors(self, prefix: str = "rh") -> Params:
        return {
            **self.stage1.tensors(f"{prefix}.stage1"),
            **self.stage2.tensors(f"{prefix}.stage2"),
            **self.seg.tensors(f"{prefix}.seg"),
            **self.edge.tensors(f"{prefix}.edge"),
        }

def refinement_head(f: Tensor, params: RefineParams) -> SegOutput:
    """Two [upsample x2 -> conv3x3 -> BN -> ReLU] steps, then 1x1 seg and edge heads"""
    out = params.stage1(ops.bilinear_upsample2x(f))
    out = params.stage2(ops.bilinear_upsample2x(out))
    return SegOutput(ops.sigmoid(params.seg(out)), ops.sigmoid(params.edge(out)))


def plain_head(f: Tensor, params: Conv) -> SegOutput:
    """1x1 segmentation logits upsampled x4; no edge output"""
    logits = params(f)
    logits = ops.bilinear_upsample2x(ops.bilinear_upsample2x(logits))
    return SegOutput(ops.sigmoid(logits), None)
