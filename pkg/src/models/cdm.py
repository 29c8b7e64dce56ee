"""
Cross-modal distillation: cosine alignment of projected patch features
"""
from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..core import ops
from ..core.exceptions import TensorShapeError
from ..core.tensor import Tensor
from .layers import Affine, Params, leaf
from .patch_grid import Modality, PatchSequence

COSINE_EPS = 1e-8


@dataclass(frozen=True)
class ProjectionHeads:
    heads: Dict[Modality, Affine]

    def __post_init__(self):
        dims = {head.w.shape[1] for head in self.heads.values()}
        if len(dims) != 1:
            raise TensorShapeError(f"projection heads disagree on output dimension: {sorted(dims)}")

    @property
    def proj_dim(self) -> int:
        return self.heads[Modality.PRIMARY].w.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, dims: Dict[Modality, int], proj_dim: int) -> "ProjectionHeads":
        return cls({m: Affine.init(rng, dims[m], proj_dim) for m in Modality})

    @classmethod
    def identity(cls, dim: int) -> "ProjectionHeads":
        return cls({m: Affine(leaf(np.eye(dim)), leaf(np.zeros(dim))) for m in Modality})

    @classmethod
    def from_params(cls, params: Params, prefix: str = "cdm.proj") -> "ProjectionHeads":
        return cls({m: Affine.from_params(params, f"{prefix}.{m.value}") for m in Modality})

    def tensors(self, prefix: str = "cdm.proj") -> Params:
        out: Params = {}
        for m, head in self.heads.items():
            out.update(head.tensors(f"{prefix}.{m.value}"))
        return out


def project(seq: PatchSequence, heads: ProjectionHeads) -> Tensor:
    """X_tilde = Proj_M(X_M), row-wise"""
    return heads.heads[seq.modality](seq.embeddings)


def row_cosine(a: Tensor, b: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Cosine per row with norms sqrt(sum x^2 + eps^2)"""
    if a.shape != b.shape or a.rank != 2:
        raise TensorShapeError(f"cosine needs two [N, D] tensors of equal shape, got {a.shape} and {b.shape}")
    dot = ops.sum(ops.mul(a, b), axis=1)
    norm_a = ops.sqrt(ops.add(ops.sum(ops.mul(a, a), axis=1), eps * eps))
    norm_b = ops.sqrt(ops.add(ops.sum(ops.mul(b, b), axis=1), eps * eps))
    return ops.div(dot, ops.mul(norm_a, norm_b))


def cdm_loss(proj_primary: Tensor, proj_auxiliary: Tensor) -> Tensor:
    """1 - mean_i cos(X_P[i], X_A[i]); in [0, 2]"""
    return ops.sub(1.0, ops.mean(row_cosine(proj_primary, proj_auxiliary)))


def patch_discrepancy(proj_primary: Tensor, proj_auxiliary: Tensor) -> np.ndarray:
    """||X_P[i] - X_A[i]||^2 per patch, for heatmaps"""
    diff = proj_primary.data.astype(np.float64) - proj_auxiliary.data.astype(np.float64)
    return (diff ** 2).sum(axis=1)
