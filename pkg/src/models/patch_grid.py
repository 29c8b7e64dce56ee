"""
Patch grid: split images into non-overlapping P x P patches, embed, reassemble

Patch index i (0-based) maps to cell (i // cols, i % cols). Inside a patch the
flattening order is channel-major, then row, then column. Every module uses
this single convention.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from ..core import ops
from ..core.exceptions import PatchGridError, TensorShapeError
from ..core.tensor import Tensor


class Modality(Enum):
    PRIMARY = "primary"
    AUXILIARY = "auxiliary"


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    patch_size: int

    def __post_init__(self):
        p = self.patch_size
        if p <= 0:
            raise PatchGridError(f"patch size must be positive, got {p}")
        if self.height % p or self.width % p:
            pad_h = (-self.height) % p
            pad_w = (-self.width) % p
            raise PatchGridError(
                f"patch size {p} does not divide image {self.height}x{self.width}; "
                f"pad by {pad_h} rows and {pad_w} columns to reach "
                f"{self.height + pad_h}x{self.width + pad_w}"
            )

    @classmethod
    def for_image(cls, image: Tensor, patch_size: int) -> "PatchGrid":
        if image.rank != 3:
            raise TensorShapeError(f"expected an image [C,H,W], got {image.shape}")
        return cls(image.shape[1], image.shape[2], patch_size)

    @property
    def rows(self) -> int:
        return self.height // self.patch_size

    @property
    def cols(self) -> int:
        return self.width // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def cell(self, index: int) -> Tuple[int, int]:
        if not 0 <= index < self.n_patches:
            raise PatchGridError(f"patch index {index} outside 0..{self.n_patches - 1}")
        return divmod(index, self.cols)


@dataclass(frozen=True)
class PatchSequence:
    """Patch embeddings X_M = [x^1 ... x^N] of one modality"""
    grid: PatchGrid
    embeddings: Tensor  # [N, D]
    modality: Modality

    def __post_init__(self):
        if self.embeddings.rank != 2 or self.embeddings.shape[0] != self.grid.n_patches:
            raise TensorShapeError(
                f"embeddings {self.embeddings.shape} do not match a grid of {self.grid.n_patches} patches"
            )

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def with_embeddings(self, embeddings: Tensor) -> "PatchSequence":
        return PatchSequence(self.grid, embeddings, self.modality)


def patchify(image: Tensor, patch_size: int) -> Tensor:
    """[C,H,W] -> raw patches [N, C*P*P]; lossless and differentiable"""
    grid = PatchGrid.for_image(image, patch_size)
    channels = image.shape[0]
    p = patch_size
    blocks = ops.reshape(image, (channels, grid.rows, p, grid.cols * p))
    blocks = ops.reshape(blocks, (channels * grid.rows, p, grid.cols, p))
    # [C*rows, p, cols, p] -> [C*rows, cols, p, p]
    blocks = ops.permute(blocks, (0, 2, 1, 3))
    blocks = ops.reshape(blocks, (channels, grid.rows * grid.cols, p, p))
    # [C, N, p, p] -> [N, C, p, p]
    blocks = ops.permute(blocks, (1, 0, 2, 3))
    return ops.reshape(blocks, (grid.n_patches, channels * p * p))


def unpatchify(raw: Tensor, grid: PatchGrid, channels: int) -> Tensor:
    """Inverse of patchify: [N, C*P*P] -> [C,H,W]"""
    p = grid.patch_size
    if raw.shape != (grid.n_patches, channels * p * p):
        raise TensorShapeError(f"raw patches {raw.shape} do not fit grid {grid} with {channels} channels")
    blocks = ops.reshape(raw, (grid.n_patches, channels, p, p))
    blocks = ops.permute(blocks, (1, 0, 2, 3))
    blocks = ops.reshape(blocks, (channels * grid.rows, grid.cols, p, p))
    blocks = ops.permute(blocks, (0, 2, 1, 3))
    return ops.reshape(blocks, (channels, grid.height, grid.width))


def embed(raw: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-patch affine projection [N, C*P*P] -> [N, D]"""
    return ops.affine(raw, weight, bias)


def reassemble(seq: PatchSequence) -> Tensor:
    """Embedding row i becomes the D-vector of its grid cell: [N, D] -> [D, rows, cols]"""
    grid = seq.grid
    cells = ops.reshape(seq.embeddings, (grid.rows, grid.cols, seq.dim))
    return ops.permute(cells, (2, 0, 1))


def flatten_grid(feature_map: Tensor) -> Tensor:
    """Inverse of reassemble: [D, rows, cols] -> [rows*cols, D]"""
    if feature_map.rank != 3:
        raise TensorShapeError(f"expected a feature map [D,rows,cols], got {feature_map.shape}")
    dim, rows, cols = feature_map.shape
    cells = ops.permute(feature_map, (1, 2, 0))
    return ops.reshape(cells, (rows * cols, dim))
