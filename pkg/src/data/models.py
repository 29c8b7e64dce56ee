"""
Data models for synthetic scenes and dataset manifests
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Tuple

from ..core.exceptions import ConfigError
from ..core.tensor import Tensor


class AuxMode(Enum):
    """How the auxiliary modality is synthesised"""
    DSM = "dsm"  # additive Gaussian noise on a height-like map
    SAR = "sar"  # multiplicative Gamma speckle


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic primary/auxiliary scene"""
    size: int = 64
    patch_size: int = 4
    tree_count: Tuple[int, int] = (3, 7)
    tree_radius: Tuple[float, float] = (4.0, 10.0)
    change_patches: int = 20
    change_magnitude: float = 0.6
    noise_sigma: float = 0.02
    aux_mode: AuxMode = AuxMode.DSM
    speckle_looks: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.size <= 0 or self.patch_size <= 0:
            raise ConfigError(f"scene size {self.size} and patch size {self.patch_size} must be positive")
        if self.size % self.patch_size:
            raise ConfigError(f"patch size {self.patch_size} must divide scene size {self.size}")
        if not 0 <= self.change_patches <= self.grid_cells:
            raise ConfigError(
                f"change patch count must be in 0..{self.grid_cells} (the grid size), got {self.change_patches}"
            )
        if not 0 <= self.tree_count[0] <= self.tree_count[1]:
            raise ConfigError(f"invalid tree count range {self.tree_count}")
        if not 0 < self.tree_radius[0] <= self.tree_radius[1]:
            raise ConfigError(f"invalid tree radius range {self.tree_radius}")
        if self.change_magnitude <= 0 or self.noise_sigma < 0:
            raise ConfigError("change magnitude must be positive and noise sigma non-negative")
        object.__setattr__(self, "aux_mode", AuxMode(self.aux_mode))

    @property
    def grid_cells(self) -> int:
        return (self.size // self.patch_size) ** 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "size": self.size,
            "patch_size": self.patch_size,
            "tree_count": list(self.tree_count),
            "tree_radius": list(self.tree_radius),
            "change_patches": self.change_patches,
            "change_magnitude": self.change_magnitude,
            "noise_sigma": self.noise_sigma,
            "aux_mode": self.aux_mode.value,
            "speckle_looks": self.speckle_looks,
            "seed": self.seed,
        }


@dataclass
class SceneSample:
    """One generated (or loaded) scene"""
    id: int
    primary: Tensor      # [3,H,W]
    auxiliary: Tensor    # [1,H,W]
    label: Tensor        # [1,H,W] binary
    edge: Tensor         # [1,H,W] binary
    changed_cells: List[int] = field(default_factory=list)


@dataclass
class ManifestRecord:
    """One manifest line; paths are relative to the dataset root"""
    id: int
    primary_path: str
    auxiliary_path: str
    label_path: str
    edge_path: str
    changed_cells: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for storage (key order is part of the format)"""
        return {
            "id": self.id,
            "primary_path": self.primary_path,
            "auxiliary_path": self.auxiliary_path,
            "label_path": self.label_path,
            "edge_path": self.edge_path,
            "changed_cells": list(self.changed_cells),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifestRecord":
        """Create from dictionary"""
        return cls(
            id=int(data["id"]),
            primary_path=data["primary_path"],
            auxiliary_path=data["auxiliary_path"],
            label_path=data["label_path"],
            edge_path=data["edge_path"],
            changed_cells=[int(c) for c in data.get("changed_cells", [])],
        )
