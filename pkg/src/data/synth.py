"""
Synthetic primary/auxiliary scenes with tree-cover labels and injected changes

Primary: smooth ground texture with darker tree crowns (3 bands).
Auxiliary: a height-like map h(y) = GROUND_HEIGHT + magnitude * y of the label,
plus Gaussian noise (dsm) or multiplicative Gamma speckle (sar).

Change cells hold a tree crown in the primary image and label that is missing
from the auxiliary acquisition: the whole cell reads as bare ground there.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from app_config import PATHS_CONFIG
from ..config.run_config import RunConfig
from ..core.exceptions import ConfigError, DatasetError
from ..core.tensor import Tensor
from ..utils.logging import get_logger
from ..utils.parallel import ordered_map
from ..utils.rng import Purpose, stream
from .export import write_pgm
from .models import AuxMode, ManifestRecord, SceneSample, SceneSpec, Split
from .storage import write_json, write_manifest, write_tensor

logger = get_logger(__name__)

GROUND_HEIGHT = 0.1
GROUND_COLOR = np.array([0.55, 0.50, 0.38])
TREE_COLOR = np.array([0.12, 0.30, 0.10])
TEXTURE_SIGMA = 3.0
# crown radius planted on each change cell, in patch sides; covers the whole cell
CHANGE_CROWN_RADIUS = 0.75


def scene_spec(config: RunConfig, change_patches: Optional[int] = None) -> SceneSpec:
    data = config.data
    return SceneSpec(
        size=data.size,
        patch_size=config.model.patch_size,
        tree_count=(data.tree_count_min, data.tree_count_max),
        tree_radius=(data.tree_radius_min, data.tree_radius_max),
        change_patches=data.change_patches if change_patches is None else change_patches,
        change_magnitude=data.change_magnitude,
        noise_sigma=data.noise_sigma,
        aux_mode=AuxMode(data.aux_mode),
        speckle_looks=data.speckle_looks,
        seed=config.train.seed,
    )


def height_map(label: np.ndarray, magnitude: float) -> np.ndarray:
    return GROUND_HEIGHT + magnitude * label


def cell_mask(cells: Sequence[int], size: int, patch_size: int) -> np.ndarray:
    """Boolean [size, size] mask covering the given grid cells"""
    cols = size // patch_size
    mask = np.zeros((size, size), dtype=bool)
    for cell in cells:
        row, col = divmod(int(cell), cols)
        mask[row * patch_size:(row + 1) * patch_size, col * patch_size:(col + 1) * patch_size] = True
    return mask


def change_crowns(cells: Sequence[int], size: int, patch_size: int) -> np.ndarray:
    """Boolean [size, size] mask of one crown centred on each change cell"""
    cols = size // patch_size
    rows, columns = np.mgrid[0:size, 0:size]
    radius = CHANGE_CROWN_RADIUS * patch_size
    mask = np.zeros((size, size), dtype=bool)
    for cell in cells:
        row, col = divmod(int(cell), cols)
        cy = row * patch_size + (patch_size - 1) / 2
        cx = col * patch_size + (patch_size - 1) / 2
        mask |= (rows - cy) ** 2 + (columns - cx) ** 2 <= radius ** 2
    return mask


def morphological_edge(label: np.ndarray) -> np.ndarray:
    """Binary morphological gradient: 3x3 dilation minus 3x3 erosion"""
    dilated = ndimage.grey_dilation(label, size=(3, 3), mode="nearest")
    eroded = ndimage.grey_erosion(label, size=(3, 3), mode="nearest")
    return (dilated - eroded).astype(np.float32)


def generate_scene(spec: SceneSpec, index: int = 0) -> SceneSample:
    """One scene, fully determined by (spec.seed, index)"""
    rng = stream(spec.seed, Purpose.SCENE, index)
    size = spec.size

    texture = np.stack([
        ndimage.gaussian_filter(rng.standard_normal((size, size)), TEXTURE_SIGMA, mode="wrap")
        for _ in range(3)
    ])
    texture /= max(float(texture.std()), 1e-8)
    ground = GROUND_COLOR[:, None, None] + 0.05 * texture

    rows, cols = np.mgrid[0:size, 0:size]
    label = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(spec.tree_count[0], spec.tree_count[1] + 1))):
        cy, cx = rng.uniform(0, size, 2)
        radius = rng.uniform(*spec.tree_radius)
        label |= (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2

    changed = sorted(int(c) for c in rng.choice(spec.grid_cells, size=spec.change_patches, replace=False))
    label |= change_crowns(changed, size, spec.patch_size)

    crowns = TREE_COLOR[:, None, None] + 0.02 * texture
    primary = np.where(label[None], crowns, ground)
    primary = np.clip(primary + rng.normal(0.0, 0.01, primary.shape), 0.0, 1.0)

    observed = (label & ~cell_mask(changed, size, spec.patch_size)).astype(np.float64)
    heights = height_map(observed, spec.change_magnitude)
    if spec.aux_mode is AuxMode.SAR:
        speckle = rng.gamma(spec.speckle_looks, 1.0 / spec.speckle_looks, heights.shape)
        auxiliary = heights * speckle
    else:
        auxiliary = heights + rng.normal(0.0, spec.noise_sigma, heights.shape)

    label_f = label.astype(np.float32)
    return SceneSample(
        id=index,
        primary=Tensor(primary),
        auxiliary=Tensor(auxiliary[None]),
        label=Tensor(label_f[None]),
        edge=Tensor(morphological_edge(label_f)[None]),
        changed_cells=changed,
    )


@dataclass(frozen=True)
class DatasetSummary:
    root: Path
    count: int
    split_sizes: Dict[str, int]
    change_cells: int

    def to_dict(self) -> Dict[str, object]:
        return {"count": self.count, "splits": self.split_sizes, "change_cells": self.change_cells}


def split_ids(count: int, ratios: Sequence[float], seed: int) -> Dict[Split, List[int]]:
    """Seeded shuffle into train/val/test; val and test sizes are rounded, train takes the rest"""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be three non-negative values summing to 1, got {list(ratios)}")
    n_val = int(round(count * ratios[1]))
    n_test = int(round(count * ratios[2]))
    n_train = count - n_val - n_test
    if n_train < 0:
        raise ConfigError(f"split ratios {list(ratios)} leave no room for training on {count} samples")
    order = stream(seed, Purpose.SPLIT).permutation(count)
    return {
        Split.TRAIN: sorted(int(i) for i in order[:n_train]),
        Split.VAL: sorted(int(i) for i in order[n_train:n_train + n_val]),
        Split.TEST: sorted(int(i) for i in order[n_train + n_val:]),
    }


def _write_sample(root: Path, sample: SceneSample) -> ManifestRecord:
    dirs = PATHS_CONFIG["sample_dirs"]
    name = f"{sample.id:05d}{PATHS_CONFIG['tensor_suffix']}"
    paths = {}
    for kind in ("primary", "auxiliary", "label", "edge"):
        relative = f"{dirs[kind]}/{name}"
        write_tensor(root / relative, getattr(sample, kind))
        paths[kind] = relative

    preview = root / PATHS_CONFIG["preview_dir"]
    write_pgm(preview / f"{sample.id:05d}_primary.pgm", sample.primary.data.mean(axis=0))
    write_pgm(preview / f"{sample.id:05d}_auxiliary.pgm", sample.auxiliary)
    write_pgm(preview / f"{sample.id:05d}_label.pgm", sample.label)
    return ManifestRecord(
        id=sample.id,
        primary_path=paths["primary"],
        auxiliary_path=paths["auxiliary"],
        label_path=paths["label"],
        edge_path=paths["edge"],
        changed_cells=sample.changed_cells,
    )


def dataset(
    spec: SceneSpec,
    count: int,
    ratios: Sequence[float],
    root: Union[str, Path],
) -> DatasetSummary:
    """
    Generate `count` scenes and write them with manifest, splits and info files

    Args:
        spec: scene parameters (spec.seed drives every random stream)
        count: number of scenes
        ratios: train/val/test fractions summing to 1
        root: output directory

    Returns:
        DatasetSummary with split sizes and total change cells
    """
    if count < 1:
        raise DatasetError(f"dataset needs at least one sample, got {count}")
    root = Path(root)
    splits = split_ids(count, ratios, spec.seed)
    try:
        for directory in list(PATHS_CONFIG["sample_dirs"].values()) + [PATHS_CONFIG["preview_dir"]]:
            (root / directory).mkdir(parents=True, exist_ok=True)
        records = ordered_map(lambda i: _write_sample(root, generate_scene(spec, i)), range(count))
        write_manifest(root / PATHS_CONFIG["manifest_file"], records)
        write_json(root / PATHS_CONFIG["splits_file"], {s.value: ids for s, ids in splits.items()})
        summary = DatasetSummary(
            root=root,
            count=count,
            split_sizes={s.value: len(ids) for s, ids in splits.items()},
            change_cells=sum(len(r.changed_cells) for r in records),
        )
        write_json(root / PATHS_CONFIG["dataset_info_file"], {
            "spec": spec.to_dict(),
            "ratios": list(ratios),
            **summary.to_dict(),
        })
    except OSError as e:
        raise DatasetError(f"cannot write dataset to {root}: {e}") from e

    logger.info(f"Generated {count} scenes in {root} (splits {summary.split_sizes})")
    return summary
