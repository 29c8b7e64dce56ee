"""
Run configuration: every tunable hyperparameter of gen/train/eval/score

Files are JSON with flat dotted keys ("surm.k": 32); nested objects are also
accepted. Precedence, lowest first: field defaults, --config file, --set
overrides, dedicated CLI flags.
"""
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.exceptions import ConfigError
from ..utils.logging import get_logger

logger = get_logger(__name__)

# Full-scale patch count per selected patch (16384 patches, 500 selected)
PATCHES_PER_SELECTION = 33


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DataSection(_Section):
    """Synthetic dataset generation"""
    size: int = Field(default=64, gt=0, description="Scene height and width in pixels")
    count: int = Field(default=200, ge=1, description="Number of scenes")
    tree_count_min: int = Field(default=3, ge=0, description="Fewest tree blobs per scene")
    tree_count_max: int = Field(default=7, ge=0, description="Most tree blobs per scene")
    tree_radius_min: float = Field(default=4.0, gt=0, description="Smallest blob radius (pixels)")
    tree_radius_max: float = Field(default=10.0, gt=0, description="Largest blob radius (pixels)")
    change_patches: int = Field(default=20, ge=0, description="Injected cross-modal change cells per scene")
    change_magnitude: float = Field(default=0.6, gt=0, description="Height contrast between tree and ground")
    noise_sigma: float = Field(default=0.02, ge=0, description="Auxiliary noise standard deviation")
    aux_mode: str = Field(default="dsm", description="Auxiliary modality: dsm (additive noise) or sar (speckle)")
    speckle_looks: int = Field(default=4, ge=1, description="Gamma speckle looks for aux_mode=sar")
    train_ratio: float = Field(default=0.7, ge=0, le=1)
    val_ratio: float = Field(default=0.15, ge=0, le=1)
    test_ratio: float = Field(default=0.15, ge=0, le=1)

    @field_validator("aux_mode")
    @classmethod
    def _known_mode(cls, value: str) -> str:
        if value not in ("dsm", "sar"):
            raise ValueError(f"aux_mode must be 'dsm' or 'sar', got {value!r}")
        return value


class ModelSection(_Section):
    """Network layout and ablation switches"""
    patch_size: int = Field(default=4, gt=0, description="Patch side P in pixels")
    embed_dim: int = Field(default=32, gt=0, description="Patch embedding dimension D")
    encoder_channels: List[int] = Field(default=[16, 32, 64, 128], description="Encoder widths, doubling per stage")
    cdm_stage: int = Field(default=1, ge=0, description="CDM attachment: 0 = patch embeddings, s = encoder stage s")
    proj_dim: int = Field(default=16, gt=0, description="CDM projection dimension")
    gma_units: int = Field(default=2, ge=0, description="Highest-resolution decoder units gated by GMA")
    gamma: float = Field(default=2.0, gt=1, description="LAM enhancement exponent")
    se_reduction: int = Field(default=4, gt=0, description="SE block reduction ratio r")
    rh_channels: int = Field(default=16, gt=0, description="Refinement head width")
    use_cdm: bool = True
    use_gma: bool = True
    use_rh: bool = True

    @field_validator("encoder_channels")
    @classmethod
    def _doubling(cls, value: List[int]) -> List[int]:
        if not value or value[0] <= 0:
            raise ValueError("encoder_channels needs at least one positive width")
        for before, after in zip(value, value[1:]):
            if after != 2 * before:
                raise ValueError(f"encoder widths must double per stage, got {value}")
        return value


class SurmSection(_Section):
    """Selective uncertainty-guided reconstruction"""
    k: Optional[int] = Field(default=20, ge=0, description="Patches to reconstruct; null = ceil(N/33)")
    latent_dim: int = Field(default=8, gt=0, description="Latent dimension d")
    samples: int = Field(default=4, ge=1, description="Reparameterised samples L per patch")
    le_hidden: int = Field(default=16, gt=0)
    score_hidden: int = Field(default=8, ge=2)
    recon_hidden: int = Field(default=32, gt=0)
    cover_scale: float = Field(default=3.0, gt=0, description="Log-variance gap between full cover and bare ground")


class LossSection(_Section):
    """Loss weights"""
    seg: float = Field(default=1.0, ge=0)
    edge: float = Field(default=0.3, ge=0)
    mse: float = Field(default=0.2, ge=0)
    kl: float = Field(default=0.2, ge=0)
    cdm: float = Field(default=0.3, ge=0)
    cal: float = Field(default=4.0, ge=0, description="Latent dispersion calibration against patch cover")


class TrainSection(_Section):
    lr: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=4, ge=1)
    seed: int = Field(default=0, ge=0, description="Single source of all randomness")
    runs: int = Field(default=3, ge=1, description="Seeds per ablation variant")


class PathsSection(_Section):
    data: str = Field(default="data/synthetic", description="Dataset directory")
    out: str = Field(default="runs/default", description="Run output directory")
    checkpoint: Optional[str] = Field(default=None, description="Checkpoint to evaluate or resume")


class RunConfig(_Section):
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    surm: SurmSection = Field(default_factory=SurmSection)
    loss: LossSection = Field(default_factory=LossSection)
    train: TrainSection = Field(default_factory=TrainSection)
    paths: PathsSection = Field(default_factory=PathsSection)

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        data, model = self.data, self.model
        ratio_sum = data.train_ratio + data.val_ratio + data.test_ratio
        if abs(ratio_sum - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {ratio_sum}")
        if data.tree_count_min > data.tree_count_max or data.tree_radius_min > data.tree_radius_max:
            raise ValueError("tree count/radius ranges must have min <= max")
        stages = len(model.encoder_channels)
        stride = model.patch_size * 2 ** (stages - 1)
        if data.size % stride:
            raise ValueError(
                f"image size {data.size} must be divisible by patch_size * 2^(stages-1) = {stride}"
            )
        if data.size % 4:
            raise ValueError(f"image size {data.size} must be divisible by 4 for the output heads")
        if data.change_patches > self.n_patches:
            raise ValueError(f"{data.change_patches} change patches exceed the {self.n_patches} grid cells")
        if model.cdm_stage > stages:
            raise ValueError(f"cdm_stage {model.cdm_stage} exceeds the {stages} encoder stages")
        if model.gma_units > stages - 1:
            raise ValueError(f"gma_units {model.gma_units} exceeds the {stages - 1} decoder units")
        # fused stages and decoder units both use the encoder widths
        for width in model.encoder_channels:
            if width % model.se_reduction:
                raise ValueError(f"se_reduction {model.se_reduction} must divide SE width {width}")
        if self.k > self.n_patches:
            raise ValueError(f"surm.k={self.k} exceeds N={self.n_patches}")
        return self

    # ------------------------------------------------------------------
    # Derived values
    # ------------------------------------------------------------------

    @property
    def grid_side(self) -> int:
        return self.data.size // self.model.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid_side ** 2

    @property
    def k(self) -> int:
        """Effective K (null resolves to ceil(N/33))"""
        if self.surm.k is None:
            return math.ceil(self.n_patches / PATCHES_PER_SELECTION)
        return self.surm.k

    # ------------------------------------------------------------------
    # Flat dotted representation
    # ------------------------------------------------------------------

    def to_flat(self) -> Dict[str, Any]:
        flat: Dict[str, Any] = {}
        for section, values in self.model_dump().items():
            for key, value in values.items():
                flat[f"{section}.{key}"] = value
        return dict(sorted(flat.items()))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(_nest(mapping))
        except ValidationError as e:
            raise ConfigError(_describe(e)) from None

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        if not overrides:
            return self
        merged = _nest(self.to_flat())
        for section, values in _nest(overrides).items():
            if section not in merged or not isinstance(values, dict):
                raise ConfigError(f"unknown config section {section!r}")
            merged[section].update(values)
        return RunConfig.from_mapping(merged)

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        assignments: Iterable[str] = (),
        flags: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """Apply defaults, then the file, then key=value assignments, then flags"""
        config = cls()
        if path is not None:
            config = config.with_overrides(read_config_file(path))
        config = config.with_overrides(parse_assignments(assignments))
        config = config.with_overrides({k: v for k, v in (flags or {}).items() if v is not None})
        logger.debug(f"Resolved run config: {config.to_flat()}")
        return config


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def parse_assignments(assignments: Iterable[str]) -> Dict[str, Any]:
    """'surm.k=32' -> {'surm.k': 32}; values are JSON when they parse, strings otherwise"""
    parsed: Dict[str, Any] = {}
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value, got {item!r}")
        try:
            parsed[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            parsed[key.strip()] = raw
    return parsed


def _nest(mapping: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in mapping.items():
        section, dot, field = key.partition(".")
        if not dot:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be dotted (section.field)")
            nested.setdefault(section, {}).update(value)
            continue
        if "." in field:
            raise ConfigError(f"config key {key!r} nests too deep")
        nested.setdefault(section, {})[field] = value
    return nested


def _describe(error: ValidationError) -> str:
    parts: List[str] = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{location}: {item['msg']}")
    return "invalid configuration: " + "; ".join(parts)


def flag_overrides(**flags: Optional[Any]) -> Dict[str, Any]:
    """Map CLI flag names onto dotted keys"""
    names: Dict[str, Tuple[str, ...]] = {
        "seed": ("train.seed",),
        "out": ("paths.out",),
        "data": ("paths.data",),
        "checkpoint": ("paths.checkpoint",),
        "runs": ("train.runs",),
        "change_patches": ("data.change_patches",),
        "epochs": ("train.epochs",),
    }
    resolved: Dict[str, Any] = {}
    for name, value in flags.items():
        if value is None:
            continue
        for key in names.get(name, ()):
            resolved[key] = value
    return resolved
