"""
TreeCoverNet: SURM + dual encoders + CDM + GMA-gated decoder + refinement head
"""
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config.run_config import RunConfig
from ..core import ops
from ..core.exceptions import CheckpointError, TensorShapeError
from ..core.tensor import Tensor
from ..utils.logging import get_logger
from ..utils.rng import Purpose, SeedKey, stream
from .cdm import ProjectionHeads, cdm_loss, patch_discrepancy, project
from .decoder import (
    AlignParams,
    DecoderUnitParams,
    RefineParams,
    SegOutput,
    align_unit,
    decoder_unit,
    plain_head,
    refinement_head,
)
from .encoder import EncoderParams, encode
from .gma import AttentionMap, attention_from_image
from .layers import Conv, Params
from .patch_grid import Modality, PatchGrid, PatchSequence, flatten_grid, reassemble
from .surm import SurmOutput, SurmParams, surm_forward

logger = get_logger(__name__)

CHANNELS = {Modality.PRIMARY: 3, Modality.AUXILIARY: 1}


@lru_cache(maxsize=32)
def _layout_for(flat_config: str) -> Tuple[Tuple[str, Tuple[int, ...]], ...]:
    config = RunConfig.from_mapping(json.loads(flat_config))
    params = TreeCoverNet._initial_params(config, np.random.default_rng(0))
    return tuple((name, params[name].shape) for name in sorted(params))


def parameter_layout(config: RunConfig) -> Dict[str, Tuple[int, ...]]:
    """Name and shape of every parameter tensor the configuration calls for"""
    return dict(_layout_for(json.dumps(config.to_flat(), sort_keys=True)))


@dataclass(frozen=True)
class CdmResult:
    loss: Tensor
    discrepancy: np.ndarray   # per cell of the attachment grid
    grid_shape: Tuple[int, int]


@dataclass(frozen=True)
class NetOutput:
    seg: SegOutput
    surm: SurmOutput
    cdm: Optional[CdmResult]
    attention: Optional[AttentionMap]


class TreeCoverNet:
    """
    Parameters live in a flat, name-sorted dict of leaf tensors so that
    gradients, optimizer state and checkpoints all share one key space.
    """

    def __init__(self, config: RunConfig, params: Params):
        self.config = config
        self.params: Params = dict(sorted(params.items()))
        self._check_complete()

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def init(cls, config: RunConfig, seed: Optional[int] = None) -> "TreeCoverNet":
        seed = config.train.seed if seed is None else seed
        rng = stream(seed, Purpose.INIT)
        return cls(config, cls._initial_params(config, rng))

    @staticmethod
    def _initial_params(config: RunConfig, rng: np.random.Generator) -> Params:
        model, surm = config.model, config.surm
        p = model.patch_size
        widths = model.encoder_channels
        params: Params = {}

        surm_params = SurmParams.init(
            rng,
            raw_dims={m: CHANNELS[m] * p * p for m in Modality},
            embed_dim=model.embed_dim,
            latent_dim=surm.latent_dim,
            samples=surm.samples,
            le_hidden=surm.le_hidden,
            score_hidden=surm.score_hidden,
            recon_hidden=surm.recon_hidden,
        )
        params.update(surm_params.tensors())

        for m in Modality:
            params.update(EncoderParams.init(rng, model.embed_dim, widths).tensors(f"encoder.{m.value}"))

        if model.use_cdm:
            dim = model.embed_dim if model.cdm_stage == 0 else widths[model.cdm_stage - 1]
            heads = ProjectionHeads.init(rng, {m: dim for m in Modality}, model.proj_dim)
            params.update(heads.tensors())

        for n, width in enumerate(widths, start=1):
            align = AlignParams.init(rng, width, width, width, model.se_reduction)
            params.update(align.tensors(f"fuse.stage{n}"))

        for n, width in enumerate(reversed(widths[1:]), start=1):
            params.update(DecoderUnitParams.init(rng, width, model.se_reduction).tensors(f"decoder.unit{n}"))

        if model.use_rh:
            params.update(RefineParams.init(rng, widths[0], model.rh_channels).tensors())
        else:
            params.update(Conv.init(rng, widths[0], 1, kernel=1).tensors("head.seg"))
        return params

    def _check_complete(self) -> None:
        layout = parameter_layout(self.config)
        expected = set(layout)
        missing = expected - set(self.params)
        unexpected = set(self.params) - expected
        if missing or unexpected:
            raise CheckpointError(
                f"parameters do not match the configuration: missing {sorted(missing)[:5]}, "
                f"unexpected {sorted(unexpected)[:5]}"
            )
        for name, shape in layout.items():
            if self.params[name].shape != shape:
                raise CheckpointError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
            if not self.params[name].requires_grad:
                self.params[name] = Tensor(self.params[name].data, requires_grad=True)

    def with_params(self, params: Params) -> "TreeCoverNet":
        return TreeCoverNet(self.config, params)

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def depth(self) -> int:
        return len(self.config.model.encoder_channels)

    def parameter_count(self, prefix: str = "") -> int:
        return sum(t.size for name, t in self.params.items() if name.startswith(prefix))

    def parameter_summary(self) -> Dict[str, int]:
        groups: Dict[str, int] = {}
        for name, tensor in self.params.items():
            group = name.split(".")[0]
            groups[group] = groups.get(group, 0) + tensor.size
        return groups

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def forward(
        self,
        primary: Tensor,
        auxiliary: Tensor,
        rng_key: SeedKey,
        eps: Optional[np.ndarray] = None,
        k: Optional[int] = None,
    ) -> NetOutput:
        """
        One image pair through the full network

        Args:
            primary: [3,H,W] trusted modality
            auxiliary: [1,H,W] complementary modality
            rng_key: seed key of the SURM epsilon streams
            eps: optional epsilon override for tests
            k: optional K override (defaults to the configured value)

        Returns:
            NetOutput with probabilities, SURM internals, CDM result and attention
        """
        config, model = self.config, self.config.model
        if primary.shape[1:] != auxiliary.shape[1:]:
            raise TensorShapeError(f"primary {primary.shape} and auxiliary {auxiliary.shape} differ spatially")
        height, width = primary.shape[1:]
        params = self.params

        surm = surm_forward(
            primary,
            auxiliary,
            SurmParams.from_params(params),
            patch_size=model.patch_size,
            k=config.k if k is None else k,
            samples=config.surm.samples,
            rng_key=rng_key,
            eps=eps,
        )

        features: Dict[Modality, List[Tensor]] = {}
        for m, seq in ((Modality.PRIMARY, surm.primary), (Modality.AUXILIARY, surm.auxiliary)):
            encoder = EncoderParams.from_params(params, f"encoder.{m.value}", self.depth)
            features[m] = encode(reassemble(seq), encoder)

        cdm = self._cdm(surm, features) if model.use_cdm else None

        fused = [
            align_unit(features[Modality.PRIMARY][n], features[Modality.AUXILIARY][n],
                       AlignParams.from_params(params, f"fuse.stage{n + 1}"))
            for n in range(self.depth)
        ]

        attention = attention_from_image(primary, model.gamma) if model.use_gma else None
        units = self.depth - 1
        out = fused[-1]
        for n in range(1, units + 1):
            gated = attention if attention is not None and n > units - model.gma_units else None
            out = decoder_unit(out, gated, DecoderUnitParams.from_params(params, f"decoder.unit{n}"))
            out = ops.add(out, fused[-1 - n])

        quarter = (height // 4, width // 4)
        if out.shape[1:] != quarter:
            out = ops.resize_bilinear(out, *quarter)
        if model.use_rh:
            seg = refinement_head(out, RefineParams.from_params(params))
        else:
            seg = plain_head(out, Conv.from_params(params, "head.seg"))
        return NetOutput(seg=seg, surm=surm, cdm=cdm, attention=attention)

    def _cdm(self, surm: SurmOutput, features: Dict[Modality, List[Tensor]]) -> CdmResult:
        stage = self.config.model.cdm_stage
        heads = ProjectionHeads.from_params(self.params)
        if stage == 0:
            sequences = [surm.primary, surm.auxiliary]
        else:
            sequences = []
            for m in Modality:
                feature_map = features[m][stage - 1]
                grid = PatchGrid(feature_map.shape[1], feature_map.shape[2], 1)
                sequences.append(PatchSequence(grid, flatten_grid(feature_map), m))
        proj_p, proj_a = (project(seq, heads) for seq in sequences)
        grid = sequences[0].grid
        return CdmResult(cdm_loss(proj_p, proj_a), patch_discrepancy(proj_p, proj_a), (grid.rows, grid.cols))
