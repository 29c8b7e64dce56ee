"""
Training objectives

Segmentation and edge losses use soft (probabilistic) counts so they are
differentiable; hard counts are only used by the evaluation metrics.
"""
from dataclasses import dataclass
from typing import Dict, Optional

from ..config.run_config import LossSection
from ..core import ops
from ..core.exceptions import LossInputError, TensorShapeError
from ..core.tensor import Tensor
from ..models.network import NetOutput
from ..models.surm import COVER_SCALE, dispersion_calibration_loss, patch_cover

IOU_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    seg: float = 1.0
    edge: float = 0.3
    mse: float = 0.2
    kl: float = 0.2
    cdm: float = 0.3
    cal: float = 4.0

    def __post_init__(self):
        negative = {k: v for k, v in self.__dict__.items() if v < 0}
        if negative:
            raise LossInputError(f"loss weights must be >= 0, got {negative}")

    @classmethod
    def from_section(cls, section: LossSection) -> "LossWeights":
        return cls(section.seg, section.edge, section.mse, section.kl, section.cdm, section.cal)


@dataclass(frozen=True)
class LossBreakdown:
    total: Tensor
    components: Dict[str, float]


def soft_iou_loss(prob: Tensor, target: Tensor, eps: float = IOU_EPS) -> Tensor:
    """1 - (TP + eps) / (TP + FP + FN + eps) with soft counts"""
    if prob.shape != target.shape:
        raise TensorShapeError(f"probabilities {prob.shape} and target {target.shape} differ")
    low, high = float(prob.data.min()), float(prob.data.max())
    if low < 0.0 or high > 1.0:
        raise LossInputError(f"probabilities must lie in [0, 1], got range [{low}, {high}]")
    tp = ops.sum(ops.mul(prob, target))
    fp = ops.sum(ops.mul(prob, ops.sub(1.0, target)))
    fn = ops.sum(ops.mul(ops.sub(1.0, prob), target))
    union = ops.add(ops.add(ops.add(tp, fp), fn), eps)
    return ops.sub(1.0, ops.div(ops.add(tp, eps), union))


def total_loss(
    seg: Tensor,
    edge: Tensor,
    mse: Tensor,
    kl: Tensor,
    cdm: Tensor,
    weights: LossWeights,
    cal: Optional[Tensor] = None,
) -> Tensor:
    """
    lambda_S*L_seg + lambda_E*L_edge + (lambda_mse*L_MSE + lambda_kl*L_KL) + lambda_C*L_CDM

    The dispersion calibration term lambda_cal*L_cal is added when `cal` is given.
    """
    reconstruction = ops.add(ops.mul(mse, weights.mse), ops.mul(kl, weights.kl))
    out = ops.add(ops.mul(seg, weights.seg), ops.mul(edge, weights.edge))
    out = ops.add(ops.add(out, reconstruction), ops.mul(cdm, weights.cdm))
    if cal is not None:
        out = ops.add(out, ops.mul(cal, weights.cal))
    return out


def calibration_loss(output: NetOutput, label: Tensor, scale: float = COVER_SCALE) -> Tensor:
    """Dispersion calibration of both modalities against the labelled patch cover"""
    surm = output.surm
    cover = patch_cover(label, surm.primary.grid.patch_size)
    return ops.add(
        dispersion_calibration_loss(surm.dist_primary, cover, scale),
        dispersion_calibration_loss(surm.dist_auxiliary, cover, scale),
    )


def network_loss(
    output: NetOutput,
    label: Tensor,
    edge: Optional[Tensor],
    weights: LossWeights,
    cover_scale: float = COVER_SCALE,
) -> LossBreakdown:
    """Total loss of one forward pass; disabled components contribute zero"""
    zero = Tensor(0.0)
    seg = soft_iou_loss(output.seg.seg_prob, label)
    if output.seg.edge_prob is not None and edge is not None:
        edge_loss = soft_iou_loss(output.seg.edge_prob, edge)
    else:
        edge_loss = zero
    cdm = output.cdm.loss if output.cdm is not None else zero
    # K = 0 leaves the score unused
    cal = calibration_loss(output, label, cover_scale) if output.surm.selection.k else zero
    total = total_loss(seg, edge_loss, output.surm.mse, output.surm.kl, cdm, weights, cal)
    components = {
        "total": total.item(),
        "seg": seg.item(),
        "edge": edge_loss.item(),
        "mse": output.surm.mse.item(),
        "kl": output.surm.kl.item(),
        "cdm": cdm.item(),
        "cal": cal.item(),
    }
    return LossBreakdown(total, components)
