"""
Selective uncertainty-guided reconstruction

Both modalities get a diagonal Gaussian per patch from two shallow extractors
(mean and log-variance). The per-patch entropy difference is scored, the K
most inconsistent auxiliary patches are selected, and those patches are
rebuilt from samples of the primary modality's distribution.

Conventions:
    log_sigma holds ln(sigma) where sigma is the diagonal variance term.
    Sampling uses z = mu + exp(log_sigma) * eps literally.
    log_sigma is clamped to [LOG_SIGMA_MIN, LOG_SIGMA_MAX] wherever it is
    exponentiated; the entropy difference uses it directly.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..core import ops
from ..core.exceptions import LossInputError, SelectionError, TensorShapeError
from ..core.tensor import Tensor
from ..utils.logging import get_logger
from ..utils.rng import Purpose, SeedKey, stream
from .layers import MLP, Affine, Params, leaf
from .patch_grid import Modality, PatchGrid, PatchSequence, embed, patchify

logger = get_logger(__name__)

LOG_SIGMA_MIN = -20.0
LOG_SIGMA_MAX = 10.0
COVER_SCALE = 3.0


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistParams:
    mu: Tensor         # [N, d]
    log_sigma: Tensor  # [N, d]
    modality: Modality

    def __post_init__(self):
        if self.mu.rank != 2 or self.mu.shape != self.log_sigma.shape:
            raise TensorShapeError(f"mu {self.mu.shape} and log_sigma {self.log_sigma.shape} must both be [N, d]")

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[1]


@dataclass(frozen=True)
class UncertaintySelection:
    raw: Tensor                 # RawMap [N]
    score: Tensor               # ScoreMap [N], sums to 1
    selected: Tuple[int, ...]   # ascending patch indices

    @property
    def k(self) -> int:
        return len(self.selected)


@dataclass(frozen=True)
class ReconBatch:
    samples: Tensor             # [K, L, d]
    reconstructed: Tensor       # [K, D]
    indices: Tuple[int, ...]    # row r belongs to patch indices[r]


@dataclass(frozen=True)
class SurmParams:
    """Patch embeddings, Le extractors, PatchScore and PatchRecon"""
    embed: Dict[Modality, Affine]
    le_mu: Dict[Modality, MLP]
    le_sigma: Dict[Modality, MLP]
    score: MLP
    recon: MLP

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        raw_dims: Dict[Modality, int],
        embed_dim: int,
        latent_dim: int,
        samples: int,
        le_hidden: int = 16,
        score_hidden: int = 8,
        recon_hidden: int = 32,
    ) -> "SurmParams":
        embed_heads = {m: Affine.init(rng, raw_dims[m], embed_dim) for m in Modality}
        le_mu = {m: MLP.init(rng, embed_dim, le_hidden, latent_dim) for m in Modality}
        le_sigma = {}
        for m in Modality:
            head = MLP.init(rng, embed_dim, le_hidden, latent_dim)
            # start near unit variance
            le_sigma[m] = MLP(head.w1, head.b1, leaf(head.w2.data * 0.1), head.b2)
        return cls(
            embed=embed_heads,
            le_mu=le_mu,
            le_sigma=le_sigma,
            score=identity_score_mlp(score_hidden),
            recon=MLP.init(rng, samples * latent_dim, recon_hidden, embed_dim),
        )

    @classmethod
    def from_params(cls, params: Params, prefix: str = "surm") -> "SurmParams":
        return cls(
            embed={m: Affine.from_params(params, f"embed.{m.value}") for m in Modality},
            le_mu={m: MLP.from_params(params, f"{prefix}.le_mu.{m.value}") for m in Modality},
            le_sigma={m: MLP.from_params(params, f"{prefix}.le_sigma.{m.value}") for m in Modality},
            score=MLP.from_params(params, f"{prefix}.score"),
            recon=MLP.from_params(params, f"{prefix}.recon"),
        )

    def tensors(self, prefix: str = "surm") -> Params:
        out: Params = {}
        for m in Modality:
            out.update(self.embed[m].tensors(f"embed.{m.value}"))
            out.update(self.le_mu[m].tensors(f"{prefix}.le_mu.{m.value}"))
            out.update(self.le_sigma[m].tensors(f"{prefix}.le_sigma.{m.value}"))
        out.update(self.score.tensors(f"{prefix}.score"))
        out.update(self.recon.tensors(f"{prefix}.recon"))
        return out


def identity_score_mlp(hidden: int = 8) -> MLP:
    """Positionwise 1 -> hidden -> 1 MLP computing relu(v) - relu(-v) = v"""
    if hidden < 2:
        raise TensorShapeError(f"identity PatchScore needs at least 2 hidden units, got {hidden}")
    w1 = np.zeros((1, hidden))
    w1[0, :2] = [1.0, -1.0]
    w2 = np.zeros((hidden, 1))
    w2[:2, 0] = [1.0, -1.0]
    return MLP(leaf(w1), leaf(np.zeros(hidden)), leaf(w2), leaf(np.zeros(1)))


@dataclass(frozen=True)
class SurmOutput:
    primary: PatchSequence       # embedded primary X_P
    auxiliary: PatchSequence     # X_A after conditional replacement
    embedded_auxiliary: PatchSequence
    dist_primary: DistParams
    dist_auxiliary: DistParams
    selection: UncertaintySelection
    recon: ReconBatch
    mse: Tensor
    kl: Tensor


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def dist_params(seq: PatchSequence, le_mu: MLP, le_sigma: MLP) -> DistParams:
    """mu = Le1(x), log_sigma = Le2(x)"""
    for head in (le_mu, le_sigma):
        if head.w1.shape[0] != seq.dim:
            raise TensorShapeError(f"extractor expects D={head.w1.shape[0]}, sequence has D={seq.dim}")
    return DistParams(le_mu(seq.embeddings), le_sigma(seq.embeddings), seq.modality)


def entropy_difference(dp_primary: DistParams, dp_auxiliary: DistParams) -> Tensor:
    """v_i = 0.5 * (sum_k log_sigma_P[i,k] - sum_k log_sigma_A[i,k])"""
    if dp_primary.mu.shape != dp_auxiliary.mu.shape:
        raise TensorShapeError(
            f"distribution shapes differ: {dp_primary.mu.shape} vs {dp_auxiliary.mu.shape}"
        )
    diff = ops.sub(dp_primary.log_sigma, dp_auxiliary.log_sigma)
    return ops.mul(ops.sum(diff, axis=1), 0.5)


def score_map(v: Tensor, mlp: MLP) -> Tuple[Tensor, Tensor]:
    """RawMap = fc(ReLU(fc(v))) applied per patch; ScoreMap = softmax(RawMap)"""
    if v.rank != 1:
        raise TensorShapeError(f"entropy differences must be a vector, got {v.shape}")
    raw = ops.reshape(mlp(ops.reshape(v, (v.shape[0], 1))), (v.shape[0],))
    return raw, ops.softmax(raw)


def select_topk(score: Tensor, k: int) -> Tuple[int, ...]:
    """
    Indices of the k largest scores, ties broken by lower index

    Returned in ascending index order. k = 0 selects nothing.
    """
    n = score.shape[0]
    if k < 0 or k > n:
        raise SelectionError(f"cannot select K={k} of N={n} patches")
    order = np.argsort(-score.data.astype(np.float64), kind="stable")
    return tuple(sorted(int(i) for i in order[:k]))


def select(v: Tensor, mlp: MLP, k: int) -> UncertaintySelection:
    """Top-K is ranked on RawMap: softmax keeps its order, but float32 ScoreMap values can underflow into ties"""
    raw, score = score_map(v, mlp)
    return UncertaintySelection(raw, score, select_topk(raw, k))


def draw_epsilon(rng_key: SeedKey, indices: Sequence[int], samples: int, latent_dim: int) -> np.ndarray:
    """Standard normals [K, L, d]; patch i always reads the stream keyed by i"""
    eps = np.zeros((len(indices), samples, latent_dim))
    for row, i in enumerate(indices):
        eps[row] = stream(rng_key, Purpose.EPSILON, i).standard_normal((samples, latent_dim))
    return eps


def reparameterize(
    dp_primary: DistParams,
    indices: Sequence[int],
    samples: int,
    rng_key: SeedKey,
    eps: Optional[np.ndarray] = None,
) -> Tensor:
    """
    z[i, j] = mu_P[i] + exp(log_sigma_P[i]) * eps[i, j] for i in indices

    Args:
        dp_primary: primary distribution parameters
        indices: selected patch indices
        samples: L, number of samples per patch
        rng_key: seed key of the epsilon streams
        eps: optional [K, L, d] override (tests)

    Returns:
        samples tensor [K, L, d]; gradients reach mu and log_sigma only
    """
    if samples < 1:
        raise SelectionError(f"need at least one sample per patch, got L={samples}")
    d = dp_primary.latent_dim
    k = len(indices)
    if eps is None:
        eps = draw_epsilon(rng_key, indices, samples, d)
    elif eps.shape != (k, samples, d):
        raise TensorShapeError(f"eps override {eps.shape} does not match ({k}, {samples}, {d})")

    mu = ops.reshape(ops.take_rows(dp_primary.mu, indices), (k, 1, d))
    log_sigma = ops.clip(ops.take_rows(dp_primary.log_sigma, indices), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    sigma = ops.reshape(ops.exp(log_sigma), (k, 1, d))
    return ops.add(mu, ops.mul(sigma, Tensor(eps)))


def reconstruct_patch(samples: Tensor, decoder: MLP) -> Tensor:
    """x_hat = fc(ReLU(fc(concat_j z[i, j]))): [K, L, d] -> [K, D]"""
    if samples.rank != 3:
        raise TensorShapeError(f"samples must be [K, L, d], got {samples.shape}")
    k, count, d = samples.shape
    if decoder.w1.shape[0] != count * d:
        raise TensorShapeError(f"decoder expects {decoder.w1.shape[0]} inputs, samples give L*d={count * d}")
    return decoder(ops.reshape(samples, (k, count * d)))


def recon_mse_loss(recon: Tensor, targets: Tensor) -> Tensor:
    """(1/K) * sum_i ||x_hat_i - x_P_i||^2; zero for K = 0"""
    if recon.shape != targets.shape:
        raise TensorShapeError(f"reconstruction {recon.shape} and targets {targets.shape} differ")
    k = recon.shape[0]
    if k == 0:
        return Tensor(0.0)
    diff = ops.sub(recon, targets)
    return ops.div(ops.sum(ops.mul(diff, diff)), float(k))


def kl_loss(dp_auxiliary: DistParams, dp_primary: DistParams, indices: Sequence[int]) -> Tensor:
    """
    sum_{i in indices} KL(N(mu_A, diag sigma_A) || N(mu_P, diag sigma_P)), sigma = variance

    0.5 * sum_k [ (ls_P - ls_A) + (sigma_A + (mu_A - mu_P)^2) / sigma_P - 1 ]
    """
    if not indices:
        return Tensor(0.0)
    mu_a = ops.take_rows(dp_auxiliary.mu, indices)
    mu_p = ops.take_rows(dp_primary.mu, indices)
    ls_a = ops.clip(ops.take_rows(dp_auxiliary.log_sigma, indices), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    ls_p = ops.clip(ops.take_rows(dp_primary.log_sigma, indices), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    gap = ops.sub(mu_a, mu_p)
    spread = ops.add(ops.exp(ls_a), ops.mul(gap, gap))
    terms = ops.sub(ops.add(ops.sub(ls_p, ls_a), ops.mul(spread, ops.exp(ops.neg(ls_p)))), 1.0)
    return ops.mul(ops.sum(terms), 0.5)


def patch_cover(label: Tensor, patch_size: int) -> np.ndarray:
    """Tree-pixel fraction of every grid cell of a [1,H,W] label, row-major [N]"""
    if label.rank != 3 or label.shape[0] != 1:
        raise TensorShapeError(f"label must be [1,H,W], got {label.shape}")
    grid = PatchGrid.for_image(label, patch_size)
    cells = label.data[0].astype(np.float64).reshape(grid.rows, patch_size, grid.cols, patch_size)
    return cells.mean(axis=(1, 3)).reshape(-1)


def dispersion_calibration_loss(dp: DistParams, cover: np.ndarray, scale: float = COVER_SCALE) -> Tensor:
    """
    mean_i sum_k (log_sigma[i,k] - scale * (cover_i - 1))^2

    Full cover maps to unit variance and bare ground to exp(-scale). Once both
    modalities follow their labelled cover, the entropy difference peaks where
    the primary shows crowns the auxiliary misses.
    """
    n = dp.log_sigma.shape[0]
    if cover.shape != (n,):
        raise TensorShapeError(f"cover {cover.shape} does not match {n} patches")
    if scale <= 0:
        raise LossInputError(f"cover scale must be positive, got {scale}")
    target = Tensor((scale * (cover - 1.0)).reshape(n, 1))
    gap = ops.sub(dp.log_sigma, target)
    return ops.mean(ops.sum(ops.mul(gap, gap), axis=1))


def apply_replacement(seq_auxiliary: PatchSequence, recon: ReconBatch) -> PatchSequence:
    """Rows in recon.indices come from the reconstruction; every other row is kept"""
    if recon.reconstructed.shape[0] != len(recon.indices):
        raise SelectionError("reconstruction rows are not aligned with the selected indices")
    if not recon.indices:
        return seq_auxiliary
    replaced = ops.scatter_rows(seq_auxiliary.embeddings, recon.indices, recon.reconstructed)
    return seq_auxiliary.with_embeddings(replaced)


def embed_image(image: Tensor, patch_size: int, head: Affine, modality: Modality) -> PatchSequence:
    grid = PatchGrid.for_image(image, patch_size)
    return PatchSequence(grid, embed(patchify(image, patch_size), head.w, head.b), modality)


def surm_forward(
    img_primary: Tensor,
    img_auxiliary: Tensor,
    params: SurmParams,
    patch_size: int,
    k: int,
    samples: int,
    rng_key: SeedKey,
    eps: Optional[np.ndarray] = None,
) -> SurmOutput:
    """
    Full SURM pass on one image pair

    patchify -> embed -> dist_params -> entropy_difference -> score_map ->
    select_topk -> reparameterize -> reconstruct -> losses -> replacement
    """
    if img_primary.shape[1:] != img_auxiliary.shape[1:]:
        raise TensorShapeError(
            f"primary {img_primary.shape} and auxiliary {img_auxiliary.shape} differ spatially"
        )
    seq_p = embed_image(img_primary, patch_size, params.embed[Modality.PRIMARY], Modality.PRIMARY)
    seq_a = embed_image(img_auxiliary, patch_size, params.embed[Modality.AUXILIARY], Modality.AUXILIARY)

    dp_p = dist_params(seq_p, params.le_mu[Modality.PRIMARY], params.le_sigma[Modality.PRIMARY])
    dp_a = dist_params(seq_a, params.le_mu[Modality.AUXILIARY], params.le_sigma[Modality.AUXILIARY])
    selection = select(entropy_difference(dp_p, dp_a), params.score, k)
    indices = selection.selected

    if indices:
        z = reparameterize(dp_p, indices, samples, rng_key, eps)
        reconstructed = reconstruct_patch(z, params.recon)
        mse = recon_mse_loss(reconstructed, ops.take_rows(seq_p.embeddings, indices))
    else:
        z = Tensor(np.zeros((0, samples, dp_p.latent_dim)))
        reconstructed = Tensor(np.zeros((0, seq_a.dim)))
        mse = Tensor(0.0)
    recon = ReconBatch(z, reconstructed, indices)
    kl = kl_loss(dp_a, dp_p, indices)

    logger.debug(f"SURM selected {len(indices)} of {seq_a.grid.n_patches} patches")
    return SurmOutput(
        primary=seq_p,
        auxiliary=apply_replacement(seq_a, recon),
        embedded_auxiliary=seq_a,
        dist_primary=dp_p,
        dist_auxiliary=dp_a,
        selection=selection,
        recon=recon,
        mse=mse,
        kl=kl,
    )


def reconstruction_error(output: SurmOutput) -> np.ndarray:
    """Per-patch ||x_hat_A - x_A||^2 over the selected patches, zero elsewhere"""
    errors = np.zeros(output.embedded_auxiliary.grid.n_patches, dtype=np.float64)
    if output.recon.indices:
        original = output.embedded_auxiliary.embeddings.data[list(output.recon.indices)].astype(np.float64)
        rebuilt = output.recon.reconstructed.data.astype(np.float64)
        errors[list(output.recon.indices)] = ((rebuilt - original) ** 2).sum(axis=1)
    return errors
