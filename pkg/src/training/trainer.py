"""
Training, evaluation, uncertainty scoring and ablation runs

All randomness derives from the run seed: batch order from (seed, epoch),
SURM sampling from (seed, epoch, sample id). Per-sample work may run on a
thread pool; gradients and metrics are always reduced in sample order.
"""
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app_config import PATHS_CONFIG
from ..config.run_config import RunConfig
from ..core.exceptions import CheckpointError, ConfigError, DatasetError
from ..core.tensor import Tensor, gradients, no_grad
from ..data.export import grid_map, write_metrics_report, write_pgm
from ..data.models import SceneSample, Split
from ..data.storage import DatasetStore, load_checkpoint, save_checkpoint, write_json, write_tensor
from ..models.network import NetOutput, TreeCoverNet
from ..models.surm import reconstruction_error
from ..utils.logging import ContextualLogger, get_logger
from ..utils.parallel import ordered_map
from ..utils.rng import Purpose, stream
from .losses import LossWeights, network_loss
from .metrics import ConfusionCounts, DetectionCounts, accumulate, binarize, confusion, detection_summary, metrics
from .optim import SGD

logger = get_logger(__name__)

LOSS_KEYS = ("total", "seg", "edge", "mse", "kl", "cdm", "cal")
VELOCITY_PREFIX = "velocity."
CHECKPOINT_FORMAT = "murtree-desk/1"
# decoded training samples kept in memory; least recently used are dropped first
SAMPLE_CACHE_LIMIT = 256

PathLike = Union[str, Path]
Predictor = Callable[[SceneSample], np.ndarray]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_training_state(path: PathLike, net: TreeCoverNet, optimizer: SGD, epoch: int) -> None:
    velocity, hyper = optimizer.state()
    tensors: Dict[str, object] = dict(net.params)
    tensors.update({VELOCITY_PREFIX + name: value for name, value in velocity.items()})
    meta = {
        "format": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "config": net.config.to_flat(),
        "optimizer": hyper,
    }
    save_checkpoint(path, tensors, meta)


def load_training_state(
    path: PathLike, config: Optional[RunConfig] = None
) -> Tuple[TreeCoverNet, SGD, int]:
    """
    Restore network, optimizer and completed epoch count

    The network layout always comes from the checkpoint; data, train and
    paths settings come from `config` when given.
    """
    tensors, meta = load_checkpoint(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} was not written by this trainer (format {meta.get('format')!r})")
    stored = RunConfig.from_mapping(meta["config"])
    if config is not None:
        keep = {k: v for k, v in stored.to_flat().items() if k.split(".")[0] in ("model", "surm")}
        stored = config.with_overrides(keep)
    params = {name: t for name, t in tensors.items() if not name.startswith(VELOCITY_PREFIX)}
    velocity = {
        name[len(VELOCITY_PREFIX):]: t.data.copy()
        for name, t in tensors.items() if name.startswith(VELOCITY_PREFIX)
    }
    net = TreeCoverNet(stored, params)
    optimizer = SGD(stored.train.lr, stored.train.momentum, velocity)
    return net, optimizer, int(meta.get("epoch", 0))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    grads: Dict[str, np.ndarray]
    losses: Dict[str, float]


@dataclass
class EpochRecord:
    epoch: int
    losses: Dict[str, float]
    val: Optional[Dict[str, object]] = None

    def to_dict(self) -> Dict[str, object]:
        return {"type": "epoch", "epoch": self.epoch, "losses": self.losses, "val": self.val}


class Trainer:
    """SGD training of a TreeCoverNet on the train split of a dataset"""

    def __init__(
        self,
        config: RunConfig,
        store: DatasetStore,
        net: Optional[TreeCoverNet] = None,
        optimizer: Optional[SGD] = None,
        start_epoch: int = 0,
        cache_limit: int = SAMPLE_CACHE_LIMIT,
    ):
        self.config = config
        self.store = store
        self.net = net or TreeCoverNet.init(config)
        self.optimizer = optimizer or SGD(config.train.lr, config.train.momentum)
        self.epoch = start_epoch
        self.weights = LossWeights.from_section(config.loss)
        self.log = ContextualLogger(logger, command="train")
        self.cache_limit = cache_limit
        self._cache: "OrderedDict[int, SceneSample]" = OrderedDict()

    def _sample(self, sample_id: int) -> SceneSample:
        if sample_id in self._cache:
            self._cache.move_to_end(sample_id)
            return self._cache[sample_id]
        sample = self.store.load_sample(sample_id)
        if self.cache_limit > 0:
            self._cache[sample_id] = sample
            while len(self._cache) > self.cache_limit:
                self._cache.popitem(last=False)
        return sample

    def sample_step(self, sample: SceneSample, epoch: int) -> StepResult:
        """Loss and parameter gradients of one sample"""
        net = self.net
        output = net.forward(sample.primary, sample.auxiliary, (self.config.train.seed, epoch, sample.id))
        breakdown = network_loss(output, sample.label, sample.edge, self.weights, self.config.surm.cover_scale)
        names = list(net.params)
        grads = gradients(breakdown.total, [net.params[n] for n in names])
        return StepResult(dict(zip(names, grads)), breakdown.components)

    def batch_order(self, epoch: int) -> List[int]:
        ids = self.store.split_ids(Split.TRAIN)
        if not ids:
            raise DatasetError(f"training split of {self.store.root} is empty")
        order = stream(self.config.train.seed, Purpose.SHUFFLE, epoch).permutation(len(ids))
        return [ids[i] for i in order]

    def train_epoch(self, epoch: int) -> Dict[str, float]:
        """One pass over the train split; returns mean loss components"""
        order = self.batch_order(epoch)
        size = self.config.train.batch_size
        totals = {key: 0.0 for key in LOSS_KEYS}
        for start in range(0, len(order), size):
            batch = [self._sample(i) for i in order[start:start + size]]
            results = ordered_map(lambda s: self.sample_step(s, epoch), batch)
            mean_grads = {}
            for name in self.net.params:
                accumulated = np.zeros(self.net.params[name].shape, dtype=np.float64)
                for result in results:
                    accumulated += result.grads[name]
                mean_grads[name] = (accumulated / len(results)).astype(np.float32)
            self.net = self.net.with_params(self.optimizer.step(self.net.params, mean_grads))
            for result in results:
                for key in LOSS_KEYS:
                    totals[key] += result.losses[key]
        return {key: value / len(order) for key, value in totals.items()}

    def fit(self, out_dir: PathLike, epochs: Optional[int] = None) -> List[EpochRecord]:
        """
        Train up to `epochs` total epochs, writing the checkpoint after every epoch
        and appending one JSON line per epoch to the training log
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        target = self.config.train.epochs if epochs is None else epochs
        log_path = out_dir / PATHS_CONFIG["training_log_file"]
        checkpoint = out_dir / PATHS_CONFIG["checkpoint_file"]
        if self.epoch == 0 or not log_path.exists():
            header = {"type": "header", "config": self.config.to_flat(), "parameters": self.net.parameter_count()}
            log_path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")

        has_val = bool(self.store.split_ids(Split.VAL))
        records = []
        while self.epoch < target:
            epoch = self.epoch
            losses = self.train_epoch(epoch)
            self.epoch += 1
            val = Evaluator(self.net, self.store).evaluate(Split.VAL) if has_val else None
            record = EpochRecord(self.epoch, losses, val)
            records.append(record)
            with log_path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            save_training_state(checkpoint, self.net, self.optimizer, self.epoch)
            self.log.bind(epoch=self.epoch).info(
                f"loss {losses['total']:.4f} (seg {losses['seg']:.4f}, edge {losses['edge']:.4f}, "
                f"mse {losses['mse']:.4f}, kl {losses['kl']:.4f}, cdm {losses['cdm']:.4f}, cal {losses['cal']:.4f})"
            )
        if not records and not checkpoint.exists():
            save_training_state(checkpoint, self.net, self.optimizer, self.epoch)
        return records


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class SampleEvaluation:
    counts: ConfusionCounts
    edge_counts: Optional[ConfusionCounts]
    detection: DetectionCounts
    recon_error: float


class Evaluator:
    """Segmentation metrics and uncertainty-detection scores over one split"""

    def __init__(self, net: TreeCoverNet, store: DatasetStore, predictor: Optional[Predictor] = None):
        self.net = net
        self.store = store
        self.predictor = predictor

    def evaluate_sample(self, sample: SceneSample) -> SampleEvaluation:
        with no_grad():
            output = self.net.forward(sample.primary, sample.auxiliary, (self.net.config.train.seed, sample.id))
        prob = self.predictor(sample) if self.predictor is not None else output.seg.seg_prob.data
        edge_counts = None
        if output.seg.edge_prob is not None:
            edge_counts = confusion(binarize(output.seg.edge_prob), sample.edge.data)
        errors = reconstruction_error(output.surm)
        selected = output.surm.selection.selected
        return SampleEvaluation(
            counts=confusion(binarize(prob), sample.label.data),
            edge_counts=edge_counts,
            detection=DetectionCounts.of(selected, sample.changed_cells),
            recon_error=float(errors[list(selected)].mean()) if selected else 0.0,
        )

    def evaluate(self, split: Union[Split, str]) -> Dict[str, object]:
        split = Split(split)
        ids = self.store.split_ids(split)
        if not ids:
            raise DatasetError(f"split {split.value} of {self.store.root} is empty")
        results = ordered_map(lambda i: self.evaluate_sample(self.store.load_sample(i)), ids)
        counts = accumulate(r.counts for r in results)
        report: Dict[str, object] = dict(metrics(counts).to_dict())
        report["confusion"] = counts.to_dict()
        edge = [r.edge_counts for r in results if r.edge_counts is not None]
        if edge:
            report["edge_f1"] = metrics(accumulate(edge)).f1
        detection = detection_summary([r.detection for r in results])
        report["detection_recall"] = detection["recall"]
        report["detection_precision"] = detection["precision"]
        report["detection_scenes"] = detection["scenes"]
        report["recon_error"] = float(np.mean([r.recon_error for r in results]))
        report["samples"] = len(ids)
        return report

    def write_report(self, split: Union[Split, str], out_dir: PathLike) -> Tuple[Path, Dict[str, object]]:
        split = Split(split)
        report = self.evaluate(split)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / PATHS_CONFIG["metrics_file"].format(split=split.value)
        write_metrics_report(path, {split.value: report})
        return path, report


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

@dataclass
class ScoreResult:
    selected: Tuple[int, ...]
    files: Dict[str, Path] = field(default_factory=dict)


def score_pair(
    net: TreeCoverNet,
    primary: Tensor,
    auxiliary: Tensor,
    rng_key,
    out_dir: PathLike,
) -> ScoreResult:
    """Write ScoreMap (MTF1) and heatmaps (PGM) for one image pair"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with no_grad():
        output: NetOutput = net.forward(primary, auxiliary, rng_key)
    grid = output.surm.primary.grid
    p = grid.patch_size
    score = grid_map(output.surm.selection.score, grid.rows, grid.cols)

    files = {"score_map": out_dir / "score_map.mtf", "uncertainty": out_dir / "uncertainty.pgm"}
    write_tensor(files["score_map"], score)
    write_pgm(files["uncertainty"], score, upscale=p)

    files["recon_error"] = out_dir / "recon_error.pgm"
    write_pgm(files["recon_error"], grid_map(reconstruction_error(output.surm), grid.rows, grid.cols), upscale=p)

    files["seg"] = out_dir / "seg.pgm"
    write_pgm(files["seg"], output.seg.seg_prob)
    if output.seg.edge_prob is not None:
        files["edge"] = out_dir / "edge.pgm"
        write_pgm(files["edge"], output.seg.edge_prob)
    if output.attention is not None:
        files["attention"] = out_dir / "attention.pgm"
        write_pgm(files["attention"], output.attention.values)
    if output.cdm is not None:
        rows, cols = output.cdm.grid_shape
        files["cdm_discrepancy"] = out_dir / "cdm_discrepancy.pgm"
        write_pgm(files["cdm_discrepancy"], grid_map(output.cdm.discrepancy, rows, cols),
                  upscale=primary.shape[1] // rows)

    files["selected"] = out_dir / "selected.json"
    write_json(files["selected"], {"selected": list(output.surm.selection.selected)})
    return ScoreResult(output.surm.selection.selected, files)


def score_sample(net: TreeCoverNet, store: DatasetStore, sample_id: int, out_dir: PathLike) -> ScoreResult:
    sample = store.load_sample(sample_id)
    target = Path(out_dir) / PATHS_CONFIG["score_dir"].format(sample=sample_id)
    return score_pair(net, sample.primary, sample.auxiliary, (net.config.train.seed, sample.id), target)


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------

_OFF = {"surm.k": 0, "model.use_cdm": False, "model.use_gma": False, "model.use_rh": False}
_ON_KEYS = {"SURM": "surm.k", "CDM": "model.use_cdm", "GMA": "model.use_gma", "RH": "model.use_rh"}


def ablation_variants(config: RunConfig) -> Dict[str, Dict[str, object]]:
    """Baseline, single-component, full and leave-one-out variants"""
    on = {"surm.k": config.k, "model.use_cdm": True, "model.use_gma": True, "model.use_rh": True}
    variants: Dict[str, Dict[str, object]] = {"baseline": dict(_OFF)}
    for name, key in _ON_KEYS.items():
        variants[f"+{name}"] = {**_OFF, key: on[key]}
    variants["full"] = dict(on)
    for name, key in _ON_KEYS.items():
        variants[f"-{name}"] = {**on, key: _OFF[key]}
    return variants


def _variant_dir(name: str) -> str:
    if name.startswith("+"):
        return f"with_{name[1:].lower()}"
    if name.startswith("-"):
        return f"without_{name[1:].lower()}"
    return name


def run_ablation(
    config: RunConfig,
    store: DatasetStore,
    out_dir: PathLike,
    runs: Optional[int] = None,
    variants: Optional[Sequence[str]] = None,
) -> Dict[str, object]:
    """Train and test every variant over several seeds; writes the ablation report"""
    runs = config.train.runs if runs is None else runs
    table = ablation_variants(config)
    names = list(variants) if variants else list(table)
    unknown = [name for name in names if name not in table]
    if unknown:
        raise ConfigError(f"unknown ablation variants {unknown}; choose from {list(table)}")
    log = ContextualLogger(logger, command="ablate")
    report: Dict[str, object] = {}
    for name in names:
        per_run = []
        for run in range(runs):
            seed = config.train.seed + run
            variant = config.with_overrides({**table[name], "train.seed": seed})
            trainer = Trainer(variant, store)
            trainer.fit(Path(out_dir) / "ablation" / _variant_dir(name) / f"seed{seed}")
            per_run.append(Evaluator(trainer.net, store).evaluate(Split.TEST))
            log.bind(variant=name, seed=seed).info(f"mIoU {per_run[-1]['miou']:.4f}")
        report[name] = {
            "overrides": table[name],
            "runs": per_run,
            "mean": {key: float(np.mean([r[key] for r in per_run])) for key in ("miou", "iou", "f1", "precision", "recall")},
        }
    path = Path(out_dir) / PATHS_CONFIG["ablation_file"]
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    write_json(path, report)
    return report
