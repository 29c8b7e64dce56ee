"""
Training module: losses, metrics, optimizer, trainer and evaluation
"""
from .losses import LossBreakdown, LossWeights, network_loss, soft_iou_loss, total_loss
from .metrics import ConfusionCounts, DetectionCounts, Metrics, confusion, metrics
from .optim import SGD, sgd_step
from .trainer import (
    Evaluator,
    Trainer,
    load_training_state,
    run_ablation,
    save_training_state,
    score_pair,
    score_sample,
)

__all__ = [
    'LossBreakdown', 'LossWeights', 'network_loss', 'soft_iou_loss', 'total_loss',
    'ConfusionCounts', 'DetectionCounts', 'Metrics', 'confusion', 'metrics',
    'SGD', 'sgd_step',
    'Evaluator', 'Trainer', 'load_training_state', 'run_ablation', 'save_training_state',
    'score_pair', 'score_sample',
]
