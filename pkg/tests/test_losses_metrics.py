"""
Tests for the training losses, hard-count metrics and the SGD optimizer
"""
import numpy as np
import pytest

from src.core import ops
from src.core.exceptions import ConfigError, LossInputError, TensorShapeError
from src.core.gradcheck import grad_check
from src.core.tensor import Tensor, gradients
from src.training.losses import LossWeights, soft_iou_loss, total_loss
from src.training.metrics import (
    ConfusionCounts,
    DetectionCounts,
    accumulate,
    binarize,
    confusion,
    detection_summary,
    metrics,
)
from src.training.optim import SGD, sgd_step


def _mask(rng, shape=(1, 8, 8)) -> np.ndarray:
    return (rng.uniform(size=shape) < 0.4).astype(np.float64)


class TestSoftIou:
    def test_exact_prediction(self, rng):
        target = _mask(rng)
        assert soft_iou_loss(Tensor(target), Tensor(target)).item() == pytest.approx(0.0, abs=1e-5)

    def test_total_miss(self, rng):
        target = _mask(rng)
        assert soft_iou_loss(Tensor(1 - target), Tensor(target)).item() == pytest.approx(1.0, abs=1e-5)

    def test_half_confidence(self):
        target = np.zeros((1, 4, 4))
        target[0, :2] = 1.0
        loss = soft_iou_loss(Tensor(np.full((1, 4, 4), 0.5)), Tensor(target)).item()
        assert loss == pytest.approx(2.0 / 3.0, abs=1e-4)

    def test_range_and_gradient(self, rng):
        target = Tensor(_mask(rng, (1, 4, 4)))
        prob = rng.uniform(0.05, 0.95, size=(1, 4, 4))
        assert 0.0 <= soft_iou_loss(Tensor(prob), target).item() <= 1.0
        assert grad_check(lambda p: soft_iou_loss(p, target), prob) < 1e-3

    def test_decreasing_in_true_positives(self):
        target = Tensor(np.array([[[1.0, 1.0, 0.0, 0.0]]]))
        weaker = soft_iou_loss(Tensor(np.array([[[0.2, 0.5, 0.3, 0.0]]])), target).item()
        stronger = soft_iou_loss(Tensor(np.array([[[0.6, 0.5, 0.3, 0.0]]])), target).item()
        assert stronger < weaker

    def test_shape_mismatch(self):
        with pytest.raises(TensorShapeError):
            soft_iou_loss(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 2, 3))))

    @pytest.mark.parametrize("bad", [-0.1, 1.2])
    def test_probabilities_out_of_range(self, bad):
        with pytest.raises(LossInputError):
            soft_iou_loss(Tensor(np.full((1, 2, 2), bad)), Tensor(np.ones((1, 2, 2))))


class TestTotalLoss:
    def test_zero_components(self):
        zero = Tensor(0.0)
        assert total_loss(zero, zero, zero, zero, zero, LossWeights()).item() == 0.0

    def test_default_weights_on_unit_components(self):
        one = Tensor(1.0)
        assert total_loss(one, one, one, one, one, LossWeights()).item() == pytest.approx(2.0, abs=1e-6)

    def test_calibration_term_is_weighted(self):
        one = Tensor(1.0)
        with_cal = total_loss(one, one, one, one, one, LossWeights(), cal=Tensor(0.5)).item()
        assert with_cal == pytest.approx(2.0 + LossWeights().cal * 0.5, abs=1e-6)
        assert total_loss(one, one, one, one, one, LossWeights(cal=0.0), cal=one).item() == pytest.approx(2.0, abs=1e-6)

    def test_linear_in_distillation_weight(self):
        one = Tensor(1.0)
        slopes = []
        for weight in (0.3, 0.6):
            cdm = Tensor(1.0, requires_grad=True)
            (grad,) = gradients(total_loss(one, one, one, one, cdm, LossWeights(cdm=weight)), [cdm])
            slopes.append(float(grad))
        assert slopes[1] == pytest.approx(2 * slopes[0], rel=1e-6)

    def test_superposition(self, rng):
        parts = rng.uniform(0, 1, size=5)
        weights = LossWeights(1.0, 0.3, 0.2, 0.2, 0.3)
        value = total_loss(*[Tensor(p) for p in parts], weights).item()
        expected = float(np.dot(parts, [1.0, 0.3, 0.2, 0.2, 0.3]))
        assert value == pytest.approx(expected, abs=1e-5)

    def test_negative_weight_rejected(self):
        with pytest.raises(LossInputError):
            LossWeights(edge=-0.1)


class TestConfusion:
    def test_perfect(self, rng):
        label = _mask(rng)
        c = confusion(label, label)
        assert c.fp == c.fn == 0
        assert metrics(c).to_dict() == {"miou": 1.0, "iou": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_all_positive_on_empty_label(self):
        c = confusion(np.ones((4, 4)), np.zeros((4, 4)))
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 16, 0, 0)

    def test_matches_loop_oracle(self, rng):
        pred, label = _mask(rng, (32, 32)), _mask(rng, (32, 32))
        expected = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
        for p, y in zip(pred.reshape(-1), label.reshape(-1)):
            key = ("t" if p == y else "f") + ("p" if p else "n")
            expected[key] += 1
        c = confusion(pred, label)
        assert c.to_dict() == expected
        assert c.total == 32 * 32

    def test_shape_mismatch(self):
        with pytest.raises(TensorShapeError):
            confusion(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_binarize_threshold(self):
        assert binarize(Tensor([0.2, 0.5, 0.9])).tolist() == [False, True, True]

    def test_accumulate(self):
        parts = [ConfusionCounts(1, 2, 3, 4), ConfusionCounts(5, 6, 7, 8)]
        assert accumulate(parts) == ConfusionCounts(6, 8, 10, 12)

    def test_negative_counts_rejected(self):
        with pytest.raises(LossInputError, match="non-negative"):
            ConfusionCounts(tp=-1)


class TestMetrics:
    def test_analytic_table(self):
        m = metrics(ConfusionCounts(tp=3, fp=1, fn=1, tn=0))
        assert m.iou == pytest.approx(0.6)
        assert m.precision == pytest.approx(0.75)
        assert m.recall == pytest.approx(0.75)
        assert m.f1 == pytest.approx(0.75)
        # background class: TP=0, FP=1, FN=1
        assert m.miou == pytest.approx(0.3)

    @pytest.mark.parametrize("seed", range(20))
    def test_f1_is_harmonic_mean(self, seed):
        tp, fp, fn, tn = (int(v) for v in np.random.default_rng(seed).integers(1, 500, size=4))
        m = metrics(ConfusionCounts(tp, fp, fn, tn))
        precision, recall = tp / (tp + fp), tp / (tp + fn)
        assert m.f1 == pytest.approx(2 * precision * recall / (precision + recall), abs=1e-9)
        assert m.miou == pytest.approx(0.5 * (tp / (tp + fp + fn) + tn / (tn + fn + fp)), abs=1e-9)

    def test_scale_invariance(self):
        base = metrics(ConfusionCounts(7, 3, 5, 11)).to_dict()
        scaled = metrics(ConfusionCounts(70, 30, 50, 110)).to_dict()
        for key, value in base.items():
            assert scaled[key] == pytest.approx(value, abs=1e-12)

    def test_empty_counts_are_guarded(self):
        assert metrics(ConfusionCounts()).iou == 0.0


class TestDetection:
    def test_counts(self):
        d = DetectionCounts.of([1, 4, 7], [4, 7, 9, 12])
        assert (d.hits, d.selected, d.changed) == (2, 3, 4)
        assert d.recall == 0.5
        assert d.precision == pytest.approx(2 / 3)

    def test_summary_skips_unchanged_scenes(self):
        scenes = [DetectionCounts.of([1, 2], [1, 2]), DetectionCounts.of([1, 2], []), DetectionCounts.of([3], [4])]
        summary = detection_summary(scenes)
        assert summary == {"recall": 0.5, "precision": 0.5, "scenes": 2}

    def test_summary_without_changes(self):
        assert detection_summary([DetectionCounts.of([], [])])["recall"] is None


class TestOptimizer:
    def test_zero_gradient_keeps_parameters(self):
        params = {"w": Tensor([1.0, -2.0], requires_grad=True)}
        updated = sgd_step(params, {"w": np.zeros(2)}, 0.01)
        np.testing.assert_array_equal(updated["w"].data, params["w"].data)

    def test_single_step(self):
        updated = sgd_step({"w": Tensor([1.0], requires_grad=True)}, {"w": np.array([2.0])}, 0.01)
        assert updated["w"].data[0] == pytest.approx(0.98, abs=1e-7)
        assert updated["w"].requires_grad

    def test_quadratic_bowl_converges(self):
        params = {"p": Tensor([1.0, 1.0], requires_grad=True)}
        for _ in range(1000):
            (grad,) = gradients(ops.sum(ops.mul(params["p"], params["p"])), [params["p"]])
            params = sgd_step(params, {"p": grad}, 0.1)
        assert float(np.sum(params["p"].data.astype(np.float64) ** 2)) < 1e-6

    @pytest.mark.parametrize("lr", [0.0, -0.01])
    def test_learning_rate_must_be_positive(self, lr):
        with pytest.raises(ConfigError):
            sgd_step({}, {}, lr)

    def test_gradient_shape_must_match(self):
        with pytest.raises(TensorShapeError):
            sgd_step({"w": Tensor([1.0, 2.0])}, {"w": np.zeros(3)}, 0.1)

    def test_momentum_accumulates_velocity(self):
        optimizer = SGD(lr=0.1, momentum=0.9)
        params = {"w": Tensor([1.0], requires_grad=True)}
        for _ in range(2):
            params = optimizer.step(params, {"w": np.array([1.0])})
        assert params["w"].data[0] == pytest.approx(0.71, abs=1e-6)
        velocity, hyper = optimizer.state()
        assert velocity["w"][0] == pytest.approx(1.9)
        assert hyper == {"lr": 0.1, "momentum": 0.9}

    def test_zero_momentum_matches_plain_step(self):
        params = {"w": Tensor([0.5, 0.25], requires_grad=True)}
        grads = {"w": np.array([0.3, -0.7])}
        plain = sgd_step(params, grads, 0.05)["w"].data
        assert SGD(0.05).step(params, grads)["w"].data.tobytes() == plain.tobytes()

    def test_momentum_range(self):
        with pytest.raises(ConfigError):
            SGD(0.1, momentum=1.0)
