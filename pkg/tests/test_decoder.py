"""
Tests for gradient magnitude attention and the refinement decoder
"""
import math

import numpy as np
import pytest

from src.core import ops
from src.core.exceptions import ConfigError, TensorShapeError
from src.core.gradcheck import grad_check
from src.core.tensor import Tensor, compute_dtype
from src.models.decoder import (
    AlignParams,
    DecoderUnitParams,
    RefineParams,
    SEParams,
    align_unit,
    decoder_unit,
    modulate,
    plain_head,
    refinement_head,
    se_block,
)
from src.models.gma import (
    AttentionMap,
    SOBEL_X,
    SOBEL_Y,
    attention_from_image,
    gma_attention,
    grad_magnitude,
    lam_enhance,
    luminance,
)
from src.models.layers import Affine, Conv, leaf

CEILING = 1.0 - math.exp(-1.0)


def _se(channels: int, hidden: int, bias: float) -> SEParams:
    """SE block whose gate is the constant sigmoid(bias)"""
    return SEParams(
        Affine(leaf(np.zeros((channels, hidden))), leaf(np.zeros(hidden))),
        Affine(leaf(np.zeros((hidden, channels))), leaf(np.full(channels, bias))),
    )


class TestAttention:
    def test_luminance_of_rgb(self):
        image = np.stack([np.full((2, 2), v) for v in (0.3, 0.6, 0.9)])
        np.testing.assert_allclose(luminance(Tensor(image)).data, np.full((1, 2, 2), 0.6), atol=1e-6)

    def test_luminance_ignores_extra_bands(self, rng):
        image = rng.uniform(size=(4, 3, 3))
        expected = np.zeros((1, 3, 3))
        for r in range(3):
            for c in range(3):
                expected[0, r, c] = (image[0, r, c] + image[1, r, c] + image[2, r, c]) / 3
        np.testing.assert_allclose(luminance(Tensor(image)).data, expected, atol=1e-6)

    def test_single_band_luminance_is_a_copy(self, rng):
        image = rng.uniform(size=(1, 3, 3)).astype(np.float32)
        np.testing.assert_array_equal(luminance(Tensor(image)).data, image)

    def test_lam_values(self):
        out = lam_enhance(Tensor(np.array([[[1.0, 0.5, 0.0]]])), 2.0).data
        np.testing.assert_allclose(out, [[[0.0, 0.25, 1.0]]], atol=1e-6)

    @pytest.mark.parametrize("gamma", [1.0, 0.5])
    def test_lam_gamma_must_exceed_one(self, gamma):
        with pytest.raises(ConfigError):
            lam_enhance(Tensor(np.ones((1, 2, 2))), gamma)

    def test_zero_field_has_zero_gradient(self):
        out = grad_magnitude(Tensor(np.zeros((1, 6, 6)))).data
        np.testing.assert_array_equal(out, 0.0)

    def test_vertical_step_matches_hand_convolution(self):
        field = np.zeros((8, 8))
        field[:, 4:] = 1.0
        padded = np.pad(field, 1)
        gx, gy = np.zeros((8, 8)), np.zeros((8, 8))
        for r in range(8):
            for c in range(8):
                window = padded[r:r + 3, c:c + 3]
                gx[r, c] = (window * SOBEL_X).sum()
                gy[r, c] = (window * SOBEL_Y).sum()
        expected = np.hypot(gx, gy)
        expected /= expected.max()

        out = grad_magnitude(Tensor(field[None])).data[0]
        np.testing.assert_allclose(out, expected, atol=1e-6)
        assert out.max() == pytest.approx(1.0, abs=1e-6)
        # interior rows: the step columns hold each row peak, flat columns stay zero
        np.testing.assert_allclose(out[1:7, 3:5], out[1:7].max(axis=1, keepdims=True).repeat(2, axis=1), atol=1e-6)
        assert (out[1:7, 3:5] > 0.5).all()
        np.testing.assert_allclose(out[1:7, :3], 0.0, atol=1e-6)

    def test_attention_values(self):
        out = gma_attention(Tensor(np.array([[[0.0, 1.0]]]))).values.data
        assert out[0, 0, 0] == 0.0
        assert out[0, 0, 1] == pytest.approx(CEILING, abs=1e-6)

    def test_attention_is_monotone(self, rng):
        low = rng.uniform(0, 1, size=200)
        high = np.minimum(low + rng.uniform(0.01, 0.5, size=200), 1.0)
        keep = high > low
        a_low = gma_attention(Tensor(low[None, None, keep])).values.data
        a_high = gma_attention(Tensor(high[None, None, keep])).values.data
        assert (a_low < a_high).all()

    @pytest.mark.parametrize("seed", range(5))
    def test_attention_range(self, seed):
        image = np.random.default_rng(seed).uniform(size=(3, 12, 12))
        values = attention_from_image(Tensor(image)).values.data
        assert values.shape == (1, 12, 12)
        assert values.min() >= 0.0
        assert values.max() <= CEILING + 1e-6

    def test_constant_bright_image_has_no_attention(self):
        values = attention_from_image(Tensor(np.full((3, 8, 8), 0.4))).values.data
        np.testing.assert_array_equal(values, 0.0)

    def test_attention_is_deterministic(self, rng):
        image = Tensor(rng.uniform(size=(3, 8, 8)))
        first = attention_from_image(image).values.data
        assert first.tobytes() == attention_from_image(image).values.data.tobytes()


class TestSEBlock:
    def test_reduction_must_divide_channels(self, rng):
        with pytest.raises(TensorShapeError):
            SEParams.init(rng, 6, 4)

    def test_saturated_gate_passes_features(self, rng):
        f = rng.standard_normal((4, 3, 3))
        out = se_block(Tensor(f), _se(4, 1, 30.0)).data
        np.testing.assert_allclose(out, f.astype(np.float32), atol=1e-4)

    def test_zero_logits_halve_features(self, rng):
        f = rng.standard_normal((4, 3, 3)).astype(np.float32)
        np.testing.assert_allclose(se_block(Tensor(f), _se(4, 1, 0.0)).data, f / 2, atol=1e-7)

    def test_random_block_matches_composition(self, rng):
        params = SEParams.init(rng, 8, 4)
        f = rng.standard_normal((8, 3, 3))
        pooled = f.max(axis=(1, 2))
        fc1 = [params.fc1.w.data.astype(np.float64), params.fc1.b.data.astype(np.float64)]
        fc2 = [params.fc2.w.data.astype(np.float64), params.fc2.b.data.astype(np.float64)]
        hidden = np.maximum(pooled @ fc1[0] + fc1[1], 0.0)
        gate = 1.0 / (1.0 + np.exp(-(hidden @ fc2[0] + fc2[1])))
        with compute_dtype(np.float64):
            out = se_block(Tensor(f), params).data
        np.testing.assert_allclose(out, f * gate[:, None, None], atol=1e-6)

    def test_channel_mismatch(self, rng):
        with pytest.raises(TensorShapeError):
            se_block(Tensor(np.ones((2, 2, 2))), SEParams.init(rng, 4, 2))

    def test_gradient(self, rng):
        params = SEParams.init(rng, 4, 2)
        weights = Tensor(rng.standard_normal((4, 3, 3)))
        assert grad_check(lambda f: ops.sum(ops.mul(se_block(f, params), weights)), rng.standard_normal((4, 3, 3))) < 1e-3


class TestAlignUnit:
    def test_passthrough_construction(self, rng):
        f_p, f_a = rng.standard_normal((2, 4, 4)), np.zeros((3, 4, 4))
        selector = np.zeros((2, 5, 1, 1))
        selector[0, 0, 0, 0] = selector[1, 1, 0, 0] = 1.0
        params = AlignParams(Conv(leaf(selector), leaf(np.zeros(2))), _se(2, 1, 30.0))
        out = align_unit(Tensor(f_p), Tensor(f_a), params).data
        np.testing.assert_allclose(out, f_p.astype(np.float32), atol=1e-4)

    def test_swapped_inputs_with_swapped_columns(self, rng):
        params = AlignParams.init(rng, 2, 3, 4, reduction=2)
        f_p, f_a = Tensor(rng.standard_normal((2, 4, 4))), Tensor(rng.standard_normal((3, 4, 4)))
        w = params.proj.w.data
        swapped = AlignParams(Conv(leaf(np.concatenate([w[:, 2:], w[:, :2]], axis=1)), params.proj.b), params.se)
        np.testing.assert_allclose(
            align_unit(f_p, f_a, params).data, align_unit(f_a, f_p, swapped).data, atol=1e-5
        )

    def test_output_channels(self, rng):
        params = AlignParams.init(rng, 2, 3, 4, reduction=2)
        out = align_unit(Tensor(rng.standard_normal((2, 4, 4))), Tensor(rng.standard_normal((3, 4, 4))), params)
        assert out.shape == (4, 4, 4)

    def test_spatial_mismatch(self, rng):
        params = AlignParams.init(rng, 2, 2, 4, reduction=2)
        with pytest.raises(TensorShapeError, match="spatially"):
            align_unit(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((2, 2, 2))), params)


class TestDecoderUnit:
    def test_output_shape(self, rng):
        params = DecoderUnitParams.init(rng, 8, 2)
        assert decoder_unit(Tensor(rng.standard_normal((8, 3, 5))), None, params).shape == (4, 6, 10)

    def test_odd_channels_rejected(self, rng):
        with pytest.raises(TensorShapeError):
            DecoderUnitParams.init(rng, 5, 1)

    def test_zero_attention_is_identity_gate(self, rng):
        params = DecoderUnitParams.init(rng, 4, 2)
        f = Tensor(rng.standard_normal((4, 4, 4)))
        zero = AttentionMap(Tensor(np.zeros((1, 4, 4))))
        assert decoder_unit(f, zero, params).data.tobytes() == decoder_unit(f, None, params).data.tobytes()

    def test_modulate_resamples_attention(self, rng):
        f = rng.standard_normal((2, 4, 4))
        attention = AttentionMap(Tensor(np.full((1, 16, 16), 0.5)))
        np.testing.assert_allclose(modulate(Tensor(f), attention).data, 1.5 * f, atol=1e-5)

    def test_modulate_gradient(self, rng):
        attention = AttentionMap(Tensor(rng.uniform(0, CEILING, size=(1, 8, 8))))
        weights = Tensor(rng.standard_normal((2, 4, 4)))
        assert grad_check(lambda f: ops.sum(ops.mul(modulate(f, attention), weights)), rng.standard_normal((2, 4, 4))) < 1e-3


class TestHeads:
    def test_refinement_head_reaches_full_resolution(self, rng):
        params = RefineParams.init(rng, 8, 4)
        out = refinement_head(Tensor(rng.standard_normal((8, 4, 5))), params)
        assert out.seg_prob.shape == (1, 16, 20)
        assert out.edge_prob.shape == (1, 16, 20)
        for prob in (out.seg_prob.data, out.edge_prob.data):
            assert prob.min() >= 0.0 and prob.max() <= 1.0

    def test_plain_head_has_no_edge_output(self, rng):
        out = plain_head(Tensor(rng.standard_normal((8, 4, 4))), Conv.init(rng, 8, 1))
        assert out.seg_prob.shape == (1, 16, 16)
        assert out.edge_prob is None

    def test_gradient_through_both_heads(self, rng):
        params = RefineParams.init(rng, 4, 4)
        f = Tensor(rng.standard_normal((4, 2, 2)))
        seg_weights = Tensor(rng.standard_normal((1, 8, 8)))
        edge_weights = Tensor(rng.standard_normal((1, 8, 8)))

        def weighted_output(w):
            head = RefineParams(params.stage1, params.stage2, Conv(w, params.seg.b), Conv(w, params.edge.b))
            out = refinement_head(f, head)
            return ops.add(ops.sum(ops.mul(out.seg_prob, seg_weights)), ops.sum(ops.mul(out.edge_prob, edge_weights)))

        assert grad_check(weighted_output, params.seg.w.data) < 1e-3

    def test_parameter_names_round_trip(self, rng):
        params = RefineParams.init(rng, 4, 4)
        names = sorted(params.tensors())
        assert names[0] == "rh.edge.b"
        restored = RefineParams.from_params(params.tensors(), "rh")
        assert restored.seg.w is params.seg.w
