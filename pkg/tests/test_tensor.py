"""
Tests for the tensor value type, the gradient tape and the kernels
"""
import numpy as np
import pytest

from src.core import ops
from src.core.exceptions import GradCheckError, NonFiniteError, SelectionError, TensorShapeError
from src.core.gradcheck import grad_check
from src.core.tensor import Tensor, compute_dtype, gradients, no_grad

GRAD_TOL = 1e-3


def _weigh(y: Tensor) -> Tensor:
    """Scalar sum(y * W) with a fixed random W, so every output element matters"""
    weights = np.random.default_rng(99).standard_normal(y.shape)
    return ops.sum(ops.mul(y, Tensor(weights)))


def _const(seed: int, shape) -> Tensor:
    return Tensor(np.random.default_rng(1000 + seed).standard_normal(shape))


def _positive(x: Tensor) -> Tensor:
    return ops.add(ops.mul(x, x), 0.5)


# name -> (input shape, function of the input)
UNARY_CASES = {
    "add_broadcast": ((3, 4), lambda x: ops.add(x, _const(0, (4,)))),
    "sub": ((3, 4), lambda x: ops.sub(_const(1, (3, 4)), x)),
    "mul": ((3, 4), lambda x: ops.mul(x, x)),
    "div": ((3, 4), lambda x: ops.div(_const(2, (3, 4)), _positive(x))),
    "neg": ((5,), lambda x: ops.neg(x)),
    "exp": ((5,), lambda x: ops.exp(x)),
    "log": ((5,), lambda x: ops.log(_positive(x))),
    "sqrt": ((5,), lambda x: ops.sqrt(_positive(x))),
    "power": ((5,), lambda x: ops.power(_positive(x), 2.5)),
    "sigmoid": ((2, 3), lambda x: ops.sigmoid(x)),
    "softmax": ((3, 4), lambda x: ops.softmax(x, axis=-1)),
    "sum_axis": ((3, 4), lambda x: ops.sum(x, axis=1)),
    "mean_keepdims": ((2, 3, 4), lambda x: ops.mean(x, axis=(1, 2), keepdims=True)),
    "reshape": ((3, 4), lambda x: ops.reshape(x, (2, 6))),
    "permute": ((2, 3, 4), lambda x: ops.permute(x, (2, 0, 1))),
    "concat": ((2, 3), lambda x: ops.concat([x, ops.mul(x, 2.0)], axis=0)),
    "take_rows": ((4, 3), lambda x: ops.take_rows(x, [0, 2, 2])),
    "scatter_rows_base": ((4, 3), lambda x: ops.scatter_rows(x, [1], _const(3, (1, 3)))),
    "scatter_rows_rows": ((4, 3), lambda x: ops.scatter_rows(_const(4, (4, 3)), [0, 2], ops.take_rows(x, [1, 3]))),
    "affine": ((3, 4), lambda x: ops.affine(x, _const(5, (4, 5)), _const(6, (5,)))),
    "conv3x3": ((2, 4, 4), lambda x: ops.conv2d(x, _const(7, (3, 2, 3, 3)), _const(8, (3,)))),
    "conv3x3_stride2": ((2, 4, 4), lambda x: ops.conv2d(x, _const(9, (3, 2, 3, 3)), _const(10, (3,)), stride=2)),
    "conv1x1": ((2, 3, 3), lambda x: ops.conv2d(x, _const(11, (4, 2, 1, 1)), _const(12, (4,)))),
    "conv_kernel": ((3, 2, 3, 3), lambda k: ops.conv2d(_const(13, (2, 4, 4)), k, _const(14, (3,)), stride=2)),
    "resize": ((2, 3, 3), lambda x: ops.resize_bilinear(x, 5, 4)),
    "upsample2x": ((1, 2, 3), lambda x: ops.bilinear_upsample2x(x)),
    "global_max_pool": ((3, 2, 2), lambda x: ops.global_max_pool(x)),
    "batch_norm": ((2, 3, 3), lambda x: ops.batch_norm(x, _const(15, (2,)), _const(16, (2,)))),
    "batch_norm_gamma": ((2,), lambda g: ops.batch_norm(_const(17, (2, 3, 3)), g, _const(18, (2,)))),
}


class TestTensorValue:
    def test_buffer_is_read_only(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_constructor_copies(self):
        source = np.ones(3)
        t = Tensor(source)
        source[0] = 7.0
        assert t.data[0] == 1.0

    def test_default_precision_is_float32(self):
        assert Tensor([1.0]).data.dtype == np.float32

    def test_compute_dtype_switches_precision(self):
        with compute_dtype(np.float64):
            assert Tensor([1.0]).data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32

    def test_rank_above_four_rejected(self):
        with pytest.raises(TensorShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_item_needs_single_value(self):
        assert Tensor(3.5).item() == 3.5
        with pytest.raises(TensorShapeError):
            Tensor([1.0, 2.0]).item()


class TestKernels:
    def test_broadcast_mismatch(self):
        with pytest.raises(TensorShapeError, match="do not broadcast"):
            ops.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_non_finite_result_names_op(self):
        with np.errstate(divide="ignore"):
            with pytest.raises(NonFiniteError, match="log"):
                ops.log(Tensor([0.0, 1.0]))

    def test_softmax_sums_to_one_for_large_inputs(self):
        out = ops.softmax(Tensor([1000.0, 1001.0, 999.0]))
        assert out.data.sum() == pytest.approx(1.0, abs=1e-6)
        assert int(np.argmax(out.data)) == 1

    def test_softmax_rejects_empty(self):
        with pytest.raises(TensorShapeError):
            ops.softmax(Tensor(np.zeros(0)))

    def test_sum_accumulates_in_float64(self):
        values = np.full(1 << 20, 0.1, dtype=np.float32)
        expected = float(values.astype(np.float64).sum())
        assert ops.sum(Tensor(values)).item() == pytest.approx(expected, rel=1e-7)

    def test_conv2d_matches_loop_oracle(self, rng):
        x = rng.standard_normal((2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        for stride in (1, 2):
            size = (5 + 2 - 3) // stride + 1
            expected = np.zeros((3, size, size))
            for f in range(3):
                for r in range(size):
                    for c in range(size):
                        window = padded[:, r * stride:r * stride + 3, c * stride:c * stride + 3]
                        expected[f, r, c] = (window * k[f]).sum() + b[f]
            with compute_dtype(np.float64):
                got = ops.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride).data
            np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_conv2d_rejects_bad_kernel(self):
        with pytest.raises(TensorShapeError, match="1x1 or 3x3"):
            ops.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros(1)))
        with pytest.raises(TensorShapeError, match="stride"):
            ops.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)), stride=3)

    def test_resize_to_same_size_is_identity(self, rng):
        x = rng.standard_normal((2, 4, 3))
        np.testing.assert_allclose(ops.resize_bilinear(Tensor(x), 4, 3).data, x.astype(np.float32), atol=1e-6)

    def test_upsample_of_constant_is_constant(self):
        out = ops.bilinear_upsample2x(Tensor(np.full((1, 3, 3), 0.25)))
        assert out.shape == (1, 6, 6)
        np.testing.assert_allclose(out.data, 0.25, atol=1e-7)

    def test_batch_norm_standardises_each_channel(self, rng):
        x = Tensor(rng.standard_normal((3, 4, 4)) * 5 + 2)
        out = ops.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        np.testing.assert_allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.std(axis=(1, 2)), 1.0, atol=1e-3)

    def test_global_max_pool(self):
        x = Tensor(np.arange(8, dtype=float).reshape(2, 2, 2))
        np.testing.assert_array_equal(ops.global_max_pool(x).data.reshape(-1), [3.0, 7.0])

    def test_affine_identity_weight(self, rng):
        x = rng.standard_normal((3, 4))
        out = ops.affine(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, x.astype(np.float32), atol=1e-7)

    def test_affine_analytic(self):
        out = ops.affine(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([3.0]))
        assert out.shape == (1, 1)
        assert out.item() == 6.0

    def test_affine_matches_loop_oracle(self, rng):
        x, w, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 4)), rng.standard_normal(4)
        expected = np.zeros((5, 4))
        for i in range(5):
            for j in range(4):
                expected[i, j] = b[j]
                for k in range(3):
                    expected[i, j] += x[i, k] * w[k, j]
        with compute_dtype(np.float64):
            got = ops.affine(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_activation_values(self):
        assert ops.activation(Tensor([-1.0]), "relu").item() == 0.0
        assert ops.activation(Tensor([2.5]), ops.Activation.RELU).item() == 2.5
        assert ops.activation(Tensor([0.0]), "sigmoid").item() == pytest.approx(0.5, abs=1e-7)
        with pytest.raises(ValueError):
            ops.activation(Tensor([0.0]), "tanh")

    def test_sigmoid_gradient_at_zero(self):
        x = Tensor([0.0], requires_grad=True)
        (grad,) = gradients(ops.sum(ops.activation(x, ops.Activation.SIGMOID)), [x])
        assert grad[0] == pytest.approx(0.25, abs=1e-7)

    def test_softmax_of_uniform_input(self):
        np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=1e-7)

    def test_softmax_keeps_argmax(self, rng):
        for _ in range(20):
            v = rng.standard_normal(16)
            assert int(np.argmax(ops.softmax(Tensor(v)).data)) == int(np.argmax(v.astype(np.float32)))

    def test_conv2d_delta_kernel_is_identity(self, rng):
        x = rng.standard_normal((1, 5, 6))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        out = ops.conv2d(Tensor(x), Tensor(kernel), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x.astype(np.float32))

    def test_conv2d_box_kernel_counts_neighbours(self):
        c = 0.5
        out = ops.conv2d(Tensor(np.full((1, 5, 5), c)), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1))).data[0]
        np.testing.assert_allclose(out[1:4, 1:4], 9 * c, atol=1e-6)
        for corner in (out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]):
            assert corner == pytest.approx(4 * c, abs=1e-6)
        assert out[0, 2] == pytest.approx(6 * c, abs=1e-6)

    def test_bilinear_single_pixel(self):
        out = ops.resize_bilinear(Tensor([[[5.0]]]), 2, 2)
        np.testing.assert_array_equal(out.data, np.full((1, 2, 2), 5.0, dtype=np.float32))

    def test_bilinear_ramp_matches_formula(self):
        # half-pixel sample centres clamped to the edge rows and columns
        out = ops.bilinear_upsample2x(Tensor([[[0.0, 1.0], [2.0, 3.0]]])).data[0]
        coords = np.clip((np.arange(4) + 0.5) / 2 - 0.5, 0.0, 1.0)
        expected = 2 * coords[:, None] + coords[None, :]
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_global_max_pool_one_hot(self):
        x = np.zeros((2, 4, 4))
        x[1, 2, 3] = 5.0
        np.testing.assert_array_equal(ops.global_max_pool(Tensor(x)).data.reshape(-1), [0.0, 5.0])

    def test_global_max_pool_matches_loop_oracle(self, rng):
        x = rng.standard_normal((3, 5, 4)).astype(np.float32)
        expected = []
        for channel in x:
            best = -np.inf
            for value in channel.reshape(-1):
                best = max(best, value)
            expected.append(best)
        np.testing.assert_array_equal(ops.global_max_pool(Tensor(x)).data.reshape(-1), expected)

    def test_batch_norm_constant_channel_is_zero(self, rng):
        x = np.full((2, 3, 3), 4.0)
        x[1] = rng.standard_normal((3, 3))
        out = ops.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
        np.testing.assert_array_equal(out[0], 0.0)

    def test_batch_norm_zero_gamma_gives_beta(self, rng):
        out = ops.batch_norm(Tensor(rng.standard_normal((2, 3, 3))), Tensor(np.zeros(2)), Tensor([0.5, -2.0])).data
        np.testing.assert_allclose(out[0], 0.5, atol=1e-7)
        np.testing.assert_allclose(out[1], -2.0, atol=1e-7)

    def test_row_index_checks(self):
        with pytest.raises(SelectionError):
            ops.take_rows(Tensor(np.zeros((3, 2))), [3])
        with pytest.raises(SelectionError, match="unique"):
            ops.scatter_rows(Tensor(np.zeros((3, 2))), [1, 1], Tensor(np.zeros((2, 2))))


class TestTape:
    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("name", sorted(UNARY_CASES))
    def test_grad_check(self, name, seed):
        shape, fn = UNARY_CASES[name]
        point = np.random.default_rng(seed).standard_normal(shape)
        assert grad_check(lambda x: _weigh(fn(x)), point) < GRAD_TOL

    def test_relu_away_from_kink(self):
        point = np.array([-1.5, -0.4, 0.3, 2.0])
        assert grad_check(lambda x: _weigh(ops.relu(x)), point) < GRAD_TOL

    def test_clip_inside_interval(self):
        point = np.array([-0.5, 0.1, 0.7])
        assert grad_check(lambda x: _weigh(ops.clip(x, -1.0, 1.0)), point) < GRAD_TOL

    def test_grad_check_sum_of_squares(self):
        def squares(x):
            return ops.sum(ops.mul(x, x))

        x = Tensor([1.0, 2.0], requires_grad=True)
        (grad,) = gradients(squares(x), [x])
        np.testing.assert_allclose(grad, [2.0, 4.0], atol=1e-6)
        assert grad_check(squares, [1.0, 2.0]) < 1e-4

    def test_grad_check_needs_scalar(self):
        with pytest.raises(GradCheckError):
            grad_check(lambda x: ops.mul(x, 2.0), np.ones(3))

    def test_unreachable_tensor_gets_zero_gradient(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        grad_a, grad_b = gradients(ops.sum(ops.mul(a, a)), [a, b])
        np.testing.assert_allclose(grad_a, [2.0, 4.0])
        np.testing.assert_array_equal(grad_b, [0.0])

    def test_shared_subexpression_accumulates(self):
        a = Tensor([3.0], requires_grad=True)
        y = ops.add(ops.mul(a, a), ops.mul(a, 2.0))
        (grad,) = gradients(ops.sum(y), [a])
        assert grad[0] == pytest.approx(8.0)

    def test_backward_populates_leaves(self):
        a = Tensor([1.0, -2.0], requires_grad=True)
        ops.sum(ops.mul(a, 3.0)).backward()
        np.testing.assert_allclose(a.grad, [3.0, 3.0])

    def test_no_grad_records_nothing(self):
        a = Tensor([1.0], requires_grad=True)
        with no_grad():
            out = ops.mul(a, 2.0)
        assert out.record is None and not out.requires_grad
        assert ops.mul(a, 2.0).record is not None

    def test_gradients_need_scalar_loss(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(TensorShapeError):
            gradients(ops.mul(a, 2.0), [a])
