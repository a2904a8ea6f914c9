"""Unit tests for the autodiff tensor engine."""

import numpy as np
import pytest
from conftest import central_difference, relative_error
from hypothesis import given, settings
from hypothesis import strategies as st

from sepformer import tensor as T
from sepformer.errors import ConfigurationError, InputTooShortError, UsageError


def t_(data, rg=False):
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


class TestConv1d:
    def test_first_tap_kernel(self):
        out = T.conv1d(t_([[1, 2, 3, 4]]), t_([[[1, 0]]]), t_([0.0]), stride=1)
        np.testing.assert_array_equal(out.data, [[1, 2, 3]])

    def test_strided_sum_kernel(self):
        # hand evaluation: t=0 -> 1+2, t=1 -> 3+4
        out = T.conv1d(t_([[1, 2, 3, 4]]), t_([[[1, 1]]]), t_([0.0]), stride=2)
        np.testing.assert_array_equal(out.data, [[3, 7]])

    def test_output_length_formula(self):
        x = t_(np.zeros((1, 16000)))
        w = t_(np.zeros((4, 1, 16)))
        out = T.conv1d(x, w, t_(np.zeros(4)), stride=8)
        assert out.shape == (4, 1999)

    def test_bias_broadcast(self):
        out = T.conv1d(t_(np.zeros((1, 5))), t_(np.zeros((3, 1, 2))), t_([1.0, 2.0, 3.0]), 1)
        np.testing.assert_array_equal(out.data, np.tile([[1.0], [2.0], [3.0]], (1, 4)))

    def test_channel_mismatch_raises(self):
        with pytest.raises(ConfigurationError):
            T.conv1d(t_(np.zeros((2, 8))), t_(np.zeros((3, 1, 2))), t_(np.zeros(3)), 1)

    def test_input_shorter_than_kernel_raises(self):
        with pytest.raises(InputTooShortError):
            T.conv1d(t_(np.zeros((1, 3))), t_(np.zeros((2, 1, 4))), t_(np.zeros(2)), 1)


class TestConv1dTranspose:
    def test_single_frame_scatters_kernel(self):
        out = T.conv1d_transpose(t_([[1.0]]), t_([[[2.0, 3.0]]]), stride=1)
        np.testing.assert_array_equal(out.data, [[2, 3]])

    def test_stride_two_scatter_add(self):
        out = T.conv1d_transpose(t_([[1.0, 1.0]]), t_([[[1.0, 1.0]]]), stride=2)
        np.testing.assert_array_equal(out.data, [[1, 1, 1, 1]])

    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_adjoint_of_conv1d(self, stride):
        rng = np.random.default_rng(7 + stride)
        x = rng.standard_normal((2, 17))
        w = rng.standard_normal((3, 2, 4))
        tp = (17 - 4) // stride + 1
        y = rng.standard_normal((3, tp))
        lhs = np.sum(
            T.conv1d(t_(x), t_(w), t_(np.zeros(3)), stride).data * y
        )
        back = T.conv1d_transpose(t_(y), t_(w), stride).data
        rhs = np.sum(x[:, : back.shape[1]] * back)
        assert abs(lhs - rhs) < 1e-10


class TestLayerNorm:
    def test_constant_row_collapses_to_bias(self):
        out = T.layer_norm(t_([1.0, 1.0, 1.0]), t_(np.ones(3)), t_(np.zeros(3)))
        np.testing.assert_allclose(out.data, [0, 0, 0], atol=1e-6)

    def test_two_point_row(self):
        out = T.layer_norm(t_([0.0, 2.0]), t_(np.ones(2)), t_(np.zeros(2)), eps=1e-14)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-6)

    def test_singleton_normalizes_to_bias(self):
        out = T.layer_norm(t_([3.0]), t_(np.ones(1)), t_([5.0]))
        np.testing.assert_allclose(out.data, [5.0], atol=1e-3)

    def test_output_mean_near_zero(self):
        rng = np.random.default_rng(0)
        z = t_(rng.standard_normal((4, 6, 8)))
        out = T.layer_norm(z, t_(np.ones(8)), t_(np.zeros(8)))
        mu = out.data.mean(axis=-1)
        assert np.abs(mu).max() < 1e-10

    def test_affine_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            T.layer_norm(t_(np.zeros((2, 4))), t_(np.ones(3)), t_(np.zeros(3)))


class TestElementwise:
    def test_softmax_uniform_over_equal_logits(self):
        np.testing.assert_allclose(T.softmax(t_([0.0, 0.0])).data, [0.5, 0.5])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_softmax_rows_are_distributions(self, row):
        s = T.softmax(t_([row, row])).data
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    def test_prelu_definition(self):
        out = T.prelu(t_([-2.0]), t_([0.25]))
        np.testing.assert_allclose(out.data, [-0.5])
        out = T.prelu(t_([3.0]), t_([0.25]))
        np.testing.assert_allclose(out.data, [3.0])

    def test_permute_involution(self):
        rng = np.random.default_rng(1)
        x = t_(rng.standard_normal((3, 4, 5)))
        roundtrip = T.permute(T.permute(x, (0, 2, 1)), (0, 2, 1))
        np.testing.assert_array_equal(roundtrip.data, x.data)

    def test_broadcast_add_and_grad_reduction(self):
        x = t_(np.ones((2, 3)), rg=True)
        b = t_([1.0, 2.0, 3.0], rg=True)
        loss = (x + b).sum()
        T.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, [2, 2, 2])

    def test_clamp_max(self):
        out = T.clamp_max(t_([1.0, 40.0]), 30.0)
        np.testing.assert_array_equal(out.data, [1.0, 30.0])


class TestWindowing:
    def test_unfold_fold_adjoint(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((10, 3))
        y = rng.standard_normal((4, 4, 3))
        lhs = np.sum(T.unfold_rows(t_(x), 4, 2).data * y)
        rhs = np.sum(x * T.fold_rows(t_(y), 2, 10).data)
        assert abs(lhs - rhs) < 1e-10

    def test_unfold_window_content(self):
        x = t_(np.arange(12.0).reshape(6, 2))
        win = T.unfold_rows(x, 4, 2)
        assert win.shape == (2, 4, 2)
        np.testing.assert_array_equal(win.data[1], x.data[2:6])

    def test_fold_counts_coverage(self):
        ones = t_(np.ones((3, 4, 1)))
        out = T.fold_rows(ones, 2, 8)
        np.testing.assert_array_equal(out.data.ravel(), [1, 1, 2, 2, 2, 2, 1, 1])

    def test_bad_tiling_raises(self):
        with pytest.raises(ConfigurationError):
            T.unfold_rows(t_(np.zeros((7, 2))), 4, 2)


class TestBackward:
    def test_sum_gives_ones(self):
        x = t_(np.arange(6.0).reshape(2, 3), rg=True)
        T.backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_relu_subgradient(self):
        x = t_([-1.0, 2.0], rg=True)
        T.backward(T.relu(x).sum())
        np.testing.assert_array_equal(x.grad, [0, 1])

    def test_non_scalar_loss_rejected(self):
        x = t_([1.0, 2.0], rg=True)
        with pytest.raises(UsageError):
            T.backward(x + x)

    def test_unused_recorded_parameter_gets_zero_grad(self):
        x = t_([1.0, 2.0], rg=True)
        w = t_([3.0], rg=True)
        _dead_branch = w * 2.0
        T.backward(x.sum())
        np.testing.assert_array_equal(x.grad, [1, 1])
        np.testing.assert_array_equal(w.grad, [0.0])

    def test_tensor_reused_twice_accumulates(self):
        x = t_([2.0], rg=True)
        T.backward((x * x).sum())
        np.testing.assert_allclose(x.grad, [4.0])

    def test_tape_cleared_after_backward(self):
        x = t_([1.0], rg=True)
        T.backward((x * 3.0).sum())
        assert T.tape_size() == 0

    def test_no_grad_suppresses_recording(self):
        x = t_([1.0], rg=True)
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert T.tape_size() == 0


def _scalarize(out, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(out.shape)
    return (out * T.Tensor(w)).sum()


OP_CASES = [
    ("add", lambda a, b: a + b, [(2, 3), (2, 3)]),
    ("sub", lambda a, b: a - b, [(4,), (4,)]),
    ("mul", lambda a, b: a * b, [(2, 3), (2, 3)]),
    ("div", lambda a, b: a / (b * b + 1.0), [(3,), (3,)]),
    ("matmul", lambda a, b: a @ b, [(2, 3), (3, 2)]),
    ("batched_matmul", lambda a, b: a @ b, [(2, 2, 3), (2, 3, 2)]),
    ("relu", lambda a: T.relu(a + 0.05), [(7,)]),
    ("prelu", T.prelu, [(2, 3), (3,)]),
    ("softmax", T.softmax, [(2, 4)]),
    ("log", lambda a: T.log(a * a + 0.5), [(5,)]),
    ("sum_axis", lambda a: a.sum(axis=1), [(2, 3)]),
    ("mean", lambda a: a.mean(), [(6,)]),
    ("reshape", lambda a: a.reshape(3, 2), [(2, 3)]),
    ("permute", lambda a: a.permute(1, 0), [(2, 3)]),
    ("concat", lambda a, b: T.concat([a, b], axis=0), [(2, 2), (3, 2)]),
    ("take", lambda a: a[1:3], [(5,)]),
    ("clamp", lambda a: T.clamp_max(a, 0.4), [(6,)]),
    ("layer_norm", lambda a, g, b: T.layer_norm(a, g, b, 1e-6), [(3, 4), (4,), (4,)]),
    ("conv1d", lambda x, w, b: T.conv1d(x, w, b, 2), [(2, 9), (3, 2, 3), (3,)]),
    ("conv1d_transpose", lambda y, w: T.conv1d_transpose(y, w, 2), [(3, 4), (3, 2, 3)]),
    ("unfold", lambda x: T.unfold_rows(x, 4, 2), [(8, 2)]),
    ("fold", lambda y: T.fold_rows(y, 2, 8), [(3, 4, 2)]),
]


@pytest.mark.parametrize("name,op,shapes", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_gradients_match_finite_differences(name, op, shapes):
    rng = np.random.default_rng(hash(name) % 2**31)
    arrays = [rng.standard_normal(s) for s in shapes]
    for i in range(len(arrays)):

        def f(x, i=i):
            args = [t_(a) for a in arrays]
            args[i] = t_(x)
            return _scalarize(op(*args)).item()

        args = [t_(a, rg=(j == i)) for j, a in enumerate(arrays)]
        T.backward(_scalarize(op(*args)))
        fd = central_difference(f, arrays[i])
        err = relative_error(args[i].grad, fd)
        assert err < 1e-4, f"{name} input {i}: rel err {err}"


def test_memory_tracker_high_water():
    tracker = T.memory_tracker()
    tracker.reset_peak()
    base = tracker.current_bytes
    x = T.zeros((1000,))
    assert tracker.current_bytes == base + 8000
    assert tracker.peak_bytes >= base + 8000
    del x
    assert tracker.current_bytes == base


def test_float32_propagates_through_ops():
    x = T.Tensor(np.ones((2, 2), dtype=np.float32))
    y = ((x @ x) + 1.0) * 0.5
    assert y.dtype == np.float32
    assert T.softmax(y).dtype == np.float32
