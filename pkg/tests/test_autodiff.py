"""Tensor engine tests: frozen examples, contracts, and the
finite-difference oracle."""

import numpy as np
import pytest

from ioh_forecast import autodiff as ad
from ioh_forecast.autodiff import (
    GradTape,
    ShapeMismatchError,
    Tensor,
    backward,
    finite_diff_grad,
)
from ioh_forecast.gradcheck import OP_CHECKS, run_end_to_end_check, run_op_checks


class TestTensor:
    def test_shape_data_invariant(self):
        t = Tensor(np.zeros((3, 4)))
        assert t.shape == (3, 4)
        assert t.size == 12

    def test_production_dtype_is_float32(self):
        t = Tensor(np.zeros((3, 4), dtype=np.float32))
        assert t.dtype == np.float32

    def test_preserves_float64(self):
        t = Tensor(np.zeros(3, dtype=np.float64))
        assert t.dtype == np.float64

    def test_casts_ints_to_default(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]),
                        Tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_allclose(out.data, [[3, 4], [5, 6]])

    def test_hand_expanded_2x2(self):
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]),
                        Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_allclose(out.data, [[19, 22], [43, 50]])

    def test_inner_dim_mismatch_names_shapes(self):
        with pytest.raises(ShapeMismatchError) as err:
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


class TestConv1d:
    def test_identity_kernel(self):
        x = Tensor(np.array([[1.0], [2.0], [3.0]]))
        out = ad.conv1d(x, Tensor([[[1.0]]]), Tensor([0.0]))
        np.testing.assert_allclose(out.data.ravel(), [1, 2, 3])

    def test_sliding_window_sums(self):
        x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
        out = ad.conv1d(x, Tensor([[[1.0, 1.0]]]), Tensor([0.0]), stride=2)
        np.testing.assert_allclose(out.data.ravel(), [3, 7])

    def test_kernel_wider_than_input(self):
        x = Tensor(np.zeros((3, 1)))
        with pytest.raises(ShapeMismatchError):
            ad.conv1d(x, Tensor(np.zeros((1, 1, 5))), Tensor([0.0]))

    @pytest.mark.parametrize("L", range(1, 9))
    @pytest.mark.parametrize("k", range(1, 5))
    @pytest.mark.parametrize("stride", [1, 2, 3])
    @pytest.mark.parametrize("padding", [0, 1, 2])
    def test_output_length_formula(self, L, k, stride, padding):
        if L + 2 * padding < k:
            return
        x = Tensor(np.zeros((L, 1)))
        out = ad.conv1d(x, Tensor(np.zeros((1, 1, k))), Tensor([0.0]),
                        stride=stride, padding=padding)
        assert out.shape[-2] == (L + 2 * padding - k) // stride + 1


class TestAvgpool:
    def test_constant_series(self):
        x = Tensor(np.full((4, 1), 5.0))
        out = ad.avgpool1d_replicate(x, 3)
        np.testing.assert_array_equal(out.data, np.full((4, 1), 5.0))

    def test_replicate_padded_average(self):
        x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]), dtype=np.float64)
        out = ad.avgpool1d_replicate(x, 3)
        np.testing.assert_allclose(out.data.ravel(), [4 / 3, 2, 3, 11 / 3])

    def test_window_one_is_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(5, 2)))
        out = ad.avgpool1d_replicate(x, 1)
        np.testing.assert_array_equal(out.data, x.data)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            ad.avgpool1d_replicate(Tensor(np.zeros((4, 1))), 2)

    def test_window_too_wide_rejected(self):
        with pytest.raises(ValueError):
            ad.avgpool1d_replicate(Tensor(np.zeros((3, 1))), 7)


class TestSoftmax:
    def test_uniform_on_equal_inputs(self):
        out = ad.softmax_lastdim(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_no_overflow_on_large_inputs(self):
        out = ad.softmax_lastdim(Tensor([1000.0, 1000.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_closed_form_ratio(self):
        out = ad.softmax_lastdim(Tensor([0.0, np.log(3.0)], dtype=np.float64))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one_and_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            x = Tensor(rng.normal(0, 10, (4, 7)))
            y = ad.softmax_lastdim(x).data
            assert (y >= 0).all()
            np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)


class TestLayerNorm:
    def test_constant_row_maps_to_beta(self):
        out = ad.layer_norm(Tensor([[1.0, 1.0]]), Tensor([1.0, 1.0]),
                            Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [[0.0, 0.0]], atol=1e-6)

    def test_standardizes_row(self):
        out = ad.layer_norm(Tensor([[0.0, 2.0]], dtype=np.float64),
                            Tensor([1.0, 1.0], dtype=np.float64),
                            Tensor([0.0, 0.0], dtype=np.float64), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-5)

    def test_beta_shift(self):
        out = ad.layer_norm(Tensor([[1.0, 1.0]]), Tensor([1.0, 1.0]),
                            Tensor([7.0, 7.0]))
        np.testing.assert_allclose(out.data, [[7.0, 7.0]], atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ad.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)),
                          Tensor(np.zeros(4)))


class TestRelu:
    def test_definition(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_positive_passthrough(self):
        x = np.array([1.0, 2.5, 0.1])
        np.testing.assert_array_equal(ad.relu(Tensor(x)).data, x)

    def test_piecewise_gradient(self):
        x = Tensor([-1.0, 2.0], requires_grad=True, dtype=np.float64)
        with GradTape() as tape:
            loss = ad.tsum(ad.relu(x))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True, dtype=np.float64)
        with GradTape() as tape:
            loss = ad.tsum(x)
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_mean_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
        with GradTape() as tape:
            loss = ad.tmean(ad.mul(x, x))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [1.0, 2.0])

    def test_leaf_off_tape_keeps_zero_gradient(self):
        x = Tensor([1.0], requires_grad=True)
        unused = Tensor([1.0], requires_grad=True)
        with GradTape() as tape:
            loss = ad.tsum(x)
        backward(loss, tape)
        assert unused.grad is None  # read as zero downstream

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradTape() as tape:
            y = ad.mul(x, 2.0)
        with pytest.raises(ValueError):
            backward(y, tape)

    def test_double_use_accumulates_both_paths(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True,
                   dtype=np.float64)
        a = Tensor(rng.normal(size=(3, 3)), dtype=np.float64)
        b = Tensor(rng.normal(size=(3, 3)), dtype=np.float64)

        def f(t):
            return ad.tsum(ad.add(ad.matmul(t, a), ad.matmul(t, b)))

        with GradTape() as tape:
            loss = f(x)
        backward(loss, tape)
        numeric = finite_diff_grad(f, x)
        np.testing.assert_allclose(x.grad, numeric, rtol=1e-6, atol=1e-8)


class TestFiniteDiff:
    def test_linear_function(self):
        x = Tensor(np.random.default_rng(0).normal(size=4), dtype=np.float64)
        grad = finite_diff_grad(ad.tsum, x)
        np.testing.assert_allclose(grad, np.ones(4), atol=1e-8)

    def test_mean_of_squares_single_element(self):
        x = Tensor([3.0], dtype=np.float64)
        grad = finite_diff_grad(lambda t: ad.tmean(ad.mul(t, t)), x)
        np.testing.assert_allclose(grad, [6.0], atol=1e-6)


class TestGradcheckSuite:
    """The oracle cross-check: backward vs central differences, 20 random
    shapes/seeds per op, 64-bit."""

    @pytest.mark.parametrize("op_name", sorted(OP_CHECKS))
    def test_op_matches_oracle(self, op_name):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng([seed, 100])
            worst = max(worst, OP_CHECKS[op_name](rng))
        assert worst < 1e-4, f"{op_name}: worst rel err {worst:.3e}"

    def test_end_to_end_model(self):
        result = run_end_to_end_check()
        assert result.passed, f"end-to-end rel err {result.max_rel_err:.3e}"

    def test_suite_runner_reports_all_ops(self):
        results = run_op_checks(n_seeds=3)
        assert {r.name for r in results} == set(OP_CHECKS)
        assert all(r.passed for r in results)
