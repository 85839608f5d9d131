"""Tensor values, the tape and reverse-mode differentiation."""

import numpy as np
import pytest

from src.core.errors import InputError, NumericError, ShapeError, TapeError
from src.core.gradcheck import finite_diff_check
from src.core.tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    backward,
    concat,
    create,
    elementwise,
    matmul,
    narrow,
    reduce,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    sigmoid,
    softmax,
    transpose,
)


def f64(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64))


class TestCreate:
    def test_zeros(self):
        t = create([2, 2], "zeros")
        assert t.data.reshape(-1).tolist() == [0, 0, 0, 0]
        assert t.requires_grad is False

    def test_literal(self):
        t = create([3], "literal", values=[1, 2, 3])
        assert t.shape == (3,)
        assert t.data.tolist() == [1, 2, 3]

    def test_uniform_is_reproducible(self):
        a = create([4], "uniform", seed=7, lo=-1, hi=1)
        b = create([4], "uniform", seed=7, lo=-1, hi=1)
        assert a.data.tobytes() == b.data.tobytes()
        assert np.all((a.data >= -1) & (a.data <= 1))

    def test_normal_is_reproducible(self):
        a = create([3, 3], "normal", seed=3, mean=2.0, std=0.5)
        b = create([3, 3], "normal", seed=3, mean=2.0, std=0.5)
        assert np.array_equal(a.data, b.data)

    def test_literal_length_mismatch(self):
        with pytest.raises(ShapeError):
            create([2, 2], "literal", values=[1, 2, 3])

    def test_nonpositive_extent(self):
        with pytest.raises(ShapeError):
            create([0, 3])

    def test_random_needs_seed(self):
        with pytest.raises(InputError):
            create([2], "uniform")

    def test_default_dtype_is_float32(self):
        assert create([2]).dtype == np.float32


class TestElementwise:
    def test_sigmoid_midpoint(self):
        assert sigmoid(Tensor([0.0])).item() == pytest.approx(0.5)

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = sigmoid(Tensor([-1000.0, 1000.0])).data
        assert out.tolist() == pytest.approx([0.0, 1.0])

    def test_relu(self):
        assert elementwise("relu", Tensor([-1.0, 2.0])).data.tolist() == [0, 2]

    def test_broadcast_add(self):
        a, b = Tensor([1.0, 2.0]), Tensor([10.0])
        out = add(a, b)
        expected = [a.data[i] + b.data[0] for i in range(2)]
        assert out.data.tolist() == expected == [11, 12]

    def test_operators(self):
        a = f64([2.0, 4.0])
        assert (a + 1).data.tolist() == [3, 5]
        assert (1 - a).data.tolist() == [-1, -3]
        assert (a * a).data.tolist() == [4, 16]
        assert (a / 2).data.tolist() == [1, 2]
        assert (-a).data.tolist() == [-2, -4]

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            elementwise("add", Tensor(np.ones(3)), Tensor(np.ones(2)))

    def test_div_by_exact_zero(self):
        with pytest.raises(NumericError):
            elementwise("div", Tensor([1.0]), Tensor([0.0]))

    def test_sqrt_of_negative(self):
        with pytest.raises(NumericError):
            elementwise("sqrt", Tensor([-1.0]))

    def test_exp_overflow_is_a_numeric_error(self):
        with pytest.raises(NumericError):
            elementwise("exp", Tensor([1000.0]))

    def test_binary_needs_two_operands(self):
        with pytest.raises(InputError):
            elementwise("mul", Tensor([1.0]))

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            elementwise("tanh", Tensor([1.0]))


class TestMatmul:
    def test_identity(self, rng):
        m = Tensor(rng.normal(size=(2, 2)))
        assert np.allclose(matmul(Tensor(np.eye(2)), m).data, m.data)

    def test_hand_contraction(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert out.data.tolist() == [[3], [7]]

    def test_batch_matches_rank2(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        single = matmul(f64(a), f64(b)).data
        batched = matmul(f64(np.stack([a, a])), f64(np.stack([b, b]))).data
        assert np.allclose(batched[0], single)
        assert np.allclose(batched[1], single)

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestReduce:
    def test_sum(self):
        assert reduce("sum", Tensor([1.0, 2.0, 3.0])).item() == 6

    def test_mean_of_constant(self):
        assert reduce("mean", Tensor(np.full((3, 4), 2.5))).item() == pytest.approx(2.5)

    def test_max_along_axis(self):
        out = reduce("max", Tensor([[1.0, 5.0], [7.0, 2.0]]), axis=1)
        data = [[1, 5], [7, 2]]
        assert out.data.tolist() == [max(row) for row in data] == [5, 7]

    def test_keep_dims(self):
        out = reduce_sum(Tensor(np.ones((2, 3))), axis=1, keep=True)
        assert out.shape == (2, 1)

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            reduce_sum(Tensor(np.ones((2, 3))), axis=2)

    def test_max_gradient_goes_to_first_tie(self):
        x = Tensor([3.0, 1.0, 3.0], requires_grad=True)
        with Tape() as tape:
            root = reduce_max(x)
        tape.backward(root)
        assert x.grad.tolist() == [1, 0, 0]

    def test_axis_max_gradient_goes_to_first_tie(self):
        x = Tensor([[2.0, 2.0], [1.0, 4.0]], requires_grad=True)
        with Tape() as tape:
            root = reduce_sum(reduce_max(x, axis=1))
        tape.backward(root)
        assert x.grad.tolist() == [[1, 0], [0, 1]]


class TestSoftmax:
    def test_symmetric(self):
        assert softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]

    def test_large_shift_does_not_overflow(self):
        out = softmax(Tensor([5.0, 1005.0])).data
        assert out[0] == pytest.approx(0.0, abs=1e-12)
        assert out[1] == pytest.approx(1.0)

    def test_matches_direct_formula(self):
        values = np.array([1.0, 2.0, 3.0])
        expected = np.exp(values) / np.exp(values).sum()
        assert np.allclose(softmax(f64(values)).data, expected, rtol=1e-12)

    def test_rows_are_probability_vectors(self, rng):
        out = softmax(Tensor(rng.normal(size=(5, 7)) * 10), axis=-1).data
        assert np.all(out >= 0)
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    def test_nan_input(self):
        with pytest.raises(NumericError):
            softmax(Tensor([0.0, np.nan]))


class TestBackward:
    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            root = reduce_sum(x * x)
        tape.backward(root)
        assert x.grad.tolist() == [6]

    def test_fan_out_accumulates(self):
        x = Tensor([1.5], requires_grad=True)
        with Tape():
            root = reduce_sum(x + x)
        backward(root)
        assert x.grad.tolist() == [2]

    def test_k_consumers_sum_their_paths(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape():
            root = reduce_sum(x * 3 + x * x + sigmoid(x))
        root.backward()
        s = 1 / (1 + np.exp(-2.0))
        assert x.grad[0] == pytest.approx(3 + 4 + s * (1 - s), rel=1e-5)

    def test_broadcast_gradient_is_summed(self):
        bias = Tensor([0.0], requires_grad=True)
        with Tape() as tape:
            root = reduce_sum(Tensor(np.ones((2, 3))) + bias)
        tape.backward(root)
        assert bias.grad.tolist() == [6]

    def test_non_scalar_root(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * x
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_root_not_on_tape(self):
        x = Tensor([1.0], requires_grad=True)
        y = reduce_sum(x * x)
        with pytest.raises(TapeError):
            backward(y)

    def test_root_from_another_tape(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape():
            y = reduce_sum(x)
        with Tape() as other:
            pass
        with pytest.raises(TapeError):
            other.backward(y)

    def test_nothing_recorded_without_requires_grad(self):
        with Tape() as tape:
            reduce_sum(Tensor([1.0, 2.0]) * 2)
        assert len(tape) == 0

    def test_tape_is_scoped(self):
        assert active_tape() is None
        with Tape() as tape:
            assert active_tape() is tape
        assert active_tape() is None

    def test_tape_cannot_be_entered_twice(self):
        tape = Tape()
        with tape:
            with pytest.raises(TapeError):
                tape.__enter__()

    def test_chain_matches_finite_differences(self, rng):
        w = f64(rng.normal(size=(3, 2)))

        def f(x):
            return reduce_sum(sigmoid(matmul(x, w)))

        assert finite_diff_check(f, f64(rng.normal(size=(4, 3)))) < 1e-6


class TestShapeOps:
    def test_reshape_and_transpose(self):
        t = Tensor(np.arange(6.0))
        assert reshape(t, (2, 3)).shape == (2, 3)
        assert transpose(reshape(t, (2, 3)), (1, 0)).data.tolist() == [[0, 3], [1, 4], [2, 5]]

    def test_bad_reshape(self):
        with pytest.raises(ShapeError):
            reshape(Tensor(np.arange(6.0)), (4, 2))

    def test_bad_permutation(self):
        with pytest.raises(ShapeError):
            transpose(Tensor(np.ones((2, 3))), (0, 0))

    def test_narrow(self):
        t = Tensor(np.arange(10.0))
        assert narrow(t, 0, 2, 3).data.tolist() == [2, 3, 4]
        with pytest.raises(ShapeError):
            narrow(t, 0, 8, 3)

    def test_concat_splits_gradient(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        weights = Tensor(np.arange(10.0).reshape(2, 5))
        with Tape() as tape:
            root = reduce_sum(concat([a, b], axis=1) * weights)
        tape.backward(root)
        assert np.array_equal(a.grad, weights.data[:, :2])
        assert np.array_equal(b.grad, weights.data[:, 2:])


@pytest.mark.parametrize(
    "f",
    [
        lambda x: reduce_sum(x * x),
        lambda x: reduce_sum(sigmoid(x) * x),
        lambda x: reduce_mean(elementwise("exp", x * 0.5)),
        lambda x: reduce_sum(elementwise("sqrt", x * x + 1.0)),
        lambda x: reduce_sum(softmax(x, axis=-1) * Tensor(np.arange(12.0).reshape(3, 4))),
        lambda x: reduce_sum(reduce_max(x, axis=0)),
        lambda x: reduce_sum(elementwise("div", x, x * x + 2.0)),
        lambda x: reduce_sum(transpose(reshape(x, (4, 3)), (1, 0)) * Tensor(np.arange(12.0).reshape(3, 4))),
    ],
    ids=["square", "sigmoid", "exp", "sqrt", "softmax", "max", "div", "reshape-transpose"],
)
def test_operations_match_finite_differences(f, rng):
    x = f64(rng.normal(size=(3, 4)))
    assert finite_diff_check(f, x) < 1e-6


def test_finite_differences_of_sum():
    x = f64(np.arange(5.0))
    assert finite_diff_check(lambda t: reduce_sum(t), x) < 1e-6
    assert np.array_equal(x.grad, np.ones(5))


def test_finite_differences_of_square():
    x = f64([1.0, -2.0, 0.5])
    finite_diff_check(lambda t: reduce_sum(t * t), x)
    assert np.allclose(x.grad, 2 * x.data)
