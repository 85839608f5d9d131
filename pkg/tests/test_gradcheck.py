"""Finite-difference checker."""

import numpy as np
import pytest

from src.core.errors import InputError
from src.core.gradcheck import check_parameters, finite_diff_check, relative_error
from src.core.tensor import Tensor, apply_op, reduce_sum, sigmoid


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-10, 0.0) == pytest.approx(1e-2)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


@pytest.mark.parametrize("step", [1e-6, 0.1])
def test_step_out_of_range(step):
    with pytest.raises(InputError):
        finite_diff_check(lambda t: reduce_sum(t), Tensor(np.ones(2)), step=step)


def test_data_is_restored(rng):
    values = rng.normal(size=6)
    x = Tensor(values.copy())
    finite_diff_check(lambda t: reduce_sum(sigmoid(t)), x, step=1e-3)
    assert np.array_equal(x.data, values)


def test_wrong_gradient_is_detected():
    """A deliberately broken backward rule must show up as a large error."""
    def broken_square(t):
        return apply_op("broken", t.data * t.data, (t,), lambda g: (g * t.data,))

    x = Tensor(np.array([1.0, 2.0, 3.0]))
    assert finite_diff_check(lambda t: reduce_sum(broken_square(t)), x) > 0.4


def test_errors_from_f_propagate():
    def f(t):
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        finite_diff_check(f, Tensor(np.ones(2)))


def test_check_parameters_groups_by_name(rng):
    params = {
        "a.0.weight": Tensor(rng.normal(size=(3,))),
        "a.0.bias": Tensor(rng.normal(size=(2,))),
        "b.weight": Tensor(rng.normal(size=(4,))),
    }
    probe = Tensor(rng.normal(size=(4,)))

    def loss():
        return (reduce_sum(params["a.0.weight"] * params["a.0.weight"])
                + reduce_sum(sigmoid(params["a.0.bias"]))
                + reduce_sum(params["b.weight"] * probe))

    errors = check_parameters(loss, params, coords_per_tensor=2, group_of=lambda name: name.split(".")[0])
    assert set(errors) == {"a", "b"}
    assert max(errors.values()) < 1e-6


def test_unused_parameter_reports_zero(rng):
    params = {"used": Tensor(rng.normal(size=3)), "unused": Tensor(rng.normal(size=3))}
    errors = check_parameters(lambda: reduce_sum(params["used"] * params["used"]), params)
    assert errors["unused"] == 0.0
