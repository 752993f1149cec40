from __future__ import annotations

import numpy as np
import pytest

from swincd.autograd import ops
from swincd.autograd.gradcheck import grad_check, relative_error
from swincd.autograd.tensor import Tensor, default_dtype
from swincd.errors import NumericError, ShapeError


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_matching_gradient_passes(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    report = grad_check(lambda: ops.sum(ops.sigmoid(x) * w), {"x": x})
    assert report.passed
    assert report.parameters[0].checked == 12
    assert x.grad is None


def test_wrong_adjoint_is_detected(rng):
    x = Tensor(rng.uniform(1.0, 2.0, size=5), requires_grad=True)

    def broken() -> Tensor:
        # adjoint claims d(x^2)/dx = x instead of 2x
        return ops.sum(Tensor.from_op(x.data ** 2, "square", (x,), lambda g: (g * x.data,)))

    report = grad_check(broken, [x], tol=1e-4)
    assert not report.passed
    assert report.max_rel_error == pytest.approx(0.5, rel=1e-6)
    assert "FAIL" in report.summary()


def test_parameter_values_are_restored(rng):
    values = rng.normal(size=(2, 2))
    x = Tensor(values, requires_grad=True)
    grad_check(lambda: ops.sum(x * x), {"x": x})
    np.testing.assert_array_equal(x.data, values)


def test_excluded_entries_are_skipped(rng):
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    report = grad_check(lambda: ops.sum(ops.relu(x)), {"x": x}, exclude={"x": np.array([False, True, False])})
    assert report.passed
    assert report.parameters[0].checked == 2


def test_sampling_limits_entries(rng):
    x = Tensor(rng.normal(size=(10, 10)), requires_grad=True)
    report = grad_check(lambda: ops.sum(x * x), {"x": x}, max_entries=7, rng=rng)
    assert report.parameters[0].checked == 7


def test_needs_double_precision():
    with default_dtype(np.float32):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(ShapeError, match="64-bit"):
            grad_check(lambda: ops.sum(x), [x])


def test_parameters_are_restored_when_the_function_raises():
    values = np.array([5e-4, 1.0])
    x = Tensor(values, requires_grad=True)
    # the minus step crosses zero and log rejects it
    with pytest.raises(NumericError):
        grad_check(lambda: ops.sum(ops.log(x)), [x], h=1e-3)
    np.testing.assert_array_equal(x.data, values)
    assert x.grad is None
