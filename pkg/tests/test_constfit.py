import time

import numpy as np
import pytest

from pisr.core.errors import FitRejected
from pisr.services.constfit import FitConfig, fit_constants, jacobian
from pisr.services.evaluate import eval_batch
from pisr.services.expr import PostfixExpr


def E(*items: str) -> PostfixExpr:
    return PostfixExpr.from_strings(items)


def _residual(expr: PostfixExpr, grid, target: np.ndarray):
    return lambda c: eval_batch(expr, grid, c) - target


def test_linear_scale_recovery(grid):
    target = 2.0 * eval_batch(E("x", "sech"), grid)
    start = time.perf_counter()
    result = fit_constants([1.0], _residual(E("c0", "x", "sech", "mul"), grid, target))
    assert time.perf_counter() - start < 1.0
    assert result.constants[0] == pytest.approx(2.0, abs=1e-6)
    assert result.converged
    assert result.method == "lm"


def test_two_constant_recovery(grid):
    target = 3.0 * eval_batch(E("0.5", "x", "mul", "sech"), grid)
    result = fit_constants([1.0, 1.0], _residual(E("c0", "c1", "x", "mul", "sech", "mul"), grid, target))
    np.testing.assert_allclose(result.constants, [3.0, 0.5], atol=1e-4)
    assert result.sse < 1e-10


def test_zero_residual_returns_start(grid):
    target = eval_batch(E("x", "sech"), grid)
    result = fit_constants([1.0], _residual(E("c0", "x", "sech", "mul"), grid, target))
    assert result.constants.tolist() == [1.0]
    assert result.sse == 0.0
    assert result.converged
    assert result.iterations == 0


def test_sse_never_increases(grid, rng):
    target = eval_batch(E("x", "tanh", "x", "sech", "add"), grid)
    expr = E("c0", "x", "mul", "tanh", "c1", "x", "sin", "mul", "add")
    fn = _residual(expr, grid, target)
    for method in ("lm", "quasi_newton"):
        for _ in range(5):
            c0 = rng.uniform(-2.0, 2.0, size=2)
            initial = float(np.sum(fn(c0) ** 2))
            result = fit_constants(c0, fn, FitConfig(method=method))
            assert result.sse <= initial


@pytest.mark.parametrize("method", ["lm", "quasi_newton"])
def test_bounds_are_respected(grid, method):
    target = 5.0 * eval_batch(E("x", "sech"), grid)
    config = FitConfig(method=method, constant_bounds=((1.0, 3.0),))
    result = fit_constants([2.0], _residual(E("c0", "x", "sech", "mul"), grid, target), config)
    assert 1.0 <= result.constants[0] <= 3.0
    assert result.constants[0] == pytest.approx(3.0, abs=1e-6)


def test_quasi_newton_recovers_scale(grid):
    target = 2.0 * eval_batch(E("x", "sech"), grid)
    result = fit_constants([1.0], _residual(E("c0", "x", "sech", "mul"), grid, target),
                           FitConfig(method="quasi_newton"))
    assert result.constants[0] == pytest.approx(2.0, abs=1e-5)
    assert result.method == "quasi_newton"


def test_fitting_is_deterministic(grid):
    target = 3.0 * eval_batch(E("0.5", "x", "mul", "sech"), grid)
    fn = _residual(E("c0", "c1", "x", "mul", "sech", "mul"), grid, target)
    a = fit_constants([1.0, 1.0], fn)
    b = fit_constants([1.0, 1.0], fn)
    np.testing.assert_array_equal(a.constants, b.constants)
    assert a.sse == b.sse


def test_non_finite_start_is_rejected():
    with pytest.raises(FitRejected) as info:
        fit_constants([-1.0], lambda c: np.sqrt(c))
    assert info.value.reason == "non_finite_start"


def test_non_finite_jacobian_falls_back():
    def fn(c):
        return np.array([np.sqrt(1.0 - c[0]) - 0.5, c[1] - 2.0])

    result = fit_constants([1.0, 0.0], fn)
    assert result.fell_back
    assert result.method == "quasi_newton"
    assert result.sse <= 4.25


def test_jacobian_examples():
    np.testing.assert_allclose(jacobian(lambda c: c - 5.0, np.array([0.0])), [[1.0]], atol=1e-6)
    np.testing.assert_allclose(jacobian(lambda c: c ** 2, np.array([3.0])), [[6.0]], atol=1e-4)
    jac = jacobian(lambda c: np.array([c[0] * 2.0, c[0] + 1.0]), np.array([1.0, 7.0]))
    assert jac.shape == (2, 2)
    assert np.all(jac[:, 1] == 0.0)


def test_jacobian_all_non_finite_is_rejected():
    with pytest.raises(FitRejected):
        jacobian(lambda c: np.sqrt(-c), np.array([0.0]))


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(max_iterations=0)
    with pytest.raises(ValueError):
        FitConfig(gradient_tolerance=0.0)
