import math

import numpy as np
import pytest

from pisr.core.errors import UsageError
from pisr.services.evaluate import Grid, eval_batch, eval_scalar, variance
from pisr.services.expr import PostfixExpr


def E(*items: str) -> PostfixExpr:
    return PostfixExpr.from_strings(items)


def test_scalar_examples():
    assert eval_scalar(E("x", "x", "mul"), 3.0) == 9.0
    assert not math.isfinite(eval_scalar(E("x", "sqrt"), -1.0))
    assert not math.isfinite(eval_scalar(E("x", "log"), 0.0))
    assert not math.isfinite(eval_scalar(E("x", "2.5", "pow"), -2.0))
    assert not math.isfinite(eval_scalar(E("1", "x", "div"), 0.0))


def test_golden_expressions_at_origin(golden):
    c = golden.constants
    assert eval_scalar(golden.u_expr, 0.0, c) == pytest.approx(-0.09979, abs=1e-4)
    assert eval_scalar(golden.n_expr, 0.0, c) == pytest.approx(0.07859, abs=1e-4)


def test_batch_matches_scalar_bitwise(grid, golden):
    for expr in (golden.u_expr, golden.n_expr, E("x", "sin", "x", "cos", "mul")):
        batch = eval_batch(expr, grid, golden.constants)
        single = np.array([eval_scalar(expr, x, golden.constants) for x in grid.points])
        np.testing.assert_array_equal(batch, single)


def test_literal_and_even_function_on_grid(grid):
    np.testing.assert_array_equal(eval_batch(E("1"), grid), np.ones(len(grid)))
    v = eval_batch(E("x", "sech"), grid)
    np.testing.assert_array_equal(v, v[::-1])


def test_batch_does_not_alias_grid(grid):
    out = eval_batch(E("x"), grid)
    assert out is not grid.points
    out[0] = 123.0
    assert grid.points[0] == -10.0


def test_multi_variable_points():
    pts = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(eval_batch(E("x", "x1", "mul"), pts), [2.0, 12.0])


def test_uniform_grid_is_exactly_mirrored(grid):
    assert len(grid) == 127
    assert grid.symmetric
    assert grid.x_min == -10.0 and grid.x_max == 10.0
    np.testing.assert_array_equal(grid.points, -grid.points[::-1])
    assert grid.points[63] == 0.0
    assert not Grid.uniform(0.0, 1.0, 5).symmetric


def test_grid_validation():
    with pytest.raises(UsageError):
        Grid(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(UsageError):
        Grid(np.array([]))
    with pytest.raises(UsageError):
        Grid(np.array([-1.0, 0.5]), symmetric=True)


def test_variance_examples():
    assert variance([1.0, 1.0, 1.0]) == 0.0
    assert variance([0.0, 2.0]) == 1.0
    assert math.isnan(variance([1.0, math.nan]))
    with pytest.raises(UsageError):
        variance([])


def test_variance_of_grid_variable(grid):
    assert variance(eval_batch(E("x"), grid)) == pytest.approx(33.86, abs=0.1)
