"""Stack-machine evaluation of postfix expressions.

Evaluation is vectorised with numpy: every stack entry is a whole array of
values over the grid, so one pass over the tokens evaluates all points.
`eval_scalar` goes through the same code path on a one-element array, which
keeps scalar and batch results bitwise identical.

Non-finite policy
-----------------
Domain violations (log of a non-positive value, sqrt of a negative value,
asin/acos outside [-1, 1], division by zero, negative base with a
non-integer exponent) produce inf/nan which propagate. Nothing is clamped and
nothing raises; the loss layer decides what a non-finite value means.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pisr.core.errors import UsageError
from pisr.services.expr import BINARY_OPS, UNARY_OPS, Kind, PostfixExpr


@dataclass(frozen=True)
class Grid:
    """Ordered sample points of the independent variable.

    Attributes
    ----------
    points : numpy.ndarray
        Strictly increasing 1-D array.
    symmetric : bool
        When set, ``points[i] == -points[N-1-i]`` holds exactly.
    """

    points: np.ndarray
    symmetric: bool = False

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 1:
            raise UsageError("grid points must be a non-empty 1-D array")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise UsageError("grid points must be strictly increasing")
        if self.symmetric and not np.array_equal(pts, -pts[::-1]):
            raise UsageError("grid flagged symmetric but points are not mirrored")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, x_min: float, x_max: float, n_points: int) -> "Grid":
        """Uniform grid; exactly mirrored when ``x_min == -x_max``."""
        pts = np.linspace(x_min, x_max, n_points)
        symmetric = x_min == -x_max
        if symmetric:
            # (p - p[::-1]) / 2 is exactly antisymmetric in IEEE arithmetic.
            pts = (pts - pts[::-1]) / 2.0
        return cls(pts, symmetric=symmetric)

    def __len__(self) -> int:
        return int(self.points.size)

    @property
    def x_min(self) -> float:
        return float(self.points[0])

    @property
    def x_max(self) -> float:
        return float(self.points[-1])


def _columns(points: np.ndarray) -> list[np.ndarray]:
    if points.ndim == 1:
        return [points]
    return [points[:, j] for j in range(points.shape[1])]


def eval_batch(
    expr: PostfixExpr, grid: Grid | np.ndarray | Sequence[float], constants: Sequence[float] = ()
) -> np.ndarray:
    """Evaluate `expr` at every point of `grid`.

    `grid` may be a Grid, a 1-D array (single variable) or an (N, k) array
    whose columns are the k variables.
    """
    points = grid.points if isinstance(grid, Grid) else np.asarray(grid, dtype=float)
    cols = _columns(points)
    n = points.shape[0]
    consts = np.asarray(constants, dtype=float)

    # Postfix evaluation never holds more than (len + 1) / 2 operands.
    stack: list[np.ndarray] = []
    with np.errstate(all="ignore"):
        for tok in expr.tokens:
            kind = tok.kind
            if kind is Kind.VARIABLE:
                stack.append(cols[tok.value])
            elif kind is Kind.LITERAL:
                stack.append(np.full(n, tok.value))
            elif kind is Kind.CONST:
                stack.append(np.full(n, consts[tok.value]))
            elif kind is Kind.UNARY:
                stack.append(UNARY_OPS[tok.value](stack.pop()))
            else:
                b = stack.pop()
                a = stack.pop()
                stack.append(BINARY_OPS[tok.value](a, b))
    out = stack[0]
    if out is points or any(out is c for c in cols):
        out = out.copy()
    return out


def eval_scalar(expr: PostfixExpr, x: float | Sequence[float], constants: Sequence[float] = ()) -> float:
    """Evaluate `expr` at a single point."""
    point = np.atleast_1d(np.asarray(x, dtype=float))
    arr = point.reshape(1, -1) if point.size > 1 else point
    return float(eval_batch(expr, arr, constants)[0])


def variance(values: Sequence[float] | np.ndarray) -> float:
    """Population variance; non-finite if any value is non-finite."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise UsageError("variance of an empty vector")
    if not np.all(np.isfinite(arr)):
        return float("nan")
    return float(np.var(arr))
