"""Bright-soliton benchmark: plasma parameters, dataset and the nine loss terms.

Unknowns are u(x), from which the vector-potential profile follows, and the
density n(x). With g(u) = sinh u - alpha tanh u and
a(u) = sinh u - alpha gamma0 tanh u, the loss terms are

    eq7   g'' + w2 g - n (tanh u + rho sinh u) / (1 + rho alpha),  w2 = k n
    eq8   (rho vte^2 + vti^2) ln n - rho (1 - cosh u)
          + rho alpha tanh^2 u / 2 - rho^2 g^2 / (2 (1 + rho alpha))
    eq9   a(x_min)                eq10  a(x_max)
    eq11  a'(x_min)               eq12  a'(x_max)
          with a' = (cosh u - alpha gamma0 sech^2 u) u'
    eq13  n(x) - n(-x)            (mirrored grid indices)
    eq14  (n / n0 - 1) - density data
    eq15  w (a - a data)          (w = 10; or sqrt(w) when the weight sits
                                   outside the square)

Each term's SNE is the sum of squares of its residual array. g'' is the
symbolic second derivative of the composed g expression. gamma0 is a fitted
constant held in a reserved slot (slot 0) of every candidate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from pisr.core.errors import DataError, UsageError
from pisr.services.evaluate import Grid, eval_batch
from pisr.services.expr import PostfixExpr, Token, binary, fit_const, literal, unary
from pisr.services.problem import (
    CandidateSolution,
    LossReport,
    PreparedCandidate,
    Problem,
    ReservedConstant,
)
from pisr.services.symdiff import second_derivative, simplify
from pisr.utils.tables import read_csv_columns

TERM_NAMES = ("eq7", "eq8", "eq9", "eq10", "eq11", "eq12", "eq13", "eq14", "eq15")

TERM_DESCRIPTIONS = {
    "eq7": "ROM equation 1",
    "eq8": "ROM equation 2",
    "eq9": "Boundary condition 1 for a(x)",
    "eq10": "Boundary condition 2 for a(x)",
    "eq11": "Boundary condition 3 for a(x)",
    "eq12": "Boundary condition 4 for a(x)",
    "eq13": "Symmetry condition for n(x)",
    "eq14": "Data for density",
    "eq15": "Data for a(x)",
}

DATASET_HEADER = ("x", "density", "a")


@dataclass(frozen=True)
class PlasmaParams:
    """Physical constants of the reduced-order model (benchmark defaults)."""

    rho_i: float = 1.0 / 1836.0
    alpha: float = 0.4
    v_te: float = 0.05
    v_ti: float = 0.001
    n0: float = 1.0
    omega_sq_coeff: float = 0.64
    gamma0_slot: int = 0

    def __post_init__(self) -> None:
        if self.rho_i <= 0:
            raise UsageError("rho_i must be positive")
        if self.n0 <= 0:
            raise UsageError("n0 must be positive")
        if self.omega_sq_coeff < 0:
            raise UsageError("omega_sq_coeff must be non-negative")

    @classmethod
    def from_section(cls, section) -> "PlasmaParams":
        return cls(
            rho_i=section.rho_i,
            alpha=section.alpha,
            v_te=section.v_te,
            v_ti=section.v_ti,
            n0=section.n0,
            omega_sq_coeff=section.omega_sq_coeff,
        )


@dataclass(frozen=True)
class Dataset:
    """Sampled density (n/n0 - 1) and a(x) profiles."""

    grid: Grid
    density: np.ndarray
    a_profile: np.ndarray

    def __post_init__(self) -> None:
        density = np.asarray(self.density, dtype=float)
        a_profile = np.asarray(self.a_profile, dtype=float)
        if not (density.size == a_profile.size == len(self.grid)):
            raise DataError("dataset columns differ in length")
        if not (np.all(np.isfinite(density)) and np.all(np.isfinite(a_profile))):
            raise DataError("dataset contains non-finite values")
        object.__setattr__(self, "density", density)
        object.__setattr__(self, "a_profile", a_profile)

    @property
    def count(self) -> int:
        return len(self.grid)


def read_dataset(path: Path | str) -> Dataset:
    """Load a ``x,density,a`` CSV; x must be strictly increasing."""
    columns = read_csv_columns(path, DATASET_HEADER)
    x = columns["x"]
    try:
        grid = Grid(x, symmetric=bool(x.size > 1 and np.array_equal(x, -x[::-1])))
    except UsageError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return Dataset(grid, columns["density"], columns["a"])


# -- expression composition ----------------------------------------------------------

_SINH = unary("sinh")
_TANH = unary("tanh")
_MUL = binary("mul")
_SUB = binary("sub")
_ADD = binary("add")


def compose_g(u_expr: PostfixExpr, params: PlasmaParams = PlasmaParams()) -> PostfixExpr:
    """sinh(u) - alpha * tanh(u), built by token concatenation then simplified."""
    u = u_expr.tokens
    tokens: tuple[Token, ...] = u + (_SINH,) + u + (_TANH, literal(params.alpha), _MUL, _SUB)
    return simplify(PostfixExpr(tokens))


def compose_a(u_expr: PostfixExpr, params: PlasmaParams = PlasmaParams(), gamma0_slot: Optional[int] = None) -> PostfixExpr:
    """sinh(u) - alpha * gamma0 * tanh(u) with gamma0 read from a FitConst slot."""
    slot = params.gamma0_slot if gamma0_slot is None else gamma0_slot
    u = u_expr.tokens
    tokens = u + (_SINH,) + u + (_TANH, literal(params.alpha), _MUL, fit_const(slot), _MUL, _SUB)
    return simplify(PostfixExpr(tokens))


def _compose_eq7_literal(g: PostfixExpr, n_expr: PostfixExpr, params: PlasmaParams) -> PostfixExpr:
    # g * (1 + k n): the printed-parenthesisation reading of eq7.
    tokens = g.tokens + (literal(1.0), literal(params.omega_sq_coeff)) + n_expr.tokens + (_MUL, _ADD, _MUL)
    return simplify(PostfixExpr(tokens))


# -- prepared candidate --------------------------------------------------------------


class PreparedSoliton(PreparedCandidate):
    """Derived expressions of one (u, n) structure.

    Everything symbolic (u', n', g, g'' and a) is built once here; only
    numeric evaluation happens per constant vector.
    """

    def __init__(self, problem: "SolitonProblem", candidate: CandidateSolution):
        super().__init__(problem, candidate)
        params = problem.params
        self.g = compose_g(candidate.u_expr, params)
        self.a = compose_a(candidate.u_expr, params)
        if problem.eq7_form == "standard":
            self.eq7_second = second_derivative(self.g)
        else:
            self.eq7_second = second_derivative(_compose_eq7_literal(self.g, candidate.n_expr, params))

    def fields(self, points, constants: np.ndarray) -> dict[str, np.ndarray]:
        """u, n, u', n' and a over `points`."""
        c = self.candidate
        return {
            "u": eval_batch(c.u_expr, points, constants),
            "n": eval_batch(c.n_expr, points, constants),
            "du": eval_batch(self.derivatives["u"], points, constants),
            "dn": eval_batch(self.derivatives["n"], points, constants),
            "a": eval_batch(self.a, points, constants),
        }

    def residual_blocks(self, constants: np.ndarray) -> dict[str, np.ndarray]:
        problem: SolitonProblem = self.problem  # type: ignore[assignment]
        p = problem.params
        grid = problem.grid
        c = self.candidate
        u = eval_batch(c.u_expr, grid, constants)
        n = eval_batch(c.n_expr, grid, constants)
        du = eval_batch(self.derivatives["u"], grid, constants)
        a = eval_batch(self.a, grid, constants)
        g = eval_batch(self.g, grid, constants)
        second = eval_batch(self.eq7_second, grid, constants)
        gamma0 = float(constants[p.gamma0_slot])
        coupling = 1.0 + p.rho_i * p.alpha

        blocks: dict[str, np.ndarray] = {}
        with np.errstate(all="ignore"):
            source = n * (np.tanh(u) + p.rho_i * np.sinh(u)) / coupling
            if problem.eq7_form == "standard":
                blocks["eq7"] = second + p.omega_sq_coeff * n * g - source
            else:
                blocks["eq7"] = second - source

            blocks["eq8"] = (
                (p.rho_i * p.v_te**2 + p.v_ti**2) * np.log(n)
                - p.rho_i * (1.0 - np.cosh(u))
                + 0.5 * p.rho_i * p.alpha * np.tanh(u) ** 2
                - p.rho_i**2 * g**2 / (2.0 * coupling)
            )

            slope_a = (np.cosh(u) - p.alpha * gamma0 / np.cosh(u) ** 2) * du
            blocks["eq9"] = a[:1]
            blocks["eq10"] = a[-1:]
            blocks["eq11"] = slope_a[:1]
            blocks["eq12"] = slope_a[-1:]

            blocks["eq13"] = problem.mirror_difference(n)

            if problem.dataset is None:
                blocks["eq14"] = np.zeros(0)
                blocks["eq15"] = np.zeros(0)
            else:
                data = problem.dataset
                if problem.data_on_grid:
                    n_d, a_d = n, a
                else:
                    n_d = eval_batch(c.n_expr, data.grid, constants)
                    a_d = eval_batch(self.a, data.grid, constants)
                blocks["eq14"] = (n_d / p.n0 - 1.0) - data.density
                blocks["eq15"] = problem.a_weight_factor * (a_d - data.a_profile)
        return blocks


class SolitonProblem(Problem):
    """The bright-soliton reduced-order model as a search problem."""

    function_names = ("u", "n")
    term_names = TERM_NAMES

    def __init__(
        self,
        params: PlasmaParams = PlasmaParams(),
        grid: Optional[Grid] = None,
        dataset: Optional[Dataset] = None,
        threshold: float = 1e-3,
        min_derivative_peak: float = 0.0,
        eq7_form: Literal["standard", "literal"] = "standard",
        data_a_weight: float = 10.0,
        weight_inside_square: bool = True,
        gamma0_init: float = 2.0,
        gamma0_bounds: tuple[float, float] = (1.0, 100.0),
    ):
        super().__init__(grid if grid is not None else Grid.uniform(-10.0, 10.0, 127), threshold, min_derivative_peak)
        if params.gamma0_slot != 0:
            raise UsageError("gamma0 must occupy the first reserved slot")
        self.params = params
        self.dataset = dataset
        self.eq7_form = eq7_form
        self.a_weight_factor = data_a_weight if weight_inside_square else math.sqrt(data_a_weight)
        self.reserved = (ReservedConstant("gamma0", gamma0_init, tuple(gamma0_bounds)),)
        self.data_on_grid = dataset is not None and np.array_equal(dataset.grid.points, self.grid.points)

    @classmethod
    def from_config(cls, config, dataset: Optional[Dataset] = None) -> "SolitonProblem":
        section = config.problem
        return cls(
            params=PlasmaParams.from_section(section),
            grid=Grid.uniform(config.grid.x_min, config.grid.x_max, config.grid.n_points),
            dataset=dataset,
            threshold=section.triviality_threshold,
            min_derivative_peak=section.min_derivative_peak,
            eq7_form=section.eq7_form,
            data_a_weight=section.data_a_weight,
            weight_inside_square=section.weight_inside_square,
            gamma0_init=section.gamma0_init,
            gamma0_bounds=tuple(section.gamma0_bounds),
        )

    @property
    def no_data(self) -> bool:
        return self.dataset is None

    def mirror_difference(self, values: np.ndarray) -> np.ndarray:
        if not self.grid.symmetric:
            raise UsageError("the symmetry loss needs a symmetric grid")
        return values - values[::-1]

    def prepare(self, candidate: CandidateSolution) -> PreparedSoliton:
        return PreparedSoliton(self, candidate)


# -- per-term operations ---------------------------------------------------------------


def _sne(block: np.ndarray) -> float:
    block = np.atleast_1d(block)
    if not np.all(np.isfinite(block)):
        return math.nan
    return float(np.dot(block, block))


def _blocks(candidate: CandidateSolution, params: PlasmaParams, grid: Grid, dataset: Optional[Dataset] = None,
            **options) -> dict[str, np.ndarray]:
    problem = SolitonProblem(params, grid, dataset, **options)
    return problem.prepare(candidate).residual_blocks(candidate.constants)


# The per-term functions return NaN when a non-finite value shows up; total_loss
# turns that into a rejected report.

def loss_eq1(candidate: CandidateSolution, params: PlasmaParams, grid: Grid, **options) -> float:
    """SNE of the first ROM equation."""
    if grid.symmetric:
        return _sne(_blocks(candidate, params, grid, **options)["eq7"])
    prepared = SolitonProblem(params, grid, **options).prepare(candidate)
    p, c = params, candidate.constants
    u = eval_batch(candidate.u_expr, grid, c)
    n = eval_batch(candidate.n_expr, grid, c)
    g = eval_batch(prepared.g, grid, c)
    second = eval_batch(prepared.eq7_second, grid, c)
    with np.errstate(all="ignore"):
        source = n * (np.tanh(u) + p.rho_i * np.sinh(u)) / (1.0 + p.rho_i * p.alpha)
        if prepared.problem.eq7_form == "standard":
            return _sne(second + p.omega_sq_coeff * n * g - source)
        return _sne(second - source)


def loss_eq2(candidate: CandidateSolution, params: PlasmaParams, grid: Grid) -> float:
    """SNE of the second ROM equation; NaN when n <= 0 anywhere."""
    u = eval_batch(candidate.u_expr, grid, candidate.constants)
    n = eval_batch(candidate.n_expr, grid, candidate.constants)
    g = eval_batch(compose_g(candidate.u_expr, params), grid, candidate.constants)
    p = params
    with np.errstate(all="ignore"):
        r = (
            (p.rho_i * p.v_te**2 + p.v_ti**2) * np.log(n)
            - p.rho_i * (1.0 - np.cosh(u))
            + 0.5 * p.rho_i * p.alpha * np.tanh(u) ** 2
            - p.rho_i**2 * g**2 / (2.0 * (1.0 + p.rho_i * p.alpha))
        )
    return _sne(r)


def loss_boundary(candidate: CandidateSolution, params: PlasmaParams, grid: Grid) -> tuple[float, float, float, float]:
    """SNEs of a(x_min), a(x_max), a'(x_min), a'(x_max)."""
    ends = Grid(np.array([grid.x_min, grid.x_max])) if len(grid) > 1 else grid
    problem = SolitonProblem(params, ends)
    prepared = problem.prepare(candidate)
    f = prepared.fields(ends, candidate.constants)
    gamma0 = float(candidate.constants[params.gamma0_slot])
    with np.errstate(all="ignore"):
        slope_a = (np.cosh(f["u"]) - params.alpha * gamma0 / np.cosh(f["u"]) ** 2) * f["du"]
    return (_sne(f["a"][:1]), _sne(f["a"][-1:]), _sne(slope_a[:1]), _sne(slope_a[-1:]))


def loss_symmetry(candidate: CandidateSolution, grid: Grid) -> float:
    """Sum over i of (n(x_i) - n(x_{N-1-i}))^2 on a mirrored grid."""
    if not grid.symmetric:
        raise UsageError("the symmetry loss needs a symmetric grid")
    n = eval_batch(candidate.n_expr, grid, candidate.constants)
    return _sne(n - n[::-1])


def loss_data(candidate: CandidateSolution, params: PlasmaParams, dataset: Dataset,
              data_a_weight: float = 10.0, weight_inside_square: bool = True) -> tuple[float, float]:
    """SNEs of the density and a(x) data terms."""
    if dataset.count == 0:
        raise UsageError("dataset is empty")
    c = candidate.constants
    n = eval_batch(candidate.n_expr, dataset.grid, c)
    a = eval_batch(compose_a(candidate.u_expr, params), dataset.grid, c)
    factor = data_a_weight if weight_inside_square else math.sqrt(data_a_weight)
    with np.errstate(all="ignore"):
        return _sne((n / params.n0 - 1.0) - dataset.density), _sne(factor * (a - dataset.a_profile))


def total_loss(
    candidate: CandidateSolution,
    params: PlasmaParams = PlasmaParams(),
    dataset: Optional[Dataset] = None,
    grid: Optional[Grid] = None,
    **options,
) -> LossReport:
    """All nine SNEs and their total; rejected if trivial or non-finite."""
    return SolitonProblem(params, grid, dataset, **options).total_loss(candidate)


def triviality_check(candidate: CandidateSolution, grid: Grid, threshold: float = 1e-3) -> bool:
    """Accept iff u, n, u', n' each vary by at least `threshold` and use x."""
    return SolitonProblem(PlasmaParams(), grid, threshold=threshold).triviality_check(candidate)


def load_golden() -> CandidateSolution:
    """The published (u, n, gamma0) solution bundled with the package."""
    from pisr.schemas.common import CandidateModel

    text = resources.files("pisr.data").joinpath("golden_candidate.json").read_text(encoding="utf-8")
    return CandidateModel.model_validate(json.loads(text)).to_candidate()
