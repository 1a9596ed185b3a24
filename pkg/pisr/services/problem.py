"""Problem abstraction shared by the search drivers.

A *problem* knows which unknown functions it searches for, which constants it
reserves (the soliton problem reserves gamma0), and how to turn a candidate
into named residual blocks. Everything else (triviality rejection, the loss
report, the residual vector handed to the constant fitter, constant fitting
itself) is generic and lives here.

Constant slot layout
--------------------
Reserved constants take the first slots; each function's FitConst leaves
follow in function order, numbered left to right.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from pisr.core.errors import FitRejected, UsageError
from pisr.services.constfit import FitConfig, FitResult, fit_constants
from pisr.services.evaluate import Grid, eval_batch, variance
from pisr.services.expr import Kind, PostfixExpr, fit_const, renumber_constants
from pisr.services.symdiff import differentiate


@dataclass(frozen=True, eq=False)
class CandidateSolution:
    """Named expressions sharing one constant vector.

    Attributes
    ----------
    expressions : mapping name -> PostfixExpr
        ``{"u": ..., "n": ...}`` for the soliton problem.
    constants : numpy.ndarray
        Values of every FitConst slot, reserved slots included.
    provenance : str
        ``sampled``, ``enumerated``, ``golden`` or ``loaded``.
    """

    expressions: Mapping[str, PostfixExpr]
    constants: np.ndarray
    provenance: str = "sampled"

    def __post_init__(self) -> None:
        consts = np.array(self.constants, dtype=float, copy=True).reshape(-1)
        consts.setflags(write=False)
        object.__setattr__(self, "constants", consts)
        object.__setattr__(self, "expressions", dict(self.expressions))
        for name, expr in self.expressions.items():
            slots = expr.const_slots()
            if slots and slots[-1] >= consts.size:
                raise UsageError(f"expression {name!r} uses slot c{slots[-1]} but only {consts.size} constants given")

    def __getitem__(self, name: str) -> PostfixExpr:
        return self.expressions[name]

    @property
    def u_expr(self) -> PostfixExpr:
        return self.expressions["u"]

    @property
    def n_expr(self) -> PostfixExpr:
        return self.expressions["n"]

    def with_constants(self, constants: Sequence[float]) -> "CandidateSolution":
        return CandidateSolution(self.expressions, np.asarray(constants, dtype=float), self.provenance)

    def with_expression(self, name: str, expr: PostfixExpr) -> "CandidateSolution":
        exprs = dict(self.expressions)
        exprs[name] = expr
        return CandidateSolution(exprs, self.constants, self.provenance)

    def token_count(self) -> int:
        return sum(len(e) for e in self.expressions.values())

    def slots_of(self, name: str) -> tuple[int, ...]:
        return self.expressions[name].const_slots()


@dataclass(frozen=True)
class LossReport:
    """Per-term squared-norm errors and their total.

    `total` is summed left to right in term order. A rejected report carries
    NaN terms, an infinite total and a reason.
    """

    terms: Mapping[str, float]
    count: int
    rejected: bool = False
    reason: Optional[str] = None
    no_data: bool = False
    total: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", dict(self.terms))
        if self.rejected:
            object.__setattr__(self, "total", math.inf)
            return
        total = 0.0
        for value in self.terms.values():
            total += value
        object.__setattr__(self, "total", total)

    @classmethod
    def rejection(cls, keys: Iterable[str], count: int, reason: str, no_data: bool = False) -> "LossReport":
        return cls({k: math.nan for k in keys}, count, rejected=True, reason=reason, no_data=no_data)

    @property
    def accepted(self) -> bool:
        return not self.rejected

    @property
    def sne(self) -> np.ndarray:
        return np.array(list(self.terms.values()), dtype=float)

    @property
    def mse(self) -> dict[str, float]:
        return {k: v / self.count for k, v in self.terms.items()}


@dataclass(frozen=True)
class ReservedConstant:
    name: str
    initial: float
    bounds: tuple[float, float]


class PreparedCandidate(ABC):
    """Derived expressions of one candidate structure, reusable across constants."""

    def __init__(self, problem: "Problem", candidate: CandidateSolution):
        self.problem = problem
        self.candidate = candidate
        self.derivatives = {name: differentiate(expr) for name, expr in candidate.expressions.items()}

    @abstractmethod
    def residual_blocks(self, constants: np.ndarray) -> dict[str, np.ndarray]:
        """Residual array per loss term; the term's SNE is its sum of squares."""

    def residual_vector(self, constants: np.ndarray) -> np.ndarray:
        blocks = self.residual_blocks(np.asarray(constants, dtype=float))
        return np.concatenate([np.atleast_1d(b) for b in blocks.values()]) if blocks else np.zeros(0)


class Problem(ABC):
    """A system of residual equations over unknown functions of x."""

    function_names: tuple[str, ...] = ()
    term_names: tuple[str, ...] = ()
    reserved: tuple[ReservedConstant, ...] = ()
    # Bounds applied to every non-reserved slot when fitting; None = unbounded.
    free_bounds: Optional[tuple[float, float]] = None

    def __init__(self, grid: Grid, threshold: float = 1e-3, min_derivative_peak: float = 0.0):
        self.grid = grid
        self.threshold = threshold
        self.min_derivative_peak = min_derivative_peak

    @property
    def no_data(self) -> bool:
        return True

    @property
    def count(self) -> int:
        return len(self.grid)

    @abstractmethod
    def prepare(self, candidate: CandidateSolution) -> PreparedCandidate:
        """Build the derived expressions for `candidate`."""

    def candidate_from(
        self, expressions: Mapping[str, PostfixExpr], provenance: str = "sampled"
    ) -> CandidateSolution:
        """Assemble a candidate, laying out reserved slots then each function's slots."""
        missing = [n for n in self.function_names if n not in expressions]
        if missing:
            raise UsageError(f"missing expression(s): {', '.join(missing)}")
        offset = len(self.reserved)
        exprs: dict[str, PostfixExpr] = {}
        for name in self.function_names:
            expr = PostfixExpr(renumber_constants(expressions[name].tokens, offset))
            offset += sum(1 for t in expr.tokens if t.kind is Kind.CONST)
            exprs[name] = expr
        constants = [r.initial for r in self.reserved] + [1.0] * (offset - len(self.reserved))
        return CandidateSolution(exprs, np.array(constants, dtype=float), provenance)

    def replace_expression(self, candidate: CandidateSolution, name: str, expr: PostfixExpr) -> CandidateSolution:
        """Swap in a new expression for `name`, re-laying out slots if its constants changed.

        Slots that `name` already used keep their values, new ones start at 1.0,
        and every function's slots are renumbered in layout order.
        """
        if expr.const_slots() == candidate.slots_of(name):
            return candidate.with_expression(name, expr)
        n_reserved = len(self.reserved)
        old = candidate.constants
        values = list(old[:n_reserved])
        exprs: dict[str, PostfixExpr] = {}
        for fn in self.function_names:
            source = expr if fn == name else candidate[fn]
            known = set(candidate.slots_of(fn))
            mapping: dict[int, int] = {}
            tokens = []
            for tok in source.tokens:
                if tok.kind is Kind.CONST and not (tok.value < n_reserved and tok.value in known):
                    if tok.value not in mapping:
                        mapping[tok.value] = len(values)
                        values.append(float(old[tok.value]) if tok.value in known else 1.0)
                    tok = fit_const(mapping[tok.value])
                tokens.append(tok)
            exprs[fn] = PostfixExpr(tuple(tokens))
        return CandidateSolution(exprs, np.array(values, dtype=float), candidate.provenance)

    def slot_bounds(
        self, candidate: CandidateSolution, free_bounds: Optional[tuple[float, float]] = None
    ) -> tuple[tuple[float, float], ...]:
        free = free_bounds if free_bounds is not None else (-math.inf, math.inf)
        bounds = [free] * candidate.constants.size
        for i, r in enumerate(self.reserved[: candidate.constants.size]):
            bounds[i] = r.bounds
        return tuple(bounds)

    # -- triviality -----------------------------------------------------------------

    def passes_triviality(self, prepared: PreparedCandidate, constants: np.ndarray) -> bool:
        """Variance of every function and its x-derivative must reach the threshold."""
        for name in self.function_names:
            expr = prepared.candidate[name]
            if not expr.uses_variable(0):
                return False
            values = eval_batch(expr, self.grid, constants)
            slope = eval_batch(prepared.derivatives[name], self.grid, constants)
            for arr in (values, slope):
                v = variance(arr)
                if not math.isfinite(v) or v < self.threshold:
                    return False
            if self.min_derivative_peak > 0 and float(np.max(np.abs(slope))) < self.min_derivative_peak:
                return False
        return True

    def triviality_check(self, candidate: CandidateSolution) -> bool:
        """True (accept) iff the candidate is non-trivial on this problem's grid."""
        return self.passes_triviality(self.prepare(candidate), candidate.constants)

    # -- scoring --------------------------------------------------------------------

    def report(self, prepared: PreparedCandidate, constants: np.ndarray) -> LossReport:
        constants = np.asarray(constants, dtype=float)
        if not self.passes_triviality(prepared, constants):
            return LossReport.rejection(self.term_names, self.count, "trivial", self.no_data)
        blocks = prepared.residual_blocks(constants)
        terms: dict[str, float] = {}
        for name in self.term_names:
            block = np.atleast_1d(blocks[name])
            if not np.all(np.isfinite(block)):
                return LossReport.rejection(self.term_names, self.count, f"non_finite:{name}", self.no_data)
            terms[name] = float(np.dot(block, block))
        return LossReport(terms, self.count, no_data=self.no_data)

    def total_loss(self, candidate: CandidateSolution) -> LossReport:
        return self.report(self.prepare(candidate), candidate.constants)

    def fit(
        self,
        prepared: PreparedCandidate,
        constants: np.ndarray,
        config: FitConfig,
        free_bounds: Optional[tuple[float, float]] = None,
    ) -> FitResult:
        """Refine the candidate's constants against the full residual vector.

        Reserved slots keep their own bounds; `free_bounds` (or the problem-wide
        default) applies to the rest.

        Raises
        ------
        FitRejected
            When the residual is non-finite at `constants`.
        """
        if prepared.candidate.constants.size == 0:
            r = prepared.residual_vector(constants)
            if not np.all(np.isfinite(r)):
                raise FitRejected("non_finite_start")
            return FitResult(np.asarray(constants, dtype=float), float(np.dot(r, r)), True, 0, config.method)
        bounds = self.slot_bounds(prepared.candidate, free_bounds if free_bounds is not None else self.free_bounds)
        bounded = replace(config, constant_bounds=bounds)
        return fit_constants(constants, prepared.residual_vector, bounded)


class _PreparedPlanted(PreparedCandidate):
    def residual_blocks(self, constants: np.ndarray) -> dict[str, np.ndarray]:
        problem: PlantedProblem = self.problem  # type: ignore[assignment]
        values = eval_batch(self.candidate["n"], problem.grid, constants)
        return {"residual": values - problem.target_values}


class PlantedProblem(Problem):
    """Single unknown n(x) with residual n(x) - target(x).

    Used to check that the search recovers an expression that lies inside
    its own search space.
    """

    function_names = ("n",)
    term_names = ("residual",)

    def __init__(self, target: PostfixExpr, grid: Grid, threshold: float = 1e-3, min_derivative_peak: float = 0.0):
        super().__init__(grid, threshold, min_derivative_peak)
        self.target = target
        self.target_values = eval_batch(target, grid)

    def prepare(self, candidate: CandidateSolution) -> PreparedCandidate:
        return _PreparedPlanted(self, candidate)
