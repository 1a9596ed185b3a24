"""Search drivers: exhaustive brute force and simulated annealing.

Both drivers run each candidate through the same pipeline

    triviality check -> constant fit -> loss report

and keep the best accepted candidate. Annealing can checkpoint its full state
(RNG position included) and resume from it; a single-worker run resumed from a
checkpoint continues exactly as if it had never stopped.
"""
from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from pisr.core.errors import FitRejected, ResumeError, UsageError
from pisr.core.logging import logger
from pisr.observability import metrics
from pisr.schemas.checkpoint import SCHEMA_VERSION, CheckpointModel, TraceRow
from pisr.schemas.common import CandidateModel, LossReportModel
from pisr.services.constfit import FitConfig
from pisr.services.expr import Grammar, Kind, PostfixExpr, enumerate_expressions, jitter_constants, perturb, sample_expression
from pisr.services.problem import CandidateSolution, LossReport, PreparedCandidate, Problem
from pisr.utils.timing import Stopwatch


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric cooling: T = T0 * ratio ** (step // steps_per_temperature)."""

    initial_temperature: float = 1.0
    cooling_ratio: float = 0.95
    steps_per_temperature: int = 200
    min_temperature: float = 1e-6

    def __post_init__(self) -> None:
        if not self.initial_temperature > self.min_temperature > 0:
            raise UsageError("need initial_temperature > min_temperature > 0")
        if not 0 < self.cooling_ratio < 1:
            raise UsageError("cooling_ratio must lie in (0, 1)")
        if self.steps_per_temperature < 1:
            raise UsageError("steps_per_temperature must be >= 1")

    def temperature(self, step: int) -> float:
        return self.initial_temperature * self.cooling_ratio ** (step // self.steps_per_temperature)

    def finished(self, step: int) -> bool:
        return self.temperature(step) < self.min_temperature

    def at_boundary(self, step: int) -> bool:
        return step > 0 and step % self.steps_per_temperature == 0


@dataclass(frozen=True)
class SearchBudget:
    max_evaluations: Optional[int] = None
    max_wall_seconds: Optional[float] = None
    target_loss: Optional[float] = None

    def __post_init__(self) -> None:
        if self.max_evaluations is None and self.max_wall_seconds is None and self.target_loss is None:
            raise UsageError("at least one stopping criterion must be set")

    def evaluations_left(self, used: int) -> bool:
        return self.max_evaluations is None or used < self.max_evaluations

    def reached_target(self, total: float) -> bool:
        return self.target_loss is not None and total <= self.target_loss


@dataclass(frozen=True)
class MoveOptions:
    """Annealing move and scoring knobs."""

    jitter_probability: float = 0.2
    jitter_sigma: float = 0.1
    fit_gate_ratio: float = 10.0
    checkpoint_every: int = 1000
    init_attempts: int = 1000


@dataclass
class SearchResult:
    candidate: Optional[CandidateSolution]
    report: Optional[LossReport]
    exhausted: bool = False
    evaluations: int = 0
    trivial_rejects: int = 0
    visited: int = 0
    trace: list[TraceRow] = field(default_factory=list)
    diagnostic: Optional[str] = None
    finished: bool = False

    @property
    def found(self) -> bool:
        return self.candidate is not None and self.report is not None and self.report.accepted


def grammar_from_section(section, name: str) -> Grammar:
    """Grammar of one unknown function from the `grammar` config section."""
    kinds = tuple(Kind.VARIABLE if k == "variable" else Kind.CONST for k in section.leaves)
    return Grammar(
        max_depth=section.depth_for(name),
        allowed_unary=tuple(section.unary),
        allowed_binary=tuple(section.binary),
        leaf_kinds=kinds,
        rng_weights=dict(section.rng_weights),
        exact_depth=section.exact_depth,
    )


# -- shared scoring pipeline ---------------------------------------------------------


def score_structure(
    problem: Problem,
    candidate: CandidateSolution,
    fit_config: FitConfig,
    prepared: Optional[PreparedCandidate] = None,
) -> tuple[CandidateSolution, LossReport]:
    """Fit the candidate's constants and score it.

    A trivial candidate (at its starting constants) comes back with a
    rejected report and is never fitted.
    """
    prepared = prepared or problem.prepare(candidate)
    if not problem.passes_triviality(prepared, candidate.constants):
        return candidate, LossReport.rejection(problem.term_names, problem.count, "trivial", problem.no_data)
    try:
        fit = problem.fit(prepared, candidate.constants, fit_config)
    except FitRejected as exc:
        return candidate, LossReport.rejection(problem.term_names, problem.count, f"fit:{exc.reason}", problem.no_data)
    fitted = candidate.with_constants(fit.constants)
    return fitted, problem.report(prepared, fitted.constants)


def _reject_label(report: LossReport) -> str:
    reason = report.reason or "rejected"
    return reason.split(":", 1)[0]


# -- brute force ---------------------------------------------------------------------


def _structures(problem: Problem, grammars: Mapping[str, Grammar]) -> Iterator[dict[str, PostfixExpr]]:
    """Cartesian product of the per-function enumerations, first function outermost.

    Inner enumerations are regenerated for every outer expression, so nothing
    beyond one level of the grammar is held in memory.
    """
    names = problem.function_names

    def rec(i: int, acc: dict[str, PostfixExpr]) -> Iterator[dict[str, PostfixExpr]]:
        if i == len(names):
            yield dict(acc)
            return
        g = grammars[names[i]]
        for expr in enumerate_expressions(g, g.max_depth):
            acc[names[i]] = expr
            yield from rec(i + 1, acc)

    yield from rec(0, {})


def brute_force(
    problem: Problem,
    grammars: Mapping[str, Grammar],
    budget: SearchBudget,
    fit_config: FitConfig = FitConfig(),
) -> SearchResult:
    """Score every structure the grammars produce and return the best.

    Ties on total loss go to the smaller combined token count, then to the
    earlier structure in enumeration order. `max_evaluations` caps visited
    structures, trivial ones included.
    """
    clock = Stopwatch()
    best: Optional[CandidateSolution] = None
    best_report: Optional[LossReport] = None
    visited = evaluations = trivial = 0
    exhausted = False

    for exprs in _structures(problem, grammars):
        if not budget.evaluations_left(visited) or clock.exceeded(budget.max_wall_seconds):
            exhausted = True
            break
        visited += 1
        metrics.inc_evaluated("brute_force")
        candidate = problem.candidate_from(exprs, provenance="enumerated")
        fitted, report = score_structure(problem, candidate, fit_config)
        if report.rejected:
            if report.reason == "trivial":
                trivial += 1
            else:
                evaluations += 1
            metrics.inc_rejected(_reject_label(report))
            logger.debug("rejected %s: %s", [str(e) for e in exprs.values()], report.reason)
            continue
        evaluations += 1
        if best_report is None or (report.total, fitted.token_count()) < (best_report.total, best.token_count()):
            best, best_report = fitted, report
            metrics.set_best_total(report.total)
            logger.info("brute force: new best total=%.6g after %d structures", report.total, visited)
        if budget.reached_target(best_report.total):
            break

    if exhausted:
        logger.warning("brute force stopped by budget after %d structures", visited)
    diagnostic = None
    if best is None:
        diagnostic = f"no candidate survived: {visited} visited, {trivial} trivial, {evaluations} scored and rejected"
    return SearchResult(best, best_report, exhausted, evaluations, trivial, visited, diagnostic=diagnostic,
                        finished=not exhausted)


# -- simulated annealing ---------------------------------------------------------------


@dataclass
class AnnealState:
    """Mutable state of one annealing chain."""

    rng: np.random.Generator
    current: CandidateSolution
    current_report: LossReport
    best: CandidateSolution
    best_report: LossReport
    step: int = 0
    evaluations: int = 0
    trivial_rejects: int = 0
    trace: list[TraceRow] = field(default_factory=list)
    finished: bool = False


def initial_candidate(
    problem: Problem,
    grammars: Mapping[str, Grammar],
    rng: np.random.Generator,
    fit_config: FitConfig,
    attempts: int = 1000,
) -> tuple[CandidateSolution, LossReport]:
    """Sample structures at each grammar's full depth until one is accepted.

    Raises
    ------
    UsageError
        When `attempts` samples all come back trivial or non-finite.
    """
    for _ in range(attempts):
        exprs = {name: sample_expression(grammars[name], rng, grammars[name].max_depth)
                 for name in problem.function_names}
        candidate, report = score_structure(problem, problem.candidate_from(exprs), fit_config)
        if report.accepted:
            return candidate, report
    raise UsageError(f"no non-trivial starting candidate in {attempts} samples")


def _propose(
    state: AnnealState, problem: Problem, grammars: Mapping[str, Grammar], moves: MoveOptions
) -> CandidateSolution:
    rng = state.rng
    names = problem.function_names
    name = names[int(rng.integers(len(names)))]
    current = state.current
    slots = current.slots_of(name)
    if slots and rng.random() < moves.jitter_probability:
        return current.with_constants(jitter_constants(current.constants, slots, rng, moves.jitter_sigma))
    expr = perturb(current[name], grammars[name], rng, moves.jitter_probability, moves.jitter_sigma)
    return problem.replace_expression(current, name, expr)


def _evaluate_proposal(
    state: AnnealState, problem: Problem, proposal: CandidateSolution, fit_config: FitConfig, moves: MoveOptions
) -> tuple[CandidateSolution, LossReport, bool]:
    """Score with inherited constants; fit only when within the gate of the best."""
    prepared = problem.prepare(proposal)
    report = problem.report(prepared, proposal.constants)
    if report.rejected:
        return proposal, report, False
    if report.total > moves.fit_gate_ratio * state.best_report.total:
        return proposal, report, False
    try:
        fit = problem.fit(prepared, proposal.constants, fit_config)
    except FitRejected:
        return proposal, report, True
    fitted = proposal.with_constants(fit.constants)
    fitted_report = problem.report(prepared, fitted.constants)
    if fitted_report.accepted and fitted_report.total <= report.total:
        return fitted, fitted_report, True
    return proposal, report, True


def _step(
    state: AnnealState,
    problem: Problem,
    grammars: Mapping[str, Grammar],
    schedule: AnnealSchedule,
    fit_config: FitConfig,
    moves: MoveOptions,
) -> None:
    temperature = schedule.temperature(state.step)
    proposal = _propose(state, problem, grammars, moves)
    candidate, report, fitted = _evaluate_proposal(state, problem, proposal, fit_config, moves)
    state.evaluations += 1
    metrics.inc_evaluated("annealing")

    if report.rejected:
        if report.reason == "trivial":
            state.trivial_rejects += 1
        metrics.inc_rejected(_reject_label(report))
        logger.debug("step %d: proposal rejected (%s)", state.step, report.reason)
    else:
        delta = report.total - state.current_report.total
        if delta <= 0 or state.rng.random() < math.exp(-delta / temperature):
            if not fitted:
                # Accepted without passing the fit gate: refine before adopting.
                candidate, report = score_structure(problem, candidate, fit_config)
            if report.accepted:
                state.current, state.current_report = candidate, report
                if report.total < state.best_report.total:
                    state.best, state.best_report = candidate, report
                    metrics.set_best_total(report.total)
                    logger.info("step %d: new best total=%.6g", state.step, report.total)

    state.trace.append(TraceRow(step=state.step, temperature=temperature,
                                current_total=state.current_report.total, best_total=state.best_report.total))
    state.step += 1


def _anneal(
    state: AnnealState,
    problem: Problem,
    grammars: Mapping[str, Grammar],
    schedule: AnnealSchedule,
    budget: SearchBudget,
    fit_config: FitConfig,
    moves: MoveOptions,
    clock: Stopwatch,
    on_checkpoint=None,
    on_boundary=None,
) -> bool:
    """Advance `state` until the schedule ends or the budget runs out.

    Returns True when the budget (not the schedule or target) stopped the run.
    """
    exhausted = False
    while not state.finished:
        if schedule.finished(state.step) or budget.reached_target(state.best_report.total):
            state.finished = True
            break
        if not budget.evaluations_left(state.evaluations) or clock.exceeded(budget.max_wall_seconds):
            exhausted = True
            break
        if on_boundary is not None and schedule.at_boundary(state.step):
            on_boundary(state)
        _step(state, problem, grammars, schedule, fit_config, moves)
        if on_checkpoint is not None and state.step % moves.checkpoint_every == 0:
            on_checkpoint(state)
    return exhausted


def _result(state: AnnealState, exhausted: bool) -> SearchResult:
    return SearchResult(
        candidate=state.best,
        report=state.best_report,
        exhausted=exhausted,
        evaluations=state.evaluations,
        trivial_rejects=state.trivial_rejects,
        visited=state.evaluations,
        trace=list(state.trace),
        finished=state.finished,
    )


def simulated_annealing(
    problem: Problem,
    grammars: Mapping[str, Grammar],
    init: Optional[CandidateSolution],
    schedule: AnnealSchedule,
    budget: SearchBudget,
    seed: int = 0,
    fit_config: FitConfig = FitConfig(),
    moves: MoveOptions = MoveOptions(),
    checkpoint_path: Optional[Path] = None,
    state: Optional[AnnealState] = None,
) -> SearchResult:
    """Single-chain annealing with Metropolis acceptance exp(-delta/T).

    `init` is fitted and scored first; it must come back accepted. With
    ``init=None`` a starting pair is sampled from the grammars using `seed`.
    Passing `state` (from `resume`) continues a previous run instead.

    Raises
    ------
    UsageError
        When `init` is trivial or non-finite.
    """
    clock = Stopwatch()
    if state is None:
        rng = np.random.default_rng(seed)
        if init is None:
            candidate, report = initial_candidate(problem, grammars, rng, fit_config, moves.init_attempts)
        else:
            candidate, report = score_structure(problem, init, fit_config)
            if report.rejected:
                raise UsageError(f"initial candidate rejected: {report.reason}")
        metrics.set_best_total(report.total)
        state = AnnealState(rng, candidate, report, candidate, report)

    def save(s: AnnealState) -> None:
        if checkpoint_path is not None:
            checkpoint(s, checkpoint_path, seed, problem.function_names)

    exhausted = _anneal(state, problem, grammars, schedule, budget, fit_config, moves, clock, on_checkpoint=save)
    if exhausted:
        logger.warning("annealing stopped by budget after %d evaluations", state.evaluations)
    save(state)
    return _result(state, exhausted)


class SharedBest:
    """Best candidate shared between annealing workers."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.candidate: Optional[CandidateSolution] = None
        self.report: Optional[LossReport] = None

    def offer(self, candidate: CandidateSolution, report: LossReport) -> None:
        with self._lock:
            if self.report is None or report.total < self.report.total:
                self.candidate, self.report = candidate, report

    def snapshot(self) -> tuple[Optional[CandidateSolution], Optional[LossReport]]:
        with self._lock:
            return self.candidate, self.report


def parallel_annealing(
    problem: Problem,
    grammars: Mapping[str, Grammar],
    schedule: AnnealSchedule,
    budget: SearchBudget,
    seed: int = 0,
    workers: int = 2,
    fit_config: FitConfig = FitConfig(),
    moves: MoveOptions = MoveOptions(),
) -> SearchResult:
    """Independent chains that exchange their best at temperature boundaries.

    Each worker draws from its own generator spawned off ``SeedSequence(seed)``.
    At every boundary a worker publishes its best and jumps to the shared best
    when that beats its current candidate. Results depend on thread timing.
    """
    if workers < 1:
        raise UsageError("workers must be >= 1")
    shared = SharedBest()
    clock = Stopwatch()
    seeds = np.random.SeedSequence(seed).spawn(workers)

    def exchange(state: AnnealState) -> None:
        shared.offer(state.best, state.best_report)
        cand, rep = shared.snapshot()
        if rep is not None and rep.total < state.current_report.total:
            state.current, state.current_report = cand, rep

    def run(child: np.random.SeedSequence) -> SearchResult:
        rng = np.random.default_rng(child)
        candidate, report = initial_candidate(problem, grammars, rng, fit_config, moves.init_attempts)
        state = AnnealState(rng, candidate, report, candidate, report)
        exhausted = _anneal(state, problem, grammars, schedule, budget, fit_config, moves, clock,
                            on_boundary=exchange)
        shared.offer(state.best, state.best_report)
        return _result(state, exhausted)

    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="pisr-anneal") as pool:
        results = list(pool.map(run, seeds))

    best = min(results, key=lambda r: r.report.total)
    metrics.set_best_total(best.report.total)
    return SearchResult(
        candidate=best.candidate,
        report=best.report,
        exhausted=any(r.exhausted for r in results),
        evaluations=sum(r.evaluations for r in results),
        trivial_rejects=sum(r.trivial_rejects for r in results),
        visited=sum(r.visited for r in results),
        trace=best.trace,
        finished=all(r.finished for r in results),
    )


# -- checkpoint / resume ---------------------------------------------------------------


def checkpoint(state: AnnealState, path: Path | str, seed: int, functions: Sequence[str]) -> Path:
    """Write the full chain state as versioned JSON (atomic replace)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model = CheckpointModel(
        schema_version=SCHEMA_VERSION,
        seed=seed,
        functions=list(functions),
        finished=state.finished,
        schedule_cursor=state.step,
        evaluations_used=state.evaluations,
        trivial_rejects=state.trivial_rejects,
        rng_state=state.rng.bit_generator.state,
        candidate=CandidateModel.from_candidate(state.best),
        report=LossReportModel.from_report(state.best_report),
        current=CandidateModel.from_candidate(state.current),
        current_report=LossReportModel.from_report(state.current_report),
        trace=state.trace,
    )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(model.model_dump_json(), encoding="utf-8")
    tmp.replace(path)
    logger.info("checkpoint written: %s (step %d)", path, state.step)
    return path


def load_checkpoint(path: Path | str) -> CheckpointModel:
    """Read and validate a checkpoint file.

    Raises
    ------
    ResumeError
        Missing, unparsable or from another schema version.
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ResumeError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("schema_version") != SCHEMA_VERSION:
        raise ResumeError(f"checkpoint {path} has an unsupported schema version")
    try:
        return CheckpointModel.model_validate(payload)
    except ValidationError as exc:
        raise ResumeError(f"checkpoint {path} is corrupt: {exc}") from exc


def resume(path: Path | str, problem: Problem) -> tuple[AnnealState, int]:
    """Restore the chain state and seed stored at `path`.

    Raises
    ------
    ResumeError
        When the file is unusable or was written for other unknown functions.
    """
    model = load_checkpoint(path)
    if tuple(model.functions) != tuple(problem.function_names):
        raise ResumeError(f"checkpoint searches {model.functions}, problem needs {list(problem.function_names)}")
    rng = np.random.default_rng()
    try:
        rng.bit_generator.state = model.rng_state
        best = model.candidate.to_candidate()
        current = model.current.to_candidate()
    except (ValueError, TypeError, KeyError) as exc:
        raise ResumeError(f"checkpoint {path} cannot be restored: {exc}") from exc
    state = AnnealState(
        rng=rng,
        current=current,
        current_report=model.current_report.to_report(),
        best=best,
        best_report=model.report.to_report(),
        step=model.schedule_cursor,
        evaluations=model.evaluations_used,
        trivial_rejects=model.trivial_rejects,
        trace=list(model.trace),
        finished=model.finished,
    )
    logger.info("resumed %s at step %d (%d evaluations used)", path, state.step, state.evaluations)
    return state, model.seed
