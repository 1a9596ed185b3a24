"""Command-line entry point (`pisr`).

Subcommands
-----------
search     run brute force or simulated annealing and write the best candidate
resume     continue an annealing run from its checkpoint
eval       print the SNE/MSE table of a candidate (bundled golden one by default)
gen-data   sample density and a(x) of a candidate into a dataset CSV
plot-data  write model and data curves side by side for external plotting

Exit status: 0 when an accepted artifact was produced, 1 when no candidate was
accepted, 2 on configuration, input or resume errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pisr.core.config import RunConfig, load_config
from pisr.core.errors import (
    ConfigError,
    DataError,
    ExpressionError,
    PisrError,
    ReportingError,
    ResumeError,
    UsageError,
)
from pisr.core.lifecycle import on_shutdown, on_startup
from pisr.core.logging import logger
from pisr.schemas.common import CandidateModel, LossReportModel
from pisr.services.constfit import FitConfig
from pisr.services.evaluate import Grid
from pisr.services.expr import PostfixExpr
from pisr.services.problem import CandidateSolution, LossReport, PlantedProblem, Problem
from pisr.services.search import (
    AnnealSchedule,
    MoveOptions,
    SearchBudget,
    SearchResult,
    brute_force,
    grammar_from_section,
    parallel_annealing,
    resume,
    simulated_annealing,
)
from pisr.services.soliton import (
    DATASET_HEADER,
    TERM_DESCRIPTIONS,
    Dataset,
    SolitonProblem,
    load_golden,
    read_dataset,
)
from pisr.utils.tables import write_columns, write_csv
from pisr.utils.timing import time_block

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_INPUT = 2

BEST_CANDIDATE = "best_candidate.json"
LOSS_REPORT = "loss_report.json"
TRACE = "trace.csv"
TRACE_HEADER = ("step", "temperature", "current_total", "best_total")
PLOT_HEADER = ("x", "u", "n", "a", "density_model", "density_data", "a_data")


# -- assembly from config ------------------------------------------------------------


def load_dataset(config: RunConfig) -> Optional[Dataset]:
    """Dataset named by `paths.dataset`, or None when running without data.

    Raises
    ------
    ConfigError
        When the file is missing (outside physics-only mode) or unreadable.
    """
    path = config.paths.dataset
    if path is None:
        return None
    if not Path(path).exists():
        if config.problem.physics_only:
            logger.warning("dataset %s not found; physics-only run, data terms flagged no-data", path)
            return None
        raise ConfigError(f"dataset not found: {path}")
    try:
        return read_dataset(path)
    except DataError as exc:
        raise ConfigError(f"unreadable dataset: {exc}") from exc


def build_problem(config: RunConfig, dataset: Optional[Dataset] = None) -> Problem:
    grid = Grid.uniform(config.grid.x_min, config.grid.x_max, config.grid.n_points)
    problem: Problem
    if config.problem.kind == "planted":
        problem = PlantedProblem(
            PostfixExpr.from_strings(config.problem.target),
            grid,
            threshold=config.problem.triviality_threshold,
            min_derivative_peak=config.problem.min_derivative_peak,
        )
    else:
        problem = SolitonProblem.from_config(config, dataset)
    if config.fit.constant_bounds is not None:
        problem.free_bounds = tuple(config.fit.constant_bounds)
    return problem


def fit_config_from(config: RunConfig) -> FitConfig:
    return FitConfig(
        method=config.fit.method,
        max_iterations=config.fit.max_iterations,
        gradient_tolerance=config.fit.gradient_tolerance,
        step_tolerance=config.fit.step_tolerance,
    )


def _schedule(config: RunConfig) -> AnnealSchedule:
    s = config.search
    return AnnealSchedule(s.initial_temperature, s.cooling_ratio, s.steps_per_temperature, s.min_temperature)


def _budget(config: RunConfig) -> SearchBudget:
    s = config.search
    return SearchBudget(s.max_evaluations, s.max_wall_seconds, s.target_loss)


def _moves(config: RunConfig) -> MoveOptions:
    s = config.search
    return MoveOptions(s.jitter_probability, s.jitter_sigma, s.fit_gate_ratio, s.checkpoint_every, s.init_attempts)


def _grammars(config: RunConfig, problem: Problem):
    return {name: grammar_from_section(config.grammar, name) for name in problem.function_names}


def _load_candidate(path: Optional[Path]) -> CandidateSolution:
    if path is None:
        return load_golden()
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return CandidateModel.model_validate(payload).to_candidate()
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ExpressionError(f"invalid candidate file {path}: {exc}") from exc


# -- artifacts -----------------------------------------------------------------------


def _write_json(path: Path, model) -> Path:
    path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
    return path


def _write_search_artifacts(out_dir: Path, result: SearchResult) -> None:
    if result.candidate is not None:
        _write_json(out_dir / BEST_CANDIDATE, CandidateModel.from_candidate(result.candidate))
    if result.report is not None:
        _write_json(out_dir / LOSS_REPORT, LossReportModel.from_report(result.report))
    rows = [(r.step, r.temperature, r.current_total, r.best_total) for r in result.trace]
    write_csv(out_dir / TRACE, TRACE_HEADER, rows)


def format_report(report: LossReport) -> str:
    """Plain-text SNE/MSE table, one row per loss term."""
    if report.rejected:
        return f"rejected: {report.reason}"
    lines = [f"{'term':<10}{'description':<34}{'SNE':>24}{'MSE':>24}"]
    mse = report.mse
    for name, value in report.terms.items():
        desc = TERM_DESCRIPTIONS.get(name, "")
        if report.no_data and name in ("eq14", "eq15"):
            desc += " (no data)"
        lines.append(f"{name:<10}{desc:<34}{value:>24.17g}{mse[name]:>24.17g}")
    lines.append(f"{'total':<44}{report.total:>24.17g}{report.total / report.count:>24.17g}")
    return "\n".join(lines)


# -- commands ------------------------------------------------------------------------


def _finish_search(config: RunConfig, result: SearchResult) -> int:
    out_dir = Path(config.paths.out_dir)
    _write_search_artifacts(out_dir, result)
    if not result.found:
        print(result.diagnostic or "no accepted candidate")
        return EXIT_REJECTED
    model = CandidateModel.from_candidate(result.candidate)
    for name, expr in model.functions.items():
        print(f"{name}(x) = {expr.infix}")
    print(format_report(result.report))
    return EXIT_OK


def cmd_search(config: RunConfig) -> int:
    problem = build_problem(config, load_dataset(config))
    grammars = _grammars(config, problem)
    fit = fit_config_from(config)
    budget = _budget(config)
    if config.search.driver == "brute_force":
        result = brute_force(problem, grammars, budget, fit)
    elif config.search.workers > 1:
        result = parallel_annealing(problem, grammars, _schedule(config), budget, config.search.seed,
                                    config.search.workers, fit, _moves(config))
    else:
        result = simulated_annealing(problem, grammars, None, _schedule(config), budget, config.search.seed,
                                     fit, _moves(config), checkpoint_path=config.paths.checkpoint_path())
    return _finish_search(config, result)


def cmd_resume(config: RunConfig) -> int:
    problem = build_problem(config, load_dataset(config))
    state, seed = resume(config.paths.checkpoint_path(), problem)
    result = simulated_annealing(problem, _grammars(config, problem), None, _schedule(config), _budget(config),
                                 seed, fit_config_from(config), _moves(config),
                                 checkpoint_path=config.paths.checkpoint_path(), state=state)
    return _finish_search(config, result)


def cmd_eval(config: RunConfig, candidate_file: Optional[Path], refit: bool = False) -> int:
    problem = build_problem(config, load_dataset(config))
    candidate = _load_candidate(candidate_file)
    prepared = problem.prepare(candidate)
    constants = candidate.constants
    if refit:
        fit = problem.fit(prepared, constants, fit_config_from(config))
        constants = fit.constants
        logger.info("refit constants: %s", [float(c) for c in constants])
    report = problem.report(prepared, constants)
    _write_json(Path(config.paths.out_dir) / LOSS_REPORT, LossReportModel.from_report(report))
    print(format_report(report))
    return EXIT_OK if report.accepted else EXIT_REJECTED


def _require_soliton(problem: Problem) -> SolitonProblem:
    if not isinstance(problem, SolitonProblem):
        raise UsageError("this command needs problem.kind = soliton")
    return problem


def cmd_gen_data(config: RunConfig, candidate_file: Optional[Path], out_path: Optional[Path]) -> int:
    problem = _require_soliton(build_problem(config))
    candidate = _load_candidate(candidate_file)
    prepared = problem.prepare(candidate)
    x = problem.grid.points
    fields = prepared.fields(problem.grid, candidate.constants)
    density = fields["n"] / problem.params.n0 - 1.0
    bad = ~(np.isfinite(density) & np.isfinite(fields["a"]))
    if np.any(bad):
        raise DataError(f"non-finite generated value at x = {float(x[np.argmax(bad)])!r}")
    path = out_path or Path(config.paths.out_dir) / "dataset.csv"
    write_columns(path, dict(zip(DATASET_HEADER, (x, density, fields["a"]))))
    print(f"wrote {len(x)} rows to {path}")
    return EXIT_OK


def cmd_plot_data(config: RunConfig, candidate_file: Optional[Path], out_path: Optional[Path]) -> int:
    dataset = load_dataset(config)
    if dataset is None:
        raise ConfigError("plot-data needs a dataset (--dataset or paths.dataset)")
    problem = _require_soliton(build_problem(config, dataset))
    if dataset.count != len(problem.grid):
        raise UsageError(f"dataset has {dataset.count} rows, grid has {len(problem.grid)} points")
    candidate = _load_candidate(candidate_file)
    prepared = problem.prepare(candidate)
    f = prepared.fields(dataset.grid, candidate.constants)
    columns = {
        "x": dataset.grid.points,
        "u": f["u"],
        "n": f["n"],
        "a": f["a"],
        "density_model": f["n"] / problem.params.n0 - 1.0,
        "density_data": dataset.density,
        "a_data": dataset.a_profile,
    }
    path = out_path or Path(config.paths.out_dir) / "plot_data.csv"
    write_columns(path, {k: columns[k] for k in PLOT_HEADER})
    print(f"wrote {dataset.count} rows to {path}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="search seed")
    common.add_argument("--workers", type=int, help="annealing workers (1 = deterministic)")
    common.add_argument("--dataset", type=Path, help="CSV with columns x,density,a")
    common.add_argument("--out", type=Path, help="output directory")

    parser = argparse.ArgumentParser(prog="pisr", description="Physics-informed symbolic regression for bright solitons")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("search", parents=[common], help="run a search")
    sub.add_parser("resume", parents=[common], help="continue an annealing run from its checkpoint")

    ev = sub.add_parser("eval", parents=[common], help="print the loss table of a candidate")
    ev.add_argument("--candidate", type=Path, help="candidate JSON (default: bundled golden candidate)")
    ev.add_argument("--fit", action="store_true", help="refit constants before scoring")

    gen = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset from a candidate")
    gen.add_argument("--candidate", type=Path)
    gen.add_argument("--output", type=Path, help="CSV path (default: <out>/dataset.csv)")

    plot = sub.add_parser("plot-data", parents=[common], help="write model vs data curves as CSV")
    plot.add_argument("--candidate", type=Path)
    plot.add_argument("--output", type=Path, help="CSV path (default: <out>/plot_data.csv)")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, dict]:
    search = {k: v for k, v in (("seed", args.seed), ("workers", args.workers)) if v is not None}
    paths = {k: v for k, v in (("dataset", args.dataset), ("out_dir", args.out)) if v is not None}
    return {"search": search, "paths": paths}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    on_startup(config, args.command)
    try:
        with time_block(args.command):
            if args.command == "search":
                return cmd_search(config)
            if args.command == "resume":
                return cmd_resume(config)
            if args.command == "eval":
                return cmd_eval(config, args.candidate, refit=args.fit)
            if args.command == "gen-data":
                return cmd_gen_data(config, args.candidate, args.output)
            return cmd_plot_data(config, args.candidate, args.output)
    except (ConfigError, DataError, ExpressionError, ReportingError, ResumeError, UsageError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PisrError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    finally:
        on_shutdown(config)


if __name__ == "__main__":
    sys.exit(main())
