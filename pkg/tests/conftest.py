from pathlib import Path
from typing import Any

import numpy as np
import pytest
import yaml

from pisr.services.evaluate import Grid
from pisr.services.expr import Grammar, Kind, PostfixExpr
from pisr.services.problem import PlantedProblem
from pisr.services.soliton import PlasmaParams, SolitonProblem, load_golden

# The published pair sits just under the 1e-3 variance floor on [-10, 10]
# (Var(u') is about 3e-4), so report-level checks on it use this floor.
GOLDEN_THRESHOLD = 1e-4


@pytest.fixture(scope="session")
def grid() -> Grid:
    return Grid.uniform(-10.0, 10.0, 127)


@pytest.fixture(scope="session")
def params() -> PlasmaParams:
    return PlasmaParams()


@pytest.fixture(scope="session")
def golden():
    return load_golden()


@pytest.fixture(scope="session")
def soliton_problem(grid: Grid, params: PlasmaParams) -> SolitonProblem:
    return SolitonProblem(params, grid, threshold=GOLDEN_THRESHOLD)


@pytest.fixture(scope="session")
def planted_problem(grid: Grid) -> PlantedProblem:
    return PlantedProblem(PostfixExpr.from_strings(["x", "sech"]), grid)


@pytest.fixture(scope="session")
def planted_grammar() -> Grammar:
    """{x} leaves, sech/tanh, add/mul, depth <= 2: 61 expressions."""
    return Grammar(
        max_depth=2,
        allowed_unary=("sech", "tanh"),
        allowed_binary=("add", "mul"),
        leaf_kinds=(Kind.VARIABLE,),
    )


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture()
def write_config(tmp_path: Path):
    """Write a YAML run config under tmp_path; out_dir defaults to tmp_path/out."""

    def _write(sections: dict[str, Any] | None = None, name: str = "run.yaml") -> Path:
        data = {k: dict(v) for k, v in (sections or {}).items()}
        data.setdefault("paths", {}).setdefault("out_dir", str(tmp_path / "out"))
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data), encoding="utf-8")
        return path

    return _write
