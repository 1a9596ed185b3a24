from pathlib import Path

import pytest

from pisr.core.config import RunConfig, dump_config, load_config
from pisr.core.errors import ConfigError
from pisr.main import build_problem, fit_config_from
from pisr.services.problem import PlantedProblem
from pisr.services.search import grammar_from_section
from pisr.services.soliton import SolitonProblem


def test_defaults_reproduce_benchmark_setup():
    config = load_config(env={})
    assert config.problem.alpha == 0.4
    assert config.problem.rho_i == pytest.approx(1 / 1836)
    assert config.problem.triviality_threshold == 1e-3
    assert config.grid.n_points == 127
    assert config.search.driver == "annealing"
    assert config.fit.method == "lm"
    assert config.paths.checkpoint_path() == Path("runs/latest/checkpoint.json")


def test_precedence_file_env_overrides(write_config):
    path = write_config({"search": {"seed": 1, "max_evaluations": 10}})
    env = {"PISR_SEARCH_SEED": "2", "PISR_GRAMMAR_UNARY": "[sin, cos]"}
    config = load_config(path, env=env)
    assert config.search.seed == 2
    assert config.search.max_evaluations == 10
    assert config.grammar.unary == ["sin", "cos"]
    assert load_config(path, {"search": {"seed": 3}}, env=env).search.seed == 3


@pytest.mark.parametrize(
    "sections",
    [
        {"grammar": {"binary": ["xor"]}},
        {"grid": {"x_min": 1.0, "x_max": -1.0}},
        {"grid": {"x_min": -5.0, "x_max": 10.0}},
        {"search": {"cooling_ratio": 1.5}},
        {"search": {"max_evaluations": None}},
        {"problem": {"gamma0_init": 0.5}},
        {"problem": {"target": ["x", "add"]}},
        {"fit": {"method": "newton"}},
        {"search": {"unknown_knob": 1}},
    ],
)
def test_invalid_values_raise(write_config, sections):
    with pytest.raises(ConfigError):
        load_config(write_config(sections), env={})


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml", env={})
    bad = tmp_path / "list.yaml"
    bad.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad, env={})


def test_dump_then_load_is_identity(write_config, tmp_path):
    config = load_config(write_config({"grammar": {"depths": {"u": 4}}, "fit": {"constant_bounds": [-5, 5]}}), env={})
    dumped = dump_config(config, tmp_path / "effective.yaml")
    assert load_config(dumped, env={}) == config


def test_example_config_loads():
    path = Path(__file__).resolve().parents[1] / "configs" / "run.config.example.yaml"
    assert load_config(path, env={}) == load_config(env={})


def test_problem_assembly(write_config):
    soliton = build_problem(load_config(write_config({"fit": {"constant_bounds": [-50, 50]}}), env={}))
    assert isinstance(soliton, SolitonProblem)
    assert soliton.free_bounds == (-50.0, 50.0)
    assert soliton.reserved[0].bounds == (1.0, 100.0)

    planted = build_problem(RunConfig.model_validate({"problem": {"kind": "planted", "target": ["x", "tanh"]}}))
    assert isinstance(planted, PlantedProblem)
    assert planted.target.to_strings() == ["x", "tanh"]


def test_grammar_and_fit_from_config(write_config):
    config = load_config(write_config({
        "grammar": {"depth": 2, "depths": {"n": 1}, "unary": ["sech"], "binary": ["mul"], "leaves": ["variable"]},
        "fit": {"method": "quasi_newton", "max_iterations": 5},
    }), env={})
    u = grammar_from_section(config.grammar, "u")
    n = grammar_from_section(config.grammar, "n")
    assert (u.max_depth, n.max_depth) == (2, 1)
    assert u.allowed_unary == ("sech",)
    fit = fit_config_from(config)
    assert fit.method == "quasi_newton" and fit.max_iterations == 5


def test_asymmetric_grid_only_for_planted(write_config):
    sections = {"grid": {"x_min": 0.0, "x_max": 2.0, "n_points": 21}}
    with pytest.raises(ConfigError, match="x_min == -x_max"):
        load_config(write_config(sections), env={})
    planted = load_config(write_config({**sections, "problem": {"kind": "planted"}}), env={})
    assert not build_problem(planted).grid.symmetric
