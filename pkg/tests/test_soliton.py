import math

import numpy as np
import pytest

from pisr.core.errors import DataError, UsageError
from pisr.services.evaluate import Grid, eval_batch, eval_scalar
from pisr.services.expr import PostfixExpr
from pisr.services.soliton import (
    TERM_NAMES,
    Dataset,
    PlasmaParams,
    SolitonProblem,
    compose_a,
    compose_g,
    loss_boundary,
    loss_data,
    loss_eq1,
    loss_eq2,
    loss_symmetry,
    read_dataset,
    total_loss,
    triviality_check,
)
from pisr.utils.tables import write_columns

from conftest import GOLDEN_THRESHOLD


def E(*items: str) -> PostfixExpr:
    return PostfixExpr.from_strings(items)


def _candidate(u, n, problem=None):
    problem = problem or SolitonProblem()
    return problem.candidate_from({"u": E(*u), "n": E(*n)})


def _dataset_from(candidate, grid, params=PlasmaParams()):
    n = eval_batch(candidate.n_expr, grid, candidate.constants)
    a = eval_batch(compose_a(candidate.u_expr, params), grid, candidate.constants)
    return Dataset(grid, n / params.n0 - 1.0, a)


def test_compose_matches_closed_form(golden, grid):
    u = eval_batch(golden.u_expr, grid, golden.constants)
    gamma0 = golden.constants[0]
    g = eval_batch(compose_g(golden.u_expr), grid, golden.constants)
    a = eval_batch(compose_a(golden.u_expr), grid, golden.constants)
    np.testing.assert_allclose(g, np.sinh(u) - 0.4 * np.tanh(u), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(a, np.sinh(u) - 0.4 * gamma0 * np.tanh(u), rtol=1e-12, atol=1e-15)
    assert eval_scalar(compose_a(golden.u_expr), 0.0, golden.constants) == pytest.approx(0.1078, abs=1e-3)


def test_compose_a_small_u_ratio():
    gamma0 = 2.0886 / 0.4
    u = 1e-6
    assert eval_scalar(compose_a(E("x")), u, [gamma0]) / u == pytest.approx(-1.0886, abs=1e-3)


def test_compose_a_with_unit_gamma0_equals_g(grid):
    u = E("x", "sech", "0.5", "mul")
    a = eval_batch(compose_a(u), grid, [1.0])
    g = eval_batch(compose_g(u), grid, [1.0])
    np.testing.assert_allclose(a, g, rtol=1e-14, atol=1e-16)
    assert eval_scalar(compose_g(E("x")), 0.1) == pytest.approx(0.06029, abs=1e-5)


def test_compose_g_of_zero_folds_away():
    assert compose_g(E("0")).to_strings() == ["0.0"]


def test_zero_field_equations_vanish(grid, params):
    cand = _candidate(["0"], ["1"])
    assert loss_eq1(cand, params, grid) == 0.0
    assert loss_eq2(cand, params, grid) == 0.0


def test_golden_acceptance_values(golden, grid, params):
    eq7 = loss_eq1(golden, params, grid)
    assert 0.001 <= eq7 <= 0.1
    assert loss_eq2(golden, params, grid) < 1e-6
    for value in loss_boundary(golden, params, grid):
        assert value < 1e-6
    assert loss_symmetry(golden, grid) <= 1e-20


def test_golden_report(golden, soliton_problem):
    report = soliton_problem.total_loss(golden)
    assert report.accepted
    assert tuple(report.terms) == TERM_NAMES
    assert report.no_data
    assert report.terms["eq14"] == 0.0 and report.terms["eq15"] == 0.0
    assert report.total == sum(report.terms.values())
    for name, value in report.terms.items():
        assert report.mse[name] * report.count == pytest.approx(value)


def test_golden_is_trivial_under_default_floor(golden, grid):
    assert not triviality_check(golden, grid)
    assert triviality_check(golden, grid, threshold=GOLDEN_THRESHOLD)


def test_eq1_on_subgrid_is_not_larger(golden, grid, params):
    half = Grid(grid.points[::2], symmetric=True)
    assert len(half) == 64
    assert loss_eq1(golden, params, half) <= loss_eq1(golden, params, grid)


def test_eq7_literal_form_differs(golden, grid, params):
    standard = loss_eq1(golden, params, grid)
    literal = loss_eq1(golden, params, grid, eq7_form="literal")
    assert math.isfinite(literal)
    assert literal != standard


def test_eq2_rejects_non_positive_density(grid, params):
    cand = _candidate(["x", "tanh"], ["x", "cos"])
    assert math.isnan(loss_eq2(cand, params, grid))
    report = total_loss(cand, params, grid=grid)
    assert report.rejected
    assert report.reason == "non_finite:eq8"
    assert report.total == math.inf


def test_unbounded_u_has_large_boundary_terms(grid, params):
    cand = _candidate(["x"], ["x", "sech"])
    for value in loss_boundary(cand, params, grid):
        assert value > 1.0


def test_symmetry_examples(grid):
    assert loss_symmetry(_candidate(["x"], ["x", "sech"]), grid) == 0.0
    odd = loss_symmetry(_candidate(["x"], ["x"]), grid)
    assert odd == pytest.approx(float(np.sum((2 * grid.points) ** 2)))
    with pytest.raises(UsageError):
        loss_symmetry(_candidate(["x"], ["x"]), Grid.uniform(0.0, 1.0, 5))


def test_data_terms_self_consistent(golden, grid, params):
    data = _dataset_from(golden, grid)
    assert loss_data(golden, params, data) == (0.0, 0.0)
    report = SolitonProblem(params, grid, data, threshold=GOLDEN_THRESHOLD).total_loss(golden)
    assert not report.no_data
    assert report.terms["eq14"] == 0.0 and report.terms["eq15"] == 0.0


def test_data_a_offset_weighting(golden, grid, params):
    data = _dataset_from(golden, grid)
    shifted = Dataset(grid, data.density, data.a_profile - 0.1)
    density, a_term = loss_data(golden, params, shifted)
    assert density == 0.0
    assert a_term == pytest.approx(127.0, rel=1e-9)
    _, outside = loss_data(golden, params, shifted, weight_inside_square=False)
    assert outside == pytest.approx(12.7, rel=1e-9)


def test_data_on_another_grid(golden, params):
    coarse = Grid.uniform(-5.0, 5.0, 11)
    data = _dataset_from(golden, coarse)
    problem = SolitonProblem(params, dataset=data, threshold=GOLDEN_THRESHOLD)
    assert not problem.data_on_grid
    report = problem.total_loss(golden)
    assert report.terms["eq14"] == 0.0 and report.terms["eq15"] == 0.0


def test_triviality_examples(grid):
    assert not triviality_check(_candidate(["5"], ["x", "sech"]), grid)
    assert not triviality_check(_candidate(["x", "tanh"], ["1"]), grid)
    assert not triviality_check(_candidate(["x", "1e-06", "mul"], ["x", "sech"]), grid)
    assert triviality_check(_candidate(["x", "tanh"], ["x", "sech", "2", "mul"]), grid)


def test_trivial_candidate_report(grid):
    report = total_loss(_candidate(["0"], ["x", "sech"]), grid=grid)
    assert report.rejected
    assert report.reason == "trivial"
    assert all(math.isnan(v) for v in report.terms.values())


def test_gamma0_is_reserved_first():
    cand = _candidate(["c0", "x", "mul", "tanh"], ["c0", "x", "sech", "mul"])
    assert cand.constants.tolist() == [2.0, 1.0, 1.0]
    assert cand.slots_of("u") == (1,)
    assert cand.slots_of("n") == (2,)


def test_params_validation():
    with pytest.raises(UsageError):
        PlasmaParams(rho_i=0.0)
    with pytest.raises(UsageError):
        PlasmaParams(n0=-1.0)


def test_read_dataset(tmp_path, golden, grid):
    data = _dataset_from(golden, grid)
    path = write_columns(tmp_path / "d.csv", {"x": grid.points, "density": data.density, "a": data.a_profile})
    back = read_dataset(path)
    assert back.count == 127
    assert back.grid.symmetric
    np.testing.assert_array_equal(back.density, data.density)
    assert back.density[63] == pytest.approx(-0.9214, abs=1e-3)


def test_read_dataset_rejects_bad_files(tmp_path):
    with pytest.raises(DataError):
        read_dataset(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("x,density,a\n0,1,2\n0,1,2\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_dataset(bad)
