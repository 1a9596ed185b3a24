import time

import numpy as np
import pytest

from pisr.services.evaluate import eval_batch, eval_scalar
from pisr.services.expr import UNARY_OPS, Grammar, Kind, PostfixExpr, sample_expression, validate_postfix
from pisr.services.symdiff import DIFF_RULES_UNARY, differentiate, second_derivative, simplify

FULL_UNARY = tuple(UNARY_OPS)
FULL_BINARY = ("add", "sub", "mul", "div", "pow")


def E(*items: str) -> PostfixExpr:
    return PostfixExpr.from_strings(items)


def _corpus(n: int, seed: int = 2024):
    """Random expressions of depth <= 4, each with positive values for its constant slots."""
    grammar = Grammar(max_depth=4, allowed_unary=FULL_UNARY, allowed_binary=FULL_BINARY,
                      leaf_kinds=(Kind.VARIABLE, Kind.CONST))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        expr = sample_expression(grammar, rng, int(rng.integers(0, 5)))
        consts = rng.uniform(0.5, 2.0, size=len(expr.const_slots()))
        out.append((expr, consts))
    return out, rng


def test_every_operator_has_a_rule():
    assert set(DIFF_RULES_UNARY) == set(UNARY_OPS)


def test_derivative_examples():
    assert differentiate(E("x")).to_strings() == ["1.0"]
    assert differentiate(E("c0")).to_strings() == ["0.0"]
    assert eval_scalar(differentiate(E("x", "tanh")), 0.5) == pytest.approx(0.7864477, abs=1e-6)
    assert eval_scalar(differentiate(E("x", "x", "mul")), 3.0) == pytest.approx(6.0)
    assert eval_scalar(differentiate(E("x", "sinh")), 0.5) == pytest.approx(1.1276260, abs=1e-6)
    assert eval_scalar(differentiate(E("x", "cosh")), 0.5) == pytest.approx(0.5210953, abs=1e-6)


def test_second_derivative_examples():
    assert second_derivative(E("x")).to_strings() == ["0.0"]
    assert eval_scalar(second_derivative(E("x", "sin")), 1.0) == pytest.approx(-0.841471, abs=1e-6)
    assert eval_scalar(second_derivative(E("x", "sech")), 0.0) == pytest.approx(-1.0, abs=1e-6)


@pytest.mark.parametrize("mode", ["post", "splice"])
def test_simplify_modes_agree_in_value(mode):
    expr = E("x", "x", "mul", "sin", "x", "sech", "div")
    d = differentiate(expr, simplify_mode=mode)
    xs = np.linspace(-1.5, 1.5, 7)
    ref = differentiate(expr)
    np.testing.assert_allclose(eval_batch(d, xs), eval_batch(ref, xs), rtol=1e-12, atol=1e-12)


def test_derivative_does_not_mutate_input():
    expr = E("x", "tanh", "x", "mul")
    before = expr.tokens
    differentiate(expr)
    assert expr.tokens == before


def test_finite_difference_agreement_on_random_corpus():
    corpus, rng = _corpus(1000)
    h = 1e-5
    start = time.perf_counter()
    checked = 0
    for expr, consts in corpus:
        d = differentiate(expr)
        assert validate_postfix(d.tokens)
        xs = rng.uniform(-2.0, 2.0, size=10)
        sym = eval_batch(d, xs, consts)
        f0 = eval_batch(expr, xs, consts)
        fd = (eval_batch(expr, xs + h, consts) - eval_batch(expr, xs - h, consts)) / (2 * h)
        fd_wide = (eval_batch(expr, xs + 2 * h, consts) - eval_batch(expr, xs - 2 * h, consts)) / (4 * h)
        # Skip points next to poles and domain edges: there the step-h and
        # step-2h differences disagree, so the difference itself is unreliable.
        with np.errstate(all="ignore"):
            smooth = np.abs(fd - fd_wide) <= 1e-7 * (1 + np.abs(fd))
        ok = np.isfinite(sym) & np.isfinite(fd) & np.isfinite(fd_wide) & (np.abs(f0) < 1e5) & smooth
        if np.any(ok):
            assert np.all(np.abs(sym[ok] - fd[ok]) <= 1e-5 * (1 + np.abs(sym[ok]))), (str(expr), xs[ok])
            checked += 1
    assert checked > 300
    assert time.perf_counter() - start < 60


def test_simplify_examples():
    assert simplify(E("x", "0", "add")).to_strings() == ["x"]
    assert simplify(E("2", "3", "mul")).to_strings() == ["6.0"]
    assert simplify(E("x", "1", "pow")).to_strings() == ["x"]
    assert simplify(E("x", "x", "sub")).to_strings() == ["0.0"]
    assert simplify(E("x", "neg", "neg")).to_strings() == ["x"]
    assert simplify(E("0", "0", "pow")).to_strings() == ["1.0"]
    assert simplify(E("0", "x", "sin", "div")).to_strings() == ["0.0"]


def test_simplify_keeps_non_finite_folds_symbolic():
    assert simplify(E("1", "0", "div")).to_strings() == ["1.0", "0.0", "div"]


def test_simplify_soundness_monotonicity_idempotence():
    corpus, rng = _corpus(1000, seed=7)
    for expr, consts in corpus:
        s = simplify(expr)
        assert validate_postfix(s.tokens)
        assert len(s) <= len(expr)
        assert simplify(s).tokens == s.tokens
        xs = rng.uniform(-2.0, 2.0, size=10)
        v = eval_batch(expr, xs, consts)
        w = eval_batch(s, xs, consts)
        ok = np.isfinite(v)
        assert np.all(np.abs(w[ok] - v[ok]) <= 1e-12 * (1 + np.abs(v[ok]))), str(expr)
