"""Array-based symbolic differentiation and simplification.

Both routines are single left-to-right passes over a postfix token array. No
expression tree is ever built: the pass keeps a stack of token *slices*

- `simplify`: one slice per pending operand, already simplified;
- `differentiate`: a (value slice, derivative slice) pair per operand.

An operator pops its operands' slices and pushes the slice produced by its
rule template (a concatenation of operand slices and fixed tokens).

Simplification rules
--------------------
Constant folding of literal-only operations, plus

    u+0, 0+u -> u          u-0 -> u         0-u -> neg u     u-u -> 0
    u*1, 1*u -> u          u*0, 0*u -> 0
    u/1 -> u               0/u -> 0         u/u -> 1
    u^1 -> u               u^0 -> 1 (0^0 too)                1^u -> 1
    neg(neg u) -> u

`u-u` and `u/u` only fire on token-identical slices. The rules never add
tokens, and the pass repeats until nothing changes so the result is a fixed
point.
"""
from __future__ import annotations

import math
from typing import Callable, Literal as TypingLiteral

import numpy as np

from pisr.services.expr import (
    BINARY_OPS,
    ONE,
    TWO,
    UNARY_OPS,
    ZERO,
    Kind,
    PostfixExpr,
    Token,
    binary,
    literal,
    unary,
)

Slice = tuple[Token, ...]

_ZERO: Slice = (ZERO,)
_ONE: Slice = (ONE,)

_ADD = binary("add")
_SUB = binary("sub")
_MUL = binary("mul")
_DIV = binary("div")
_POW = binary("pow")
_NEG = unary("neg")


def _is_lit(s: Slice, value: float | None = None) -> bool:
    if len(s) != 1 or s[0].kind is not Kind.LITERAL:
        return False
    return value is None or s[0].value == value


def _fold_unary(name: str, a: float) -> float | None:
    with np.errstate(all="ignore"):
        v = float(UNARY_OPS[name](np.float64(a)))
    return v if math.isfinite(v) else None


def _fold_binary(name: str, a: float, b: float) -> float | None:
    with np.errstate(all="ignore"):
        v = float(BINARY_OPS[name](np.float64(a), np.float64(b)))
    return v if math.isfinite(v) else None


def _apply_unary(name: str, a: Slice) -> Slice:
    if _is_lit(a):
        folded = _fold_unary(name, a[0].value)
        if folded is not None:
            return (literal(folded),)
    if name == "neg" and a[-1] == _NEG:
        return a[:-1]
    return a + (unary(name),)


def _apply_binary(name: str, a: Slice, b: Slice) -> Slice:
    if _is_lit(a) and _is_lit(b):
        folded = _fold_binary(name, a[0].value, b[0].value)
        if folded is not None:
            return (literal(folded),)
    if name == "add":
        if _is_lit(a, 0.0):
            return b
        if _is_lit(b, 0.0):
            return a
    elif name == "sub":
        if _is_lit(b, 0.0):
            return a
        if a == b:
            return _ZERO
        if _is_lit(a, 0.0):
            return _apply_unary("neg", b)
    elif name == "mul":
        if _is_lit(a, 0.0) or _is_lit(b, 0.0):
            return _ZERO
        if _is_lit(a, 1.0):
            return b
        if _is_lit(b, 1.0):
            return a
    elif name == "div":
        if _is_lit(b, 1.0):
            return a
        if _is_lit(a, 0.0):
            return _ZERO
        if a == b:
            return _ONE
    elif name == "pow":
        if _is_lit(b, 1.0):
            return a
        if _is_lit(b, 0.0) or _is_lit(a, 1.0):
            return _ONE
    return a + b + (binary(name),)


def _simplify_once(tokens: Slice) -> Slice:
    stack: list[Slice] = []
    for tok in tokens:
        if tok.kind is Kind.UNARY:
            stack.append(_apply_unary(tok.value, stack.pop()))
        elif tok.kind is Kind.BINARY:
            b = stack.pop()
            a = stack.pop()
            stack.append(_apply_binary(tok.value, a, b))
        else:
            stack.append((tok,))
    return stack[0]


def _simplify_tokens(tokens: Slice) -> Slice:
    while True:
        out = _simplify_once(tokens)
        if out == tokens:
            return out
        tokens = out


def simplify(expr: PostfixExpr) -> PostfixExpr:
    """Node-count-reducing simplification; never returns more tokens than given."""
    return PostfixExpr(_simplify_tokens(expr.tokens))


# Derivative templates. `u` is the operand slice, `du` its derivative slice.
UnaryRule = Callable[[Slice, Slice], Slice]
BinaryRule = Callable[[Slice, Slice, Slice, Slice], Slice]


def _mul(a: Slice, b: Slice) -> Slice:
    return a + b + (_MUL,)


DIFF_RULES_UNARY: dict[str, UnaryRule] = {
    "neg": lambda u, du: du + (_NEG,),
    "sin": lambda u, du: _mul(u + (unary("cos"),), du),
    "cos": lambda u, du: _mul(u + (unary("sin"), _NEG), du),
    "tanh": lambda u, du: _mul(u + (unary("sech"), TWO, _POW), du),
    "sech": lambda u, du: _mul(u + (unary("sech"),) + u + (unary("tanh"), _MUL, _NEG), du),
    "sinh": lambda u, du: _mul(u + (unary("cosh"),), du),
    "cosh": lambda u, du: _mul(u + (unary("sinh"),), du),
    "log": lambda u, du: du + u + (_DIV,),
    "exp": lambda u, du: _mul(u + (unary("exp"),), du),
    "sqrt": lambda u, du: du + (TWO,) + u + (unary("sqrt"), _MUL, _DIV),
    "asin": lambda u, du: du + (ONE,) + u + (TWO, _POW, _SUB, unary("sqrt"), _DIV),
    "acos": lambda u, du: du + (ONE,) + u + (TWO, _POW, _SUB, unary("sqrt"), _DIV, _NEG),
}

DIFF_RULES_BINARY: dict[str, BinaryRule] = {
    "add": lambda a, da, b, db: da + db + (_ADD,),
    "sub": lambda a, da, b, db: da + db + (_SUB,),
    "mul": lambda a, da, b, db: _mul(da, b) + _mul(a, db) + (_ADD,),
    "div": lambda a, da, b, db: _mul(da, b) + _mul(a, db) + (_SUB,) + b + (TWO, _POW, _DIV),
    # d(a^b) = a^b * (b' log a + b a' / a)
    "pow": lambda a, da, b, db: a
    + b
    + (_POW,)
    + _mul(db, a + (unary("log"),))
    + _mul(b, da)
    + a
    + (_DIV, _ADD, _MUL),
}


def differentiate(
    expr: PostfixExpr, var: int = 0, simplify_mode: TypingLiteral["post", "splice"] = "post"
) -> PostfixExpr:
    """Symbolic partial derivative of `expr` with respect to variable `var`.

    Parameters
    ----------
    simplify_mode : {"post", "splice"}
        ``"post"`` simplifies the finished derivative once; ``"splice"`` also
        simplifies every spliced derivative slice as it is built. Both return
        a simplified expression.
    """
    splice = simplify_mode == "splice"
    stack: list[tuple[Slice, Slice]] = []
    for tok in expr.tokens:
        if tok.kind is Kind.VARIABLE:
            stack.append(((tok,), _ONE if tok.value == var else _ZERO))
        elif tok.kind in (Kind.LITERAL, Kind.CONST):
            stack.append(((tok,), _ZERO))
        elif tok.kind is Kind.UNARY:
            u, du = stack.pop()
            d = _ZERO if du == _ZERO else DIFF_RULES_UNARY[tok.value](u, du)
            stack.append((u + (tok,), _simplify_tokens(d) if splice else d))
        else:
            b, db = stack.pop()
            a, da = stack.pop()
            if da == _ZERO and db == _ZERO:
                d = _ZERO
            else:
                d = DIFF_RULES_BINARY[tok.value](a, da, b, db)
            stack.append((a + b + (tok,), _simplify_tokens(d) if splice else d))
    return PostfixExpr(_simplify_tokens(stack[0][1]))


def second_derivative(
    expr: PostfixExpr, var: int = 0, simplify_mode: TypingLiteral["post", "splice"] = "post"
) -> PostfixExpr:
    """Differentiate twice, simplifying between and after the passes."""
    first = differentiate(expr, var, simplify_mode)
    return differentiate(first, var, simplify_mode)
