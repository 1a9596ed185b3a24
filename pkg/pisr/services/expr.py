"""Postfix expressions and the fixed-depth search grammar.

Every expression in the engine is a flat tuple of tokens in postfix (reverse
Polish) order: operands first, operator last. There is no tree type. Tree
height ("depth") is recovered with a stack scan and cached on the expression.

Token strings
-------------
The wire form of a token is a short string:

- ``x`` (or ``x1``, ``x2``... for extra variables): independent variable
- ``c0``, ``c1``...: fitted-constant slots, values live in a separate vector
- a decimal number: literal
- an operator name from `UNARY_OPS` / `BINARY_OPS`

Grammar
-------
Productions are ``leaf | (expr unary) | (expr expr binary)`` bounded by height.
Leaves are variables or fitted-constant placeholders; placeholders receive
fresh slot numbers left to right whenever an expression is produced.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from pisr.core.errors import ExpressionError, ReportingError, UsageError


class Kind(str, Enum):
    UNARY = "unary"
    BINARY = "binary"
    VARIABLE = "variable"
    LITERAL = "literal"
    CONST = "const"


def _sech(v):
    return 1.0 / np.cosh(v)


# Operator table. sinh/cosh are here because the physics residuals need them;
# the default search whitelist leaves them out.
UNARY_OPS: dict[str, Callable[[Any], Any]] = {
    "neg": np.negative,
    "log": np.log,
    "exp": np.exp,
    "cos": np.cos,
    "sin": np.sin,
    "sqrt": np.sqrt,
    "asin": np.arcsin,
    "acos": np.arccos,
    "tanh": np.tanh,
    "sech": _sech,
    "sinh": np.sinh,
    "cosh": np.cosh,
}

BINARY_OPS: dict[str, Callable[[Any, Any], Any]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": np.power,
}

INFIX_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}

_VAR_RE = re.compile(r"^x(\d*)$")
_CONST_RE = re.compile(r"^c(\d+)$")


class Token(NamedTuple):
    """One postfix token: an operator name, a variable/slot index or a literal."""

    kind: Kind
    value: Any

    @property
    def arity(self) -> int:
        if self.kind is Kind.UNARY:
            return 1
        if self.kind is Kind.BINARY:
            return 2
        return 0

    def __str__(self) -> str:
        return token_str(self)


def variable(index: int = 0) -> Token:
    return Token(Kind.VARIABLE, int(index))


def literal(value: float) -> Token:
    return Token(Kind.LITERAL, float(value))


def fit_const(slot: int) -> Token:
    return Token(Kind.CONST, int(slot))


def unary(name: str) -> Token:
    if name not in UNARY_OPS:
        raise ExpressionError(f"unknown unary operator {name!r}")
    return Token(Kind.UNARY, name)


def binary(name: str) -> Token:
    if name not in BINARY_OPS:
        raise ExpressionError(f"unknown binary operator {name!r}")
    return Token(Kind.BINARY, name)


X = variable(0)
ZERO = literal(0.0)
ONE = literal(1.0)
TWO = literal(2.0)

# Placeholder for a FitConst leaf before slot numbering.
_CONST_PLACEHOLDER = Token(Kind.CONST, -1)


def format_number(value: float) -> str:
    """Shortest exact text for a float, dropping ``.0`` on integral values."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def token_str(tok: Token) -> str:
    if tok.kind is Kind.VARIABLE:
        return "x" if tok.value == 0 else f"x{tok.value}"
    if tok.kind is Kind.CONST:
        return f"c{tok.value}"
    if tok.kind is Kind.LITERAL:
        return repr(float(tok.value))
    return str(tok.value)


def parse_token(text: str) -> Token:
    """Parse a token string (see module docs)."""
    s = str(text).strip()
    if s in UNARY_OPS:
        return unary(s)
    if s in BINARY_OPS:
        return binary(s)
    m = _VAR_RE.match(s)
    if m:
        return variable(int(m.group(1) or 0))
    m = _CONST_RE.match(s)
    if m:
        return fit_const(int(m.group(1)))
    try:
        value = float(s)
    except ValueError:
        raise ExpressionError(f"unknown token {text!r}") from None
    if not math.isfinite(value):
        raise ExpressionError(f"literal must be finite, got {text!r}")
    return literal(value)


def validate_postfix(tokens: Iterable[Any]) -> bool:
    """True iff the sequence is a well-formed postfix program.

    Scanning left to right, the operand stack must hold at least `arity`
    entries before every operator and exactly one entry at the end.
    """
    size = 0
    try:
        for tok in tokens:
            if not isinstance(tok, Token):
                return False
            arity = tok.arity
            if size < arity:
                return False
            size += 1 - arity
    except TypeError:
        return False
    return size == 1


def _height(tokens: Sequence[Token]) -> int:
    stack: list[int] = []
    for tok in tokens:
        arity = tok.arity
        if arity == 0:
            stack.append(0)
        elif arity == 1:
            stack.append(stack.pop() + 1)
        else:
            b = stack.pop()
            a = stack.pop()
            stack.append(max(a, b) + 1)
    return stack[0]


@dataclass(frozen=True)
class PostfixExpr:
    """Immutable, validated postfix expression with its cached tree height."""

    tokens: tuple[Token, ...]
    depth: int = field(init=False, compare=False)

    def __post_init__(self) -> None:
        tokens = tuple(self.tokens)
        if not validate_postfix(tokens):
            raise ExpressionError(f"invalid postfix expression: {' '.join(map(str, tokens))}")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "depth", _height(tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    def __str__(self) -> str:
        return " ".join(self.to_strings())

    @classmethod
    def from_strings(cls, items: Iterable[str]) -> "PostfixExpr":
        return cls(tuple(parse_token(s) for s in items))

    def to_strings(self) -> list[str]:
        return [token_str(t) for t in self.tokens]

    def const_slots(self) -> tuple[int, ...]:
        return tuple(sorted({t.value for t in self.tokens if t.kind is Kind.CONST}))

    def uses_variable(self, index: int = 0) -> bool:
        return any(t.kind is Kind.VARIABLE and t.value == index for t in self.tokens)


def depth_of(expr: PostfixExpr | Sequence[Token]) -> int:
    """Tree height of an expression; a single leaf has depth 0."""
    if isinstance(expr, PostfixExpr):
        return expr.depth
    return PostfixExpr(tuple(expr)).depth


def renumber_constants(tokens: Iterable[Token], start: int = 0) -> tuple[Token, ...]:
    """Give every FitConst token a fresh slot, left to right from `start`."""
    out = []
    slot = start
    for tok in tokens:
        if tok.kind is Kind.CONST:
            out.append(fit_const(slot))
            slot += 1
        else:
            out.append(tok)
    return tuple(out)


@dataclass(frozen=True)
class Grammar:
    """Fixed-depth production rules and operator whitelists for the search.

    Attributes
    ----------
    max_depth : int
        Largest tree height the grammar produces.
    allowed_unary, allowed_binary : tuple[str, ...]
        Operator names from the operator table; order fixes enumeration order.
    num_variables : int
        Number of independent variables (1 for the soliton problem: x).
    leaf_kinds : tuple[Kind, ...]
        Subset of {VARIABLE, CONST}.
    rng_weights : mapping
        Relative weights of the ``unary``/``binary`` productions and of the
        ``variable``/``const`` leaves when sampling.
    exact_depth : bool
        When set, enumeration yields only expressions of height == depth.
    """

    max_depth: int
    allowed_unary: tuple[str, ...] = ()
    allowed_binary: tuple[str, ...] = ()
    num_variables: int = 1
    leaf_kinds: tuple[Kind, ...] = (Kind.VARIABLE, Kind.CONST)
    rng_weights: Mapping[str, float] = field(
        default_factory=lambda: {"unary": 1.0, "binary": 1.0, "variable": 1.0, "const": 1.0},
        compare=False,
    )
    exact_depth: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "allowed_unary", tuple(self.allowed_unary))
        object.__setattr__(self, "allowed_binary", tuple(self.allowed_binary))
        object.__setattr__(self, "leaf_kinds", tuple(Kind(k) for k in self.leaf_kinds))
        if self.max_depth < 1:
            raise UsageError("max_depth must be >= 1")
        if self.num_variables < 1:
            raise UsageError("num_variables must be >= 1")
        for op in self.allowed_unary:
            if op not in UNARY_OPS:
                raise UsageError(f"unknown unary operator {op!r}")
        for op in self.allowed_binary:
            if op not in BINARY_OPS:
                raise UsageError(f"unknown binary operator {op!r}")
        if not self.leaf_kinds or any(k not in (Kind.VARIABLE, Kind.CONST) for k in self.leaf_kinds):
            raise UsageError("leaf_kinds must be a non-empty subset of {variable, const}")

    @property
    def capacity(self) -> int:
        """Token capacity of the largest tree: 2^(max_depth+1) - 1."""
        return 2 ** (self.max_depth + 1) - 1

    def leaf_tokens(self) -> list[Token]:
        leaves: list[Token] = []
        if Kind.VARIABLE in self.leaf_kinds:
            leaves.extend(variable(i) for i in range(self.num_variables))
        if Kind.CONST in self.leaf_kinds:
            leaves.append(_CONST_PLACEHOLDER)
        return leaves

    def count(self, depth: int) -> int:
        """Number of expressions of height <= depth (height == depth if exact)."""
        n_leaves = len(self.leaf_tokens())
        n_u, n_b = len(self.allowed_unary), len(self.allowed_binary)
        counts = [n_leaves]
        for _ in range(depth):
            prev = counts[-1]
            counts.append(n_leaves + n_u * prev + n_b * prev * prev)
        if self.exact_depth and depth > 0:
            return counts[depth] - counts[depth - 1]
        return counts[depth]


def _check_depth(grammar: Grammar, depth: int) -> None:
    if depth < 0 or depth > grammar.max_depth:
        raise UsageError(f"depth {depth} outside [0, {grammar.max_depth}]")


def _grow(grammar: Grammar, prev: list[tuple[Token, ...]]) -> Iterator[tuple[Token, ...]]:
    for leaf in grammar.leaf_tokens():
        yield (leaf,)
    for name in grammar.allowed_unary:
        op = unary(name)
        for e in prev:
            yield e + (op,)
    for name in grammar.allowed_binary:
        op = binary(name)
        for a in prev:
            for b in prev:
                yield a + b + (op,)


def enumerate_expressions(
    grammar: Grammar, depth: int, exact: bool | None = None
) -> Iterator[PostfixExpr]:
    """Yield every structurally distinct expression of height <= `depth`.

    The order is deterministic: leaves, then unary productions, then binary
    productions, each over the previous level in its own order. The stream can
    be astronomically long; callers apply their own budget.
    """
    _check_depth(grammar, depth)
    exact = grammar.exact_depth if exact is None else exact

    levels: list[list[tuple[Token, ...]]] = [[(leaf,) for leaf in grammar.leaf_tokens()]]
    for _ in range(1, depth):
        levels.append(list(_grow(grammar, levels[-1])))

    stream: Iterable[tuple[Token, ...]] = levels[0] if depth == 0 else _grow(grammar, levels[-1])
    for raw in stream:
        expr = PostfixExpr(renumber_constants(raw))
        if exact and expr.depth != depth:
            continue
        yield expr


def _pick(rng: np.random.Generator, items: Sequence[Any]) -> Any:
    return items[int(rng.integers(len(items)))]


def _sample_leaf(grammar: Grammar, rng: np.random.Generator) -> Token:
    w_var = grammar.rng_weights.get("variable", 1.0) if Kind.VARIABLE in grammar.leaf_kinds else 0.0
    w_const = grammar.rng_weights.get("const", 1.0) if Kind.CONST in grammar.leaf_kinds else 0.0
    if w_var + w_const <= 0:
        raise UsageError("leaf sampling weights sum to zero")
    if rng.random() * (w_var + w_const) < w_var:
        return variable(int(rng.integers(grammar.num_variables)))
    return _CONST_PLACEHOLDER


def _sample_into(grammar: Grammar, rng: np.random.Generator, height: int, out: list[Token]) -> None:
    if height == 0:
        out.append(_sample_leaf(grammar, rng))
        return
    w_u = grammar.rng_weights.get("unary", 1.0) if grammar.allowed_unary else 0.0
    w_b = grammar.rng_weights.get("binary", 1.0) if grammar.allowed_binary else 0.0
    if w_u + w_b <= 0:
        raise UsageError(f"grammar has no operators to reach depth {height}")
    if rng.random() * (w_u + w_b) < w_u:
        _sample_into(grammar, rng, height - 1, out)
        out.append(unary(_pick(rng, grammar.allowed_unary)))
        return
    # One child carries the full remaining height, the other any height below it.
    force_left = rng.random() < 0.5
    other = int(rng.integers(height))
    left, right = (height - 1, other) if force_left else (other, height - 1)
    _sample_into(grammar, rng, left, out)
    _sample_into(grammar, rng, right, out)
    out.append(binary(_pick(rng, grammar.allowed_binary)))


def sample_expression(grammar: Grammar, rng: np.random.Generator, depth: int) -> PostfixExpr:
    """Draw a random expression of height exactly `depth`; deterministic per seed."""
    _check_depth(grammar, depth)
    out: list[Token] = []
    _sample_into(grammar, rng, depth, out)
    return PostfixExpr(renumber_constants(out))


def _alternatives(tok: Token, grammar: Grammar) -> list[Token]:
    if tok.kind is Kind.UNARY:
        return [unary(op) for op in grammar.allowed_unary if op != tok.value]
    if tok.kind is Kind.BINARY:
        return [binary(op) for op in grammar.allowed_binary if op != tok.value]
    if tok.kind is Kind.VARIABLE:
        return [leaf for leaf in grammar.leaf_tokens() if leaf != tok]
    if tok.kind is Kind.CONST:
        return [leaf for leaf in grammar.leaf_tokens() if leaf.kind is Kind.VARIABLE]
    return []


def perturb(
    expr: PostfixExpr,
    grammar: Grammar,
    rng: np.random.Generator,
    jitter_probability: float = 0.2,
    sigma: float = 0.1,
) -> PostfixExpr:
    """Depth- and length-preserving move.

    With probability `jitter_probability` one Literal is multiplied by a
    log-normal factor; otherwise one operator or leaf is swapped for a
    different one of the same arity. Leaves move between the kinds the grammar
    allows, so ``c0 x mul`` can become ``x x mul`` or ``c0 c1 mul``. A new
    FitConst leaf takes the slot after the largest one already in `expr`;
    the caller re-lays out the constant vector. FitConst values live in the
    candidate's constant vector, see `jitter_constants`. When no move applies
    the input is returned unchanged.
    """
    tokens = list(expr.tokens)
    jitter = rng.random() < jitter_probability
    literals = [i for i, t in enumerate(tokens) if t.kind is Kind.LITERAL]
    if jitter and literals:
        i = _pick(rng, literals)
        tokens[i] = literal(tokens[i].value * math.exp(sigma * rng.standard_normal()))
        return PostfixExpr(tuple(tokens))

    moves = [(i, alts) for i, t in enumerate(tokens) if (alts := _alternatives(t, grammar))]
    if not moves:
        return expr
    i, alts = _pick(rng, moves)
    tokens[i] = _pick(rng, alts)
    if tokens[i] == _CONST_PLACEHOLDER:
        tokens[i] = fit_const(max(expr.const_slots(), default=-1) + 1)
    return PostfixExpr(tuple(tokens))


def jitter_constants(
    constants: np.ndarray, slots: Sequence[int], rng: np.random.Generator, sigma: float = 0.1
) -> np.ndarray:
    """Multiply one of `slots` by a log-normal factor; returns a new vector."""
    out = np.array(constants, dtype=float, copy=True)
    if len(slots):
        slot = _pick(rng, list(slots))
        out[slot] *= math.exp(sigma * rng.standard_normal())
    return out


def to_infix(expr: PostfixExpr, constants: Sequence[float] = ()) -> str:
    """Fully parenthesised infix text for display (not meant to be parsed)."""
    stack: list[str] = []
    for tok in expr.tokens:
        if tok.kind is Kind.VARIABLE:
            stack.append(token_str(tok))
        elif tok.kind is Kind.LITERAL:
            stack.append(format_number(tok.value))
        elif tok.kind is Kind.CONST:
            if tok.value >= len(constants):
                raise ReportingError(f"no value for constant slot c{tok.value}")
            stack.append(format_number(constants[tok.value]))
        elif tok.kind is Kind.UNARY:
            a = stack.pop()
            stack.append(f"(-{a})" if tok.value == "neg" else f"{tok.value}({a})")
        else:
            b = stack.pop()
            a = stack.pop()
            stack.append(f"({a} {INFIX_SYMBOLS[tok.value]} {b})")
    return stack[0]


def expression_to_json(expr: PostfixExpr, constants: Sequence[float] = ()) -> dict[str, Any]:
    return {"postfix": expr.to_strings(), "constants": [float(c) for c in constants]}


def expression_from_json(payload: Mapping[str, Any]) -> tuple[PostfixExpr, np.ndarray]:
    try:
        expr = PostfixExpr.from_strings(payload["postfix"])
        constants = np.asarray(payload.get("constants", []), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ExpressionError(f"malformed expression payload: {exc}") from exc
    return expr, constants
