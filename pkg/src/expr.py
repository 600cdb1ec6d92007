"""
Scalar field expressions over chart coordinates x1..xn.

A small recursive-descent parser, a canonical printer, IEEE evaluation
(scalar and vectorized), exact symbolic differentiation and substitution.
Every node is an immutable dataclass, so expressions can be shared freely.

Grammar:
    expr  := term (("+"|"-") term)*
    term  := factor (("*"|"/") factor)*
    factor:= ("-")? power
    power := atom ("^" integer)?
    atom  := number | ident | func "(" expr ")" | "(" expr ")"
"""

import logging
import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

logger = logging.getLogger('apaths')

FUNCTIONS = ('sin', 'cos', 'exp')


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class DimensionError(ExprError):
    pass


class ExprEvalError(ArithmeticError):
    pass


class DivisionByZeroError(ExprEvalError):
    pass


class ExprDomainError(ExprEvalError):
    pass


@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self):
        return print_expr(self)


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, x1 is Var(1)

    def __str__(self):
        return print_expr(self)


@dataclass(frozen=True)
class Neg:
    operand: 'Expr'

    def __str__(self):
        return print_expr(self)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: 'Expr'
    right: 'Expr'

    def __str__(self):
        return print_expr(self)


@dataclass(frozen=True)
class Pow:
    base: 'Expr'
    exponent: int

    def __str__(self):
        return print_expr(self)


@dataclass(frozen=True)
class Call:
    func: str
    arg: 'Expr'

    def __str__(self):
        return print_expr(self)


Expr = Union[Num, Var, Neg, BinOp, Pow, Call]

ZERO = Num(0.0)
ONE = Num(1.0)


# ---------------------------------------------------------------------------
# Tokenizer and parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num', 'ident', 'op', 'end'
    text: str
    offset: int


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            offset = len(source[:pos].encode('utf-8'))
            raise ExprSyntaxError(f"Unexpected character {source[pos]!r}", offset)
        kind = match.lastgroup
        if kind != 'ws':
            offset = len(source[:pos].encode('utf-8'))
            tokens.append(_Token(kind, match.group(), offset))
        pos = match.end()
    tokens.append(_Token('end', '', len(source.encode('utf-8'))))
    return tokens


class _Parser:
    def __init__(self, source, dim):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect(self, text):
        token = self.advance()
        if token.text != text:
            found = token.text or 'end of input'
            raise ExprSyntaxError(f"Expected {text!r}, found {found!r}", token.offset)
        return token

    def parse(self):
        node = self.expr()
        token = self.peek()
        if token.kind != 'end':
            raise ExprSyntaxError(f"Unexpected token {token.text!r}", token.offset)
        return node

    def expr(self):
        node = self.term()
        while self.peek().text in ('+', '-') and self.peek().kind == 'op':
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek().text in ('*', '/') and self.peek().kind == 'op':
            op = self.advance().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        if self.peek().kind == 'op' and self.peek().text == '-':
            self.advance()
            return Neg(self.power())
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek().kind == 'op' and self.peek().text == '^':
            self.advance()
            token = self.advance()
            if token.kind != 'num' or not token.text.isdigit():
                raise ExprSyntaxError("Exponent must be a non-negative integer", token.offset)
            node = Pow(node, int(token.text))
        return node

    def atom(self):
        token = self.advance()
        if token.kind == 'num':
            return Num(float(token.text))
        if token.kind == 'ident':
            return self.identifier(token)
        if token.kind == 'op' and token.text == '(':
            node = self.expr()
            self.expect(')')
            return node
        found = token.text or 'end of input'
        raise ExprSyntaxError(f"Unexpected token {found!r}", token.offset)

    def identifier(self, token):
        name = token.text
        if name in FUNCTIONS:
            self.expect('(')
            arg = self.expr()
            self.expect(')')
            return Call(name, arg)
        match = re.fullmatch(r"x([1-9][0-9]*)", name)
        if match is None:
            raise UnknownIdentifierError(f"Unknown identifier {name!r}", token.offset)
        index = int(match.group(1))
        if index > self.dim:
            raise DimensionError(
                f"Variable {name} exceeds chart dimension {self.dim} (byte offset {token.offset})")
        return Var(index)


def parse_expr(source, dim):
    """
    Parse an expression string over the coordinates x1..x<dim>.

    Args:
        source: Expression text
        dim: Chart dimension (0 allows constant expressions only)

    Returns:
        Expr: The parsed syntax tree

    Raises:
        ExprSyntaxError: On malformed input (carries the byte offset)
        UnknownIdentifierError: On names other than x<i>, sin, cos, exp
        DimensionError: If a variable index exceeds dim
    """
    if dim < 0:
        raise DimensionError(f"Chart dimension must be non-negative, got {dim}")
    return _Parser(source, dim).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_SUM, _PRODUCT, _UNARY, _POWER, _ATOM = 1, 2, 3, 4, 5


def _level(e):
    if isinstance(e, BinOp):
        return _SUM if e.op in '+-' else _PRODUCT
    if isinstance(e, Neg):
        return _UNARY
    if isinstance(e, Pow):
        return _POWER
    return _ATOM


def _render(e, min_level):
    if isinstance(e, Num):
        text = repr(float(e.value))
    elif isinstance(e, Var):
        text = f"x{e.index}"
    elif isinstance(e, Call):
        text = f"{e.func}({_render(e.arg, _SUM)})"
    elif isinstance(e, Neg):
        text = "-" + _render(e.operand, _POWER)
    elif isinstance(e, Pow):
        text = f"{_render(e.base, _ATOM)}^{e.exponent}"
    elif isinstance(e, BinOp):
        if e.op in '+-':
            text = f"{_render(e.left, _SUM)} {e.op} {_render(e.right, _PRODUCT)}"
        else:
            text = f"{_render(e.left, _PRODUCT)}{e.op}{_render(e.right, _UNARY)}"
    else:
        raise TypeError(f"Not an expression node: {e!r}")
    if _level(e) < min_level:
        return f"({text})"
    return text


def print_expr(e):
    """Render with minimal parentheses; parse_expr(print_expr(e)) == e."""
    return _render(e, _SUM)


# ---------------------------------------------------------------------------
# Inspection
# ---------------------------------------------------------------------------

def max_variable(e):
    """Largest variable index used by e (0 for constants)."""
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Num):
        return 0
    if isinstance(e, (Neg, Call)):
        return max_variable(e.operand if isinstance(e, Neg) else e.arg)
    if isinstance(e, Pow):
        return max_variable(e.base)
    return max(max_variable(e.left), max_variable(e.right))


def is_constant(e):
    return max_variable(e) == 0


def node_count(e):
    if isinstance(e, (Num, Var)):
        return 1
    if isinstance(e, Neg):
        return 1 + node_count(e.operand)
    if isinstance(e, Call):
        return 1 + node_count(e.arg)
    if isinstance(e, Pow):
        return 1 + node_count(e.base)
    return 1 + node_count(e.left) + node_count(e.right)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_SCALAR_FUNCS = {'sin': math.sin, 'cos': math.cos, 'exp': math.exp}
_ARRAY_FUNCS = {'sin': np.sin, 'cos': np.cos, 'exp': np.exp}


def _eval(e, point):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return float(point[e.index - 1])
    if isinstance(e, Neg):
        return -_eval(e.operand, point)
    if isinstance(e, Call):
        return _SCALAR_FUNCS[e.func](_eval(e.arg, point))
    if isinstance(e, Pow):
        return _eval(e.base, point) ** e.exponent
    left = _eval(e.left, point)
    right = _eval(e.right, point)
    if e.op == '+':
        return left + right
    if e.op == '-':
        return left - right
    if e.op == '*':
        return left * right
    if right == 0.0:
        raise DivisionByZeroError(f"Division by zero in {print_expr(e)}")
    return left / right


def eval_expr(e, point):
    """
    Evaluate e at a point in double precision, left operand first.

    Args:
        e: Expression
        point: Coordinates (length at least max_variable(e))

    Returns:
        float: The value

    Raises:
        DimensionError: If the point is shorter than the variables used
        DivisionByZeroError: If a divisor evaluates to zero
        ExprDomainError: On overflow or a non-finite result
    """
    if len(point) < max_variable(e):
        raise DimensionError(
            f"Point of dimension {len(point)} cannot evaluate x{max_variable(e)}")
    try:
        value = _eval(e, point)
    except (OverflowError, ValueError) as exc:
        raise ExprDomainError(f"Domain error evaluating {print_expr(e)}: {exc}") from exc
    if not math.isfinite(value):
        raise ExprDomainError(f"Non-finite value evaluating {print_expr(e)}")
    return value


def _eval_array(e, points, shape):
    if isinstance(e, Num):
        return np.full(shape, e.value)
    if isinstance(e, Var):
        return points[..., e.index - 1]
    if isinstance(e, Neg):
        return -_eval_array(e.operand, points, shape)
    if isinstance(e, Call):
        return _ARRAY_FUNCS[e.func](_eval_array(e.arg, points, shape))
    if isinstance(e, Pow):
        return _eval_array(e.base, points, shape) ** e.exponent
    left = _eval_array(e.left, points, shape)
    right = _eval_array(e.right, points, shape)
    if e.op == '+':
        return left + right
    if e.op == '-':
        return left - right
    if e.op == '*':
        return left * right
    if np.any(right == 0.0):
        raise DivisionByZeroError(f"Division by zero in {print_expr(e)}")
    return left / right


def eval_expr_array(e, points):
    """
    Vectorized evaluation over points of shape (..., n); returns shape (...).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 0 or points.shape[-1] < max_variable(e):
        raise DimensionError(f"Points of shape {points.shape} cannot evaluate x{max_variable(e)}")
    shape = points.shape[:-1]
    try:
        with np.errstate(over='raise', invalid='raise', divide='raise'):
            values = np.asarray(_eval_array(e, points, shape), dtype=float)
    except FloatingPointError as exc:
        raise ExprDomainError(f"Floating point error evaluating {print_expr(e)}: {exc}") from exc
    return np.broadcast_to(values, shape).copy()


# ---------------------------------------------------------------------------
# Construction helpers (local 0/1 identities only, no general simplification)
# ---------------------------------------------------------------------------

def const(value):
    value = float(value)
    if value < 0:
        return Neg(Num(-value))
    return Num(value)


def _is_num(e, value):
    return isinstance(e, Num) and e.value == value


def neg(e):
    if _is_num(e, 0.0):
        return ZERO
    if isinstance(e, Neg):
        return e.operand
    return Neg(e)


def add(a, b):
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return BinOp('+', a, b)


def sub(a, b):
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    return BinOp('-', a, b)


def mul(a, b):
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return BinOp('*', a, b)


def div(a, b):
    if _is_num(b, 1.0):
        return a
    return BinOp('/', a, b)


def power(base, exponent):
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    return Pow(base, exponent)


def sum_exprs(terms):
    result = ZERO
    for term in terms:
        result = add(result, term)
    return result


# ---------------------------------------------------------------------------
# Differentiation and substitution
# ---------------------------------------------------------------------------

def diff_expr(e, i):
    """
    Exact partial derivative of e with respect to x<i>.

    Args:
        e: Expression
        i: Coordinate index, 1-based

    Returns:
        Expr: The derivative
    """
    if i < 1:
        raise DimensionError(f"Coordinate index must be >= 1, got {i}")
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Neg):
        return neg(diff_expr(e.operand, i))
    if isinstance(e, Call):
        inner = diff_expr(e.arg, i)
        if e.func == 'sin':
            outer = Call('cos', e.arg)
        elif e.func == 'cos':
            outer = neg(Call('sin', e.arg))
        else:
            outer = e
        return mul(outer, inner)
    if isinstance(e, Pow):
        if e.exponent == 0:
            return ZERO
        inner = diff_expr(e.base, i)
        return mul(mul(const(e.exponent), power(e.base, e.exponent - 1)), inner)
    du = diff_expr(e.left, i)
    dv = diff_expr(e.right, i)
    if e.op == '+':
        return add(du, dv)
    if e.op == '-':
        return sub(du, dv)
    if e.op == '*':
        return add(mul(du, e.right), mul(e.left, dv))
    # quotient rule
    numerator = sub(mul(du, e.right), mul(e.left, dv))
    if _is_num(numerator, 0.0):
        return ZERO
    return div(numerator, Pow(e.right, 2))


def compose_expr(e, substitution, dim=None):
    """
    Replace every x<i> in e by substitution[i-1].

    Args:
        e: Expression
        substitution: One expression per coordinate of e's chart
        dim: Chart dimension of e; when given, len(substitution) must equal it

    Raises:
        DimensionError: On a length mismatch
    """
    substitution = list(substitution)
    if dim is not None and len(substitution) != dim:
        raise DimensionError(f"Substitution has {len(substitution)} entries, chart dimension is {dim}")
    if max_variable(e) > len(substitution):
        raise DimensionError(
            f"Substitution of length {len(substitution)} cannot replace x{max_variable(e)}")
    return _substitute(e, substitution)


def _substitute(e, substitution):
    if isinstance(e, Num):
        return e
    if isinstance(e, Var):
        return substitution[e.index - 1]
    if isinstance(e, Neg):
        return Neg(_substitute(e.operand, substitution))
    if isinstance(e, Call):
        return Call(e.func, _substitute(e.arg, substitution))
    if isinstance(e, Pow):
        return Pow(_substitute(e.base, substitution), e.exponent)
    return BinOp(e.op, _substitute(e.left, substitution), _substitute(e.right, substitution))


def coordinates(dim):
    """The identity substitution [x1, ..., x<dim>]."""
    return [Var(i) for i in range(1, dim + 1)]


def as_expr(value, dim):
    """Accept an Expr, a number or an expression string."""
    if isinstance(value, (Num, Var, Neg, BinOp, Pow, Call)):
        if max_variable(value) > dim:
            raise DimensionError(f"Expression {print_expr(value)} exceeds chart dimension {dim}")
        return value
    if isinstance(value, (int, float)):
        return const(value)
    if isinstance(value, str):
        return parse_expr(value, dim)
    raise TypeError(f"Cannot interpret {value!r} as an expression")


def gradient(e, dim):
    return [diff_expr(e, i) for i in range(1, dim + 1)]


def eval_gradient_array(e, dim, points):
    """Gradient of e at points (..., dim) -> (..., dim)."""
    points = np.asarray(points, dtype=float)
    grads = [eval_expr_array(d, points) for d in gradient(e, dim)]
    if not grads:
        return np.zeros(points.shape[:-1] + (0,))
    return np.stack(grads, axis=-1)


def eval_many(exprs: Sequence[Expr], points):
    """Evaluate a flat sequence of expressions -> (..., len(exprs))."""
    points = np.asarray(points, dtype=float)
    values = [eval_expr_array(e, points) for e in exprs]
    if not values:
        return np.zeros(points.shape[:-1] + (0,))
    return np.stack(values, axis=-1)
