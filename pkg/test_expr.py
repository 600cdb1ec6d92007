import math

import numpy as np
import pytest

from src.expr import (
    ONE, ZERO, BinOp, Call, DimensionError, DivisionByZeroError, ExprDomainError, ExprSyntaxError,
    Neg, Num, Pow, UnknownIdentifierError, Var, add, compose_expr, diff_expr, eval_expr, eval_expr_array,
    eval_gradient_array, is_constant, max_variable, mul, neg, parse_expr, print_expr, sub,
)


def test_parse_builds_tree_with_sum_at_root():
    e = parse_expr("x1*x2 + 1", 2)
    assert isinstance(e, BinOp)
    assert e.op == '+'
    assert e.left == BinOp('*', Var(1), Var(2))
    assert e.right == Num(1.0)


def test_parse_precedence_and_unary_minus():
    assert parse_expr("-x1^2", 1) == Neg(Pow(Var(1), 2))
    assert parse_expr("x1 - x2 - x1", 2) == BinOp('-', BinOp('-', Var(1), Var(2)), Var(1))
    assert parse_expr("exp(x1)/2", 1) == BinOp('/', Call('exp', Var(1)), Num(2.0))


def test_parse_rejects_variable_beyond_dimension():
    with pytest.raises(DimensionError):
        parse_expr("x3", 2)


def test_parse_reports_byte_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("x1 + * x2", 2)
    assert info.value.offset == 5

    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("(x1 + x2", 2)
    assert info.value.offset == 8


def test_parse_unknown_identifier():
    with pytest.raises(UnknownIdentifierError):
        parse_expr("tan(x1)", 1)
    with pytest.raises(UnknownIdentifierError):
        parse_expr("y + 1", 1)


def test_exponent_must_be_integer_literal():
    with pytest.raises(ExprSyntaxError):
        parse_expr("x1^1.5", 1)
    with pytest.raises(ExprSyntaxError):
        parse_expr("x1^x1", 1)


def test_printed_text_parses_back():
    sources = [
        "x1*x2 + 1",
        "-(x1 + x2)^3",
        "sin(x1)*cos(x2) - exp(-x1)/(x2 + 2)",
        "x1 - (x2 - x3)",
        "x1/(x2*x3)",
        "2.5e-07*x1",
    ]
    for source in sources:
        e = parse_expr(source, 3)
        assert parse_expr(print_expr(e), 3) == e


def random_ast(rng, depth, dim=3):
    """Random tree over every node kind; Num values are non-negative like parsed literals."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.5:
            return Var(int(rng.integers(1, dim + 1)))
        return Num(float(np.round(rng.uniform(0.0, 10.0), int(rng.integers(0, 4)))))
    kind = rng.integers(0, 4)
    if kind == 0:
        return Neg(random_ast(rng, depth - 1, dim))
    if kind == 1:
        op = ('+', '-', '*', '/')[rng.integers(0, 4)]
        return BinOp(op, random_ast(rng, depth - 1, dim), random_ast(rng, depth - 1, dim))
    if kind == 2:
        return Pow(random_ast(rng, depth - 1, dim), int(rng.integers(0, 5)))
    return Call(('sin', 'cos', 'exp')[rng.integers(0, 3)], random_ast(rng, depth - 1, dim))


def test_random_trees_print_and_parse_back(rng):
    for _ in range(1000):
        e = random_ast(rng, int(rng.integers(1, 7)))
        assert parse_expr(print_expr(e), 3) == e


def test_number_prints_as_float():
    assert print_expr(parse_expr("2", 0)) == "2.0"


def test_eval_exp_at_one():
    assert eval_expr(parse_expr("exp(x1)", 1), [1.0]) == 2.718281828459045


def test_eval_division_by_zero():
    e = parse_expr("1/x1", 1)
    with pytest.raises(DivisionByZeroError):
        eval_expr(e, [0.0])
    with pytest.raises(DivisionByZeroError):
        eval_expr_array(e, np.array([[1.0], [0.0]]))


def test_eval_overflow_is_domain_error():
    e = parse_expr("exp(x1)", 1)
    with pytest.raises(ExprDomainError):
        eval_expr(e, [1000.0])
    with pytest.raises(ExprDomainError):
        eval_expr_array(e, np.array([[1000.0]]))


def test_eval_short_point():
    with pytest.raises(DimensionError):
        eval_expr(parse_expr("x1 + x2", 2), [1.0])


def test_array_evaluation_matches_scalar(rng):
    e = parse_expr("sin(x1)*x2^2 - exp(x3/4) + 3", 3)
    points = rng.uniform(-2.0, 2.0, size=(4, 5, 3))
    values = eval_expr_array(e, points)
    assert values.shape == (4, 5)
    expected = np.array([[eval_expr(e, p) for p in row] for row in points])
    assert np.allclose(values, expected, rtol=0.0, atol=1e-14)


def test_constant_broadcasts_to_point_shape():
    values = eval_expr_array(parse_expr("7", 2), np.zeros((3, 2)))
    assert values.shape == (3,)
    assert np.all(values == 7.0)


def test_partial_derivative_of_polynomial():
    d = diff_expr(parse_expr("x1^2 + x2^3", 2), 2)
    assert eval_expr(d, [1.0, 2.0]) == 12.0


def test_derivatives_of_functions_and_quotient(rng):
    e = parse_expr("sin(x1*x2) + cos(x2)/exp(x1)", 2)
    points = rng.uniform(-1.0, 1.0, size=(20, 2))
    x1, x2 = points[:, 0], points[:, 1]
    d1 = x2 * np.cos(x1 * x2) - np.cos(x2) * np.exp(-x1)
    d2 = x1 * np.cos(x1 * x2) - np.sin(x2) * np.exp(-x1)
    assert np.allclose(eval_expr_array(diff_expr(e, 1), points), d1, atol=1e-13)
    assert np.allclose(eval_expr_array(diff_expr(e, 2), points), d2, atol=1e-13)


def test_derivative_of_absent_variable_is_zero():
    assert diff_expr(parse_expr("x1^2", 2), 2) == ZERO
    assert diff_expr(parse_expr("x1", 1), 1) == ONE


@pytest.mark.parametrize('source', [
    "x1^3*x2 - sin(x2)*x3",
    "exp(x1*x2)/(x3^2 + 1)",
    "cos(x1 + 2*x2)^2 - x3",
    "-(x1 - x3)^4*exp(-x2)",
    "sin(exp(x1))*x2*x3 + 3",
])
def test_derivatives_match_central_differences(rng, source):
    e = parse_expr(source, 3)
    points = rng.uniform(-1.0, 1.0, size=(100, 3))
    h = 1e-5
    numeric = np.stack([(eval_expr_array(e, points + h * unit) - eval_expr_array(e, points - h * unit)) / (2 * h)
                        for unit in np.eye(3)], axis=-1)
    assert np.allclose(eval_gradient_array(e, 3, points), numeric, rtol=1e-6, atol=1e-6)


def test_compose_substitutes_coordinates():
    e = parse_expr("x1*x2", 2)
    swapped = compose_expr(e, [Var(2), neg(Var(1))], dim=2)
    assert eval_expr(swapped, [3.0, 5.0]) == -15.0
    with pytest.raises(DimensionError):
        compose_expr(e, [Var(1)])


def test_construction_identities():
    x = Var(1)
    assert add(ZERO, x) == x
    assert mul(ONE, x) == x
    assert mul(ZERO, x) == ZERO
    assert sub(x, ZERO) == x
    assert neg(neg(x)) == x


def test_inspection():
    e = parse_expr("x1 + exp(x3)", 3)
    assert max_variable(e) == 3
    assert not is_constant(e)
    assert is_constant(parse_expr("sin(2)*3", 0))
    assert math.isclose(eval_expr(parse_expr("sin(2)*3", 0), []), 3 * math.sin(2))
