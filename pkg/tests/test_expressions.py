import math

import numpy as np
import pytest

from freepath.expressions import (Expression, ExpressionError,
                                  check_derivative_consistency, parse_expression)


def test_basic_arithmetic():
    e = parse_expression("2*r + 3")
    assert e(2.0) == 7.0
    assert np.allclose(e(np.array([0.0, 1.0])), [3.0, 5.0])


def test_power_and_functions():
    e = parse_expression("sqrt(r) + r^2 - exp(0) + pow(r, 3)")
    assert abs(e(4.0) - (2.0 + 16.0 - 1.0 + 64.0)) < 1e-12


def test_power_right_associative():
    assert parse_expression("2^3^2")(0.0) == 512.0


def test_unary_minus_and_precedence():
    e = parse_expression("-r^2 + 2*-3")
    # -(r^2) - 6
    assert e(2.0) == -10.0


def test_scientific_literals():
    assert parse_expression("1e-3 + 2.5E2")(0.0) == pytest.approx(250.001)


def test_derivative_polynomial():
    e = parse_expression("3*r^2 - 4*r + 7")
    d = e.derivative()
    for r in [0.0, 0.5, 2.0]:
        assert abs(d(r) - (6 * r - 4)) < 1e-12


def test_derivative_chain_rule():
    e = parse_expression("exp(-r^2) + log(r) + sqrt(1+r)")
    d = e.derivative()
    for r in [0.3, 1.0, 2.5]:
        exact = -2 * r * math.exp(-r * r) + 1.0 / r + 0.5 / math.sqrt(1 + r)
        assert abs(d(r) - exact) < 1e-12


def test_derivative_quotient():
    e = parse_expression("(r+1)/(r^2+2)")
    d = e.derivative()
    r = 1.7
    exact = ((r * r + 2) - (r + 1) * 2 * r) / (r * r + 2) ** 2
    assert abs(d(r) - exact) < 1e-12


def test_derivative_consistency_helper():
    e = parse_expression("-1/r")
    ok, _, err = check_derivative_consistency(e, e.derivative(),
                                              np.linspace(0.2, 3.0, 100))
    assert ok, err


@pytest.mark.parametrize("bad", ["r +", "2 **", "foo(r)", "r @ 2", "(r", "pow(r)"])
def test_parse_errors(bad):
    with pytest.raises(ExpressionError):
        parse_expression(bad)


def test_unknown_variable_rejected():
    with pytest.raises(ExpressionError):
        parse_expression("x + 1")


def test_expression_repr_roundtrip():
    e = parse_expression("2*r + sqrt(r)")
    again = Expression(e.node)
    assert abs(again(2.25) - e(2.25)) < 1e-12
