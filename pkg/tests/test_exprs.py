"""Expression language: parsing, printing, evaluation, differentiation."""

import math

import numpy as np
import pytest

from crossdiff.exprs import (Binary, Const, EvalError, ExpressionError,
                             ParseError, Unary, Var, abs_, differentiate,
                             evaluate, mul, parse, pow_, sign, sqrt,
                             substitute, to_string, variables)
from exprgen import derivative_agreement_failures, random_ast

# ---------------------------------------------------------------------------
# parsing: structure


def test_parse_minimal_product():
    assert parse("u*v") == Binary("mul", Var("u"), Var("v"))


def test_parse_taxis_coefficient_shape():
    assert parse("u^2 * v") == Binary(
        "mul", Binary("pow", Var("u"), Const(2.0)), Var("v"))


def test_parse_precedence_mul_over_add():
    e = parse("u + v*x")
    assert e == Binary("add", Var("u"), Binary("mul", Var("v"), Var("x")))


def test_parse_pow_right_associative():
    # u^2^3 groups as u^(2^3); the constant exponent folds to 8
    assert parse("u^2^3") == Binary("pow", Var("u"), Const(8.0))


def test_parse_pow_binds_tighter_than_unary_minus():
    e = parse("-u^2")
    assert e == Unary("neg", Binary("pow", Var("u"), Const(2.0)))


def test_parse_left_associative_sub_div():
    assert parse("u-v-x") == Binary("sub", Binary("sub", Var("u"), Var("v")),
                                    Var("x"))
    assert parse("u/v/x") == Binary("div", Binary("div", Var("u"), Var("v")),
                                    Var("x"))


def test_parse_pi_and_constant_folding():
    assert parse("2*pi") == Const(2.0 * math.pi)
    assert parse("(1+2)*u") == Binary("mul", Const(3.0), Var("u"))


def test_parse_functions_and_parentheses():
    e = parse("exp(-(x - 0.5)^2 / 0.1)")
    assert isinstance(e, Unary) and e.op == "exp"
    assert evaluate(e, {"x": 0.5}) == 1.0


def test_parse_scientific_literals():
    assert parse("1e-12") == Const(1e-12)
    assert parse("2.5E+3") == Const(2500.0)


# ---------------------------------------------------------------------------
# parsing: errors carry byte offsets


def test_parse_non_constant_exponent_rejected():
    with pytest.raises(ParseError) as err:
        parse("u^(1+t)")
    assert "constant" in str(err.value)
    assert err.value.offset == 2


def test_parse_python_power_operator_rejected():
    with pytest.raises(ParseError) as err:
        parse("u ** v")
    assert err.value.offset == 3


def test_parse_unknown_identifier():
    with pytest.raises(ParseError) as err:
        parse("w + 1")
    assert "unknown identifier 'w'" in str(err.value)
    assert err.value.offset == 0


def test_parse_trailing_input():
    with pytest.raises(ParseError) as err:
        parse("2x")
    assert err.value.offset == 1


def test_parse_unbalanced_parenthesis():
    with pytest.raises(ParseError) as err:
        parse("(u")
    assert err.value.offset == 2


def test_parse_stray_character():
    with pytest.raises(ParseError) as err:
        parse("u?")
    assert err.value.offset == 1


def test_parse_empty_input():
    with pytest.raises(ParseError):
        parse("")


def test_parse_error_is_value_error():
    # callers may catch the generic family
    assert issubclass(ParseError, ExpressionError)
    assert issubclass(ExpressionError, ValueError)


# ---------------------------------------------------------------------------
# evaluation


def test_eval_product():
    assert evaluate(parse("u*v"), {"u": 2.0, "v": 3.0}) == 6.0


def test_eval_fractional_power():
    assert evaluate(parse("u^1.5"), {"u": 4.0}) == 8.0


def test_eval_logistic_reaction():
    # rho*u - mu*u^kappa at rho = mu = 1, kappa = 3, u = 2
    assert evaluate(parse("1*u - 1*u^3"), {"u": 2.0}) == -6.0
    assert evaluate(parse("u - u^3"), {"u": 2.0}) == -6.0


def test_eval_power_conventions_at_zero():
    assert evaluate(parse("u^2"), {"u": 0.0}) == 0.0
    assert evaluate(parse("u^0.5"), {"u": 0.0}) == 0.0
    # zero exponent folds to the constant 1 at parse time
    assert parse("u^0") == Const(1.0)


def test_eval_arrays_elementwise():
    u = np.array([0.0, 1.0, 4.0])
    out = evaluate(parse("u^1.5 + 1"), {"u": u})
    assert np.array_equal(out, np.array([1.0, 2.0, 9.0]))


def test_eval_unbound_variable():
    with pytest.raises(EvalError) as err:
        evaluate(parse("u*v"), {"u": 1.0})
    assert "unbound variable 'v'" in str(err.value)


def test_eval_domain_errors_name_the_node():
    with pytest.raises(EvalError) as err:
        evaluate(parse("ln(u)"), {"u": 0.0})
    assert "ln" in str(err.value)
    with pytest.raises(EvalError):
        evaluate(parse("sqrt(u - 2)"), {"u": 0.0})
    with pytest.raises(EvalError) as err:
        evaluate(parse("1/(u - 1)"), {"u": 1.0})
    assert "division by zero" in str(err.value)
    with pytest.raises(EvalError):
        evaluate(parse("u^-1"), {"u": 0.0})
    with pytest.raises(EvalError):
        evaluate(parse("u^0.5"), {"u": -2.0})


def test_eval_is_deterministic():
    e = parse("exp(0.1*u) * sin(v) - u/(2 + v^2)")
    b = {"u": 1.234, "v": 5.678}
    assert evaluate(e, b) == evaluate(e, b)


# ---------------------------------------------------------------------------
# differentiation


def test_diff_square_structure():
    assert differentiate(parse("v^2"), "v") == Binary("mul", Const(2.0),
                                                      Var("v"))


def test_diff_degenerate_power():
    # d/du u^(1+alpha) at alpha = 1 is 2u
    assert differentiate(parse("u^2"), "u") == Binary("mul", Const(2.0),
                                                      Var("u"))


def test_diff_exponential_value():
    d = differentiate(parse("exp(x*t)"), "x")
    value = evaluate(d, {"x": 0.5, "t": 2.0})
    assert value == pytest.approx(2.0 * math.e, rel=1e-12)


def test_diff_abs_uses_sign():
    assert differentiate(abs_(Var("u")), "u") == sign(Var("u"))
    assert differentiate(sign(Var("u")), "u") == Const(0.0)
    # sign(0) = 0 convention
    assert evaluate(sign(Var("u")), {"u": 0.0}) == 0.0


def test_diff_unknown_variable_rejected():
    with pytest.raises(ExpressionError):
        differentiate(parse("u"), "w")


def test_diff_quotient_rule_spot():
    e = parse("u/(2 + v^2)")
    du = evaluate(differentiate(e, "u"), {"u": 3.0, "v": 2.0})
    dv = evaluate(differentiate(e, "v"), {"u": 3.0, "v": 2.0})
    assert du == pytest.approx(1.0 / 6.0, rel=1e-12)
    assert dv == pytest.approx(-12.0 / 36.0, rel=1e-12)


@pytest.mark.parametrize("source,var,point", [
    ("exp(x*t)", "t", {"x": 0.7, "t": 1.3}),
    ("sin(pi*x)*cos(t)", "x", {"x": 0.3, "t": 0.9}),
    ("v^3/(2 + u^2)", "v", {"u": 1.5, "v": 2.5}),
    ("sqrt(v + 2)*ln(u + 3)", "u", {"u": 0.5, "v": 1.0}),
    ("abs(u - 1)", "u", {"u": 3.0}),
])
def test_diff_matches_finite_differences_spot(source, var, point):
    e = parse(source)
    sym = evaluate(differentiate(e, var), point)
    h = 1e-6
    up, down = dict(point), dict(point)
    up[var] += h
    down[var] -= h
    fd = (evaluate(e, up) - evaluate(e, down)) / (2.0 * h)
    assert sym == pytest.approx(fd, rel=1e-7, abs=1e-8)


def test_diff_matches_finite_differences_randomized():
    failures = derivative_agreement_failures(seed=2024, pairs=300)
    assert failures == []


# ---------------------------------------------------------------------------
# printing and round trips


def test_print_minimal_product():
    assert to_string(mul(Var("u"), Var("v"))) == "(u * v)"


def test_print_derivative_reparses():
    d = differentiate(parse("v^3"), "v")
    assert parse(to_string(d)) == Binary(
        "mul", Const(3.0), Binary("pow", Var("v"), Const(2.0)))


def test_negative_constant_base_round_trip():
    e = pow_(Const(-2.0), Const(0.5))  # stays symbolic: (-2)^0.5 is complex
    assert isinstance(e, Binary)
    assert parse(to_string(e)) == e


def test_round_trip_thousand_random_asts():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        e = random_ast(rng, depth=4)
        assert parse(to_string(e)) == e


# ---------------------------------------------------------------------------
# substitution and structure helpers


def test_substitute_structure():
    e = parse("u*v")
    out = substitute(e, {"u": parse("x^2")})
    assert out == Binary("mul", Binary("pow", Var("x"), Const(2.0)), Var("v"))


def test_substitute_refolds():
    assert substitute(parse("u*v"), {"u": Const(0.0)}) == Const(0.0)
    assert substitute(parse("u + v"), {"v": Const(0.0)}) == Var("u")


def test_variables_of_expression():
    assert variables(parse("u*exp(x*t)")) == frozenset(("u", "x", "t"))
    assert variables(Const(3.0)) == frozenset()


def test_operator_overloads_build_trees():
    u = Var("u")
    assert (u + 1.0) * 2.0 == Binary(
        "mul", Binary("add", Var("u"), Const(1.0)), Const(2.0))
    assert (u ** 2.0) == Binary("pow", Var("u"), Const(2.0))
    with pytest.raises(ExpressionError):
        pow_(u, Var("v"))


def test_sqrt_constructor_equals_half_power_semantics():
    # sqrt(u) and u^0.5 agree in value (distinct node shapes are fine)
    b = {"u": 7.3}
    assert evaluate(sqrt(Var("u")), b) == evaluate(parse("u^0.5"), b)
