import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bolab.errors import (
    DomainError,
    ExprSyntaxError,
    NonDifferentiable,
    UnknownIdentifier,
)
from bolab.expr import (
    Bin,
    Neg,
    Num,
    Var,
    PotentialExpr,
    derive,
    evaluate,
    parse_expr,
    to_text,
)


def test_parse_and_evaluate_scalar():
    e = parse_expr("1 + x^2", ["x"])
    assert evaluate(e, 2.0) == pytest.approx(5.0, abs=0)
    assert e(2.0) == 5.0


def test_evaluate_on_arrays():
    e = parse_expr("x^2 + 1", ["x"])
    out = evaluate(e, np.array([0.0, 1.0, 3.0]))
    np.testing.assert_allclose(out, [1.0, 2.0, 10.0])


def test_two_variable_evaluation_and_gradient_at_origin():
    e = parse_expr("exp(-(x1^2 + 2*x2^2))", ["x1", "x2"])
    assert evaluate(e, (0.0, 0.0)) == 1.0
    for v in ("x1", "x2"):
        d = derive(e, v)
        assert evaluate(d, (0.0, 0.0)) == 0.0


def test_second_derivative_of_quartic():
    e = parse_expr("y^4", ["y"])
    d2 = derive(derive(e, "y"), "y")
    for t in (-1.7, 0.0, 0.5, 2.0):
        assert evaluate(d2, t) == pytest.approx(12.0 * t**2, rel=1e-14)


def test_unary_minus_precedence():
    # unary minus binds tighter than '*', looser than '^'
    assert evaluate(parse_expr("-x^2", ["x"]), 3.0) == -9.0
    assert evaluate(parse_expr("2^-2", ["x"]), 0.0) == 0.25
    e = parse_expr("-x*y", ["x", "y"])
    assert e.root == Bin("*", Neg(Var("x")), Var("y"))
    assert evaluate(e, (2.0, 3.0)) == -6.0


def test_power_right_associative():
    # 2^3^2 = 2^(3^2) = 512, not (2^3)^2 = 64
    assert evaluate(parse_expr("2^3^2", ["x"]), 0.0) == 512.0


def test_syntax_error_position():
    with pytest.raises(ExprSyntaxError) as err:
        parse_expr("1 + * x", ["x"])
    assert err.value.position == 4


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier) as err:
        parse_expr("x + zz", ["x"])
    assert err.value.name == "zz"
    assert err.value.position == 4
    with pytest.raises(UnknownIdentifier):
        parse_expr("foo(x)", ["x"])


def test_unbalanced_parens():
    with pytest.raises(ExprSyntaxError):
        parse_expr("(1 + x", ["x"])
    with pytest.raises(ExprSyntaxError):
        parse_expr("1 + x)", ["x"])


def test_domain_errors():
    with pytest.raises(DomainError):
        evaluate(parse_expr("log(x)", ["x"]), 0.0)
    with pytest.raises(DomainError):
        evaluate(parse_expr("1/x", ["x"]), 0.0)
    with pytest.raises(DomainError):
        evaluate(parse_expr("sqrt(x)", ["x"]), -1.0)
    with pytest.raises(DomainError):
        evaluate(parse_expr("x^-1", ["x"]), 0.0)
    with pytest.raises(DomainError):
        evaluate(parse_expr("x^0.5", ["x"]), -2.0)


def test_abs_evaluates_but_does_not_differentiate():
    e = parse_expr("abs(x)", ["x"])
    assert evaluate(e, -3.0) == 3.0
    with pytest.raises(NonDifferentiable):
        derive(e, "x")


def test_derivative_of_constant_in_other_variable():
    e = parse_expr("x1^2", ["x1", "x2"])
    assert derive(e, "x2").root == Num(0.0)


_FD_CORPUS = [
    "1 + x^2",
    "x^4 - 3*x^2 + 2",
    "exp(-x^2)",
    "sin(x) * cos(2*x)",
    "log(2 + x^2)",
    "sqrt(1 + x^2)",
    "(1 + x^2) / (2 + cos(x))",
    "x^2 * exp(-x) + x / (1 + x^2)",
    "2^(x/4)",
    "(2 + x^2)^1.5",
]


@pytest.mark.parametrize("text", _FD_CORPUS)
def test_symbolic_derivative_matches_central_differences(text):
    """Order-4 central differences at 100 deterministic points, 1e-7 accuracy."""
    e = parse_expr(text, ["x"])
    d = derive(e, "x")
    pts = np.linspace(-2.0, 2.0, 100)
    h = 1e-3
    fd = (
        -evaluate(e, pts + 2 * h)
        + 8 * evaluate(e, pts + h)
        - 8 * evaluate(e, pts - h)
        + evaluate(e, pts - 2 * h)
    ) / (12 * h)
    sym = evaluate(d, pts)
    sym = np.broadcast_to(sym, pts.shape)
    scale = np.maximum(1.0, np.abs(sym))
    assert np.max(np.abs(fd - sym) / scale) < 1e-7


_ROUNDTRIP_CORPUS = [
    "1 + x^2",
    "-x^2",
    "-(x + 1) * x",
    "x - (1 - x)",
    "x / (2 / x)",
    "(x^2)^3",
    "x^2^3",
    "2^-2 + x",
    "exp(-(x^2 + 2*x^2)) / sqrt(1 + x^2)",
    "abs(x) + 0.125",
]


@pytest.mark.parametrize("text", _ROUNDTRIP_CORPUS)
def test_roundtrip_corpus(text):
    e = parse_expr(text, ["x"])
    again = parse_expr(to_text(e), ["x"])
    assert again.root == e.root


def _ast_strategy():
    leaves = st.one_of(
        st.floats(min_value=-8, max_value=8, allow_nan=False).map(
            lambda v: Num(float(v))
        ),
        st.integers(min_value=0, max_value=9).map(lambda v: Num(float(v))),
        st.sampled_from([Var("x"), Var("y")]),
    )

    def extend(children):
        binop = st.builds(
            Bin,
            st.sampled_from(["+", "-", "*", "/", "^"]),
            children,
            children,
        )
        return st.one_of(
            binop,
            children.map(lambda a: Neg(a) if not isinstance(a, (Num, Neg)) else a),
            st.builds(
                lambda fn, a: __import__("bolab.expr", fromlist=["Call"]).Call(fn, a),
                st.sampled_from(["exp", "sin", "cos", "abs"]),
                children,
            ),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(_ast_strategy())
def test_roundtrip_random_trees(root):
    e = PotentialExpr(root, ("x", "y"))
    again = parse_expr(to_text(e), ("x", "y"))
    assert again.root == e.root


def test_print_is_deterministic():
    e = parse_expr("(1+x^2) * exp(-x) - 3/x", ["x"])
    assert to_text(e) == to_text(parse_expr(to_text(e), ["x"]))
