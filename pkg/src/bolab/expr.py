"""Closed-form potential expressions: parse, evaluate, differentiate, print.

Grammar (whitespace insensitive)::

    sum     :=  product (('+' | '-') product)*
    product :=  unary (('*' | '/') unary)*
    unary   :=  '-' unary | power
    power   :=  atom ('^' unary)?          # right-associative
    atom    :=  NUMBER | IDENT | IDENT '(' sum ')' | '(' sum ')'

Unary minus binds tighter than '*' and '/', looser than '^' (so ``-x^2``
means ``-(x^2)``).  Known functions: exp, log, sin, cos, sqrt, abs.
Everything evaluates with numpy semantics, so grid arrays pass through
unchanged; scalar input yields a plain float.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ExprSyntaxError, NonDifferentiable, UnknownIdentifier

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "abs")


# --- AST ----------------------------------------------------------------------

class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    name: str


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class Bin(Node):
    op: str  # one of + - * / ^
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    fn: str
    arg: Node


@dataclass(frozen=True)
class PotentialExpr:
    """A parsed expression together with its declared variable order."""

    root: Node
    variables: tuple[str, ...]

    def __call__(self, *values):
        return evaluate(self, values if len(values) > 1 else values[0])

    def __str__(self) -> str:
        return to_text(self)


# --- tokenizer ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            # skip leading whitespace manually to report the true offset
            stripped = pos
            while stripped < len(text) and text[stripped].isspace():
                stripped += 1
            if stripped == len(text):
                break
            raise ExprSyntaxError(f"unexpected character {text[stripped]!r}", stripped)
        kind = match.lastgroup
        value = match.group(kind)
        tokens.append((kind, value, match.start(kind)))
        pos = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


# --- parser ---------------------------------------------------------------------

class _Parser:
    def __init__(self, text: str, variables: tuple[str, ...]):
        self.text = text
        self.variables = variables
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, value, pos = self.peek()
        if kind != "op" or value != op:
            raise ExprSyntaxError(f"expected '{op}'", pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.sum()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {value!r}", pos)
        return node

    def sum(self) -> Node:
        node = self.product()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                node = Bin(value, node, self.product())
            else:
                return node

    def product(self) -> Node:
        node = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                node = Bin(value, node, self.unary())
            else:
                return node

    def unary(self) -> Node:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return _neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            return Bin("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, value, pos = self.advance()
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            next_kind, next_value, _ = self.peek()
            if next_kind == "op" and next_value == "(":
                if value not in FUNCTIONS:
                    raise UnknownIdentifier(value, pos)
                self.advance()
                arg = self.sum()
                self.expect_op(")")
                return Call(value, arg)
            if value in self.variables:
                return Var(value)
            raise UnknownIdentifier(value, pos)
        if kind == "op" and value == "(":
            node = self.sum()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected {value!r}" if value else "unexpected end of input", pos)


def parse_expr(text: str, variables) -> PotentialExpr:
    """Parse ``text`` over the declared variables (order fixes the call signature)."""
    variables = tuple(variables)
    return PotentialExpr(_Parser(text, variables).parse(), variables)


# --- evaluation -----------------------------------------------------------------

def _as_value_map(expr: PotentialExpr, point) -> dict:
    if isinstance(point, dict):
        missing = [v for v in expr.variables if v not in point]
        if missing:
            raise KeyError(f"missing values for {missing}")
        return {v: point[v] for v in expr.variables}
    if len(expr.variables) == 1 and not isinstance(point, (list, tuple)):
        # scalar or array of sample values for the single variable
        return {expr.variables[0]: point}
    values = list(point) if isinstance(point, (list, tuple)) else [point]
    if len(values) != len(expr.variables):
        raise ValueError(
            f"expected {len(expr.variables)} coordinate(s) {expr.variables}, got {len(values)}"
        )
    return dict(zip(expr.variables, values))


def _eval(node: Node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Call):
        arg = _eval(node.arg, env)
        if node.fn == "exp":
            return np.exp(arg)
        if node.fn == "log":
            if np.any(np.asarray(arg) <= 0):
                raise DomainError("log of a non-positive value")
            return np.log(arg)
        if node.fn == "sin":
            return np.sin(arg)
        if node.fn == "cos":
            return np.cos(arg)
        if node.fn == "sqrt":
            if np.any(np.asarray(arg) < 0):
                raise DomainError("sqrt of a negative value")
            return np.sqrt(arg)
        if node.fn == "abs":
            return np.abs(arg)
        raise AssertionError(f"unhandled function {node.fn}")
    if isinstance(node, Bin):
        left = _eval(node.left, env)
        right = _eval(node.right, env)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            if np.any(np.asarray(right) == 0):
                raise DomainError("division by zero")
            return left / right
        if node.op == "^":
            base = np.asarray(left)
            expo = np.asarray(right)
            if expo.ndim == 0 and float(expo) == int(float(expo)):
                if np.any(base == 0) and float(expo) < 0:
                    raise DomainError("zero raised to a negative power")
                return left ** right
            if np.any(base < 0):
                raise DomainError("negative base with non-integer exponent")
            if np.any(base == 0) and np.any(expo < 0):
                raise DomainError("zero raised to a negative power")
            return left ** right
        raise AssertionError(f"unhandled operator {node.op}")
    raise AssertionError(f"unhandled node {node!r}")


def evaluate(expr: PotentialExpr, point):
    """Evaluate at a point (scalar, per-variable sequence, dict, or arrays)."""
    env = _as_value_map(expr, point)
    result = _eval(expr.root, env)
    if not np.all(np.isfinite(result)):
        raise DomainError("expression evaluated to a non-finite value")
    if np.ndim(result) == 0:
        return float(result)
    return result


# --- node constructors with light folding ----------------------------------------

def _neg(a: Node) -> Node:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Node, b: Node) -> Node:
    if a == Num(0.0) or b == Num(0.0):
        return Num(0.0)
    if a == Num(1.0):
        return b
    if b == Num(1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def _add(a: Node, b: Node) -> Node:
    if a == Num(0.0):
        return b
    if b == Num(0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if b == Num(0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def _div(a: Node, b: Node) -> Node:
    if a == Num(0.0):
        return Num(0.0)
    if b == Num(1.0):
        return a
    return Bin("/", a, b)


def _pow(a: Node, b: Node) -> Node:
    if b == Num(1.0):
        return a
    if b == Num(0.0):
        return Num(1.0)
    return Bin("^", a, b)


def _diff(node: Node, var: str) -> Node:
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0) if node.name == var else Num(0.0)
    if isinstance(node, Neg):
        return _neg(_diff(node.arg, var))
    if isinstance(node, Call):
        du = _diff(node.arg, var)
        if node.fn == "abs":
            if du == Num(0.0):
                return Num(0.0)
            raise NonDifferentiable("abs is not differentiable at its kink")
        if du == Num(0.0):
            return Num(0.0)
        if node.fn == "exp":
            return _mul(Call("exp", node.arg), du)
        if node.fn == "log":
            return _div(du, node.arg)
        if node.fn == "sin":
            return _mul(Call("cos", node.arg), du)
        if node.fn == "cos":
            return Neg(_mul(Call("sin", node.arg), du))
        if node.fn == "sqrt":
            return _div(du, _mul(Num(2.0), Call("sqrt", node.arg)))
        raise AssertionError(f"unhandled function {node.fn}")
    if isinstance(node, Bin):
        du = _diff(node.left, var)
        dv = _diff(node.right, var)
        if node.op == "+":
            return _add(du, dv)
        if node.op == "-":
            return _sub(du, dv)
        if node.op == "*":
            return _add(_mul(du, node.right), _mul(node.left, dv))
        if node.op == "/":
            # (u/v)' = u'/v - u v' / v^2
            first = _div(du, node.right)
            if dv == Num(0.0):
                return first
            return _sub(first, _div(_mul(node.left, dv), _pow(node.right, Num(2.0))))
        if node.op == "^":
            u, v = node.left, node.right
            if isinstance(v, Num):
                # d(u^c) = c * u^(c-1) * u'
                return _mul(_mul(v, _pow(u, Num(v.value - 1.0))), du)
            # general: u^v * (v' log u + v u' / u)
            term = _add(_mul(dv, Call("log", u)), _div(_mul(v, du), u))
            return _mul(_pow(u, v), term)
        raise AssertionError(f"unhandled operator {node.op}")
    raise AssertionError(f"unhandled node {node!r}")


def derive(expr: PotentialExpr, var: str) -> PotentialExpr:
    """Symbolic partial derivative with light constant folding."""
    if var not in expr.variables:
        raise ValueError(f"unknown variable {var!r}; declared: {expr.variables}")
    return PotentialExpr(_diff(expr.root, var), expr.variables)


# --- printing -------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node: Node) -> int:
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    if isinstance(node, Num) and node.value < 0:
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt(node: Node) -> str:
    if isinstance(node, Num):
        value = node.value
        if value == int(value) and abs(value) < 1e16:
            return repr(int(value))
        return repr(value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = _fmt(node.arg)
        if _prec(node.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.fn}({_fmt(node.arg)})"
    if isinstance(node, Bin):
        lhs, rhs = _fmt(node.left), _fmt(node.right)
        mine = _PREC[node.op]
        if node.op == "^":
            # right-associative; parenthesize any structured operand
            if _prec(node.left) <= mine:
                lhs = f"({lhs})"
            if _prec(node.right) < mine:
                rhs = f"({rhs})"
        else:
            if _prec(node.left) < mine:
                lhs = f"({lhs})"
            # parsing is left-associative, so keep any structured right
            # operand of equal precedence in parentheses
            if _prec(node.right) <= mine:
                rhs = f"({rhs})"
        return f"{lhs} {node.op} {rhs}"
    raise AssertionError(f"unhandled node {node!r}")


def to_text(expr: PotentialExpr) -> str:
    """Render to text that reparses to a structurally identical tree."""
    return _fmt(expr.root)
