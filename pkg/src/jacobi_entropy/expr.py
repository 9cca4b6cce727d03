"""Expression trees for analytic potentials.

Grammar (whitespace-insensitive)::

    expr     = term , { ( "+" | "-" ) , term } ;
    term     = unary , { ( "*" | "/" ) , unary } ;
    unary    = ( "+" | "-" ) , unary | power ;
    power    = primary , [ "^" , unary ] ;          (* right associative *)
    primary  = number | variable | call | "(" , expr , ")" ;
    call     = ( "exp" | "ln" | "sin" | "cos" | "sqrt" ) , "(" , expr , ")" ;
    variable = "x" , digit , { digit } ;            (* x1 .. xn *)
    number   = digits , [ "." , [ digits ] ] , [ exponent ]
             | "." , digits , [ exponent ] ;
    exponent = ( "e" | "E" ) , [ "+" | "-" ] , digits ;

The right operand of ``^`` must reduce to a rational constant
(``x1^2``, ``x1^-1``, ``x1^(1/3)``). Unary minus binds looser than ``^``,
so ``-x1^2`` is ``-(x1^2)``.

Trees are immutable; the smart constructors below fold constants and drop
additive/multiplicative identities so derivative trees stay small.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ParseError

FUNCTIONS = ("exp", "ln", "sin", "cos", "sqrt")

_NP_FUNC = {"exp": "np.exp", "ln": "np.log", "sin": "np.sin", "cos": "np.cos", "sqrt": "np.sqrt"}
_MATH_FUNC = {"exp": math.exp, "ln": math.log, "sin": math.sin, "cos": math.cos, "sqrt": math.sqrt}


class Node:
    __slots__ = ()

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True)
class Const(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    index: int  # 0-based


@dataclass(frozen=True)
class Add(Node):
    left: Node
    right: Node


@dataclass(frozen=True)
class Sub(Node):
    left: Node
    right: Node


@dataclass(frozen=True)
class Mul(Node):
    left: Node
    right: Node


@dataclass(frozen=True)
class Div(Node):
    left: Node
    right: Node


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: Fraction


@dataclass(frozen=True)
class Call(Node):
    name: str
    arg: Node


ZERO = Const(0.0)
ONE = Const(1.0)


def _is_const(node, value=None):
    return isinstance(node, Const) and (value is None or node.value == value)


def _fold(value):
    try:
        value = float(value)
    except (OverflowError, ZeroDivisionError, ValueError):
        return None
    return Const(value) if math.isfinite(value) else None


def const(value) -> Const:
    return Const(float(value))


def add(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return _fold(a.value + b.value) or Add(a, b)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return Add(a, b)


def sub(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return _fold(a.value - b.value) or Sub(a, b)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if isinstance(b, Neg):
        return add(a, b.arg)
    return Sub(a, b)


def neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return _fold(a.value * b.value) or Mul(a, b)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    if isinstance(a, Neg) and isinstance(b, Neg):
        return mul(a.arg, b.arg)
    if isinstance(a, Neg):
        return neg(mul(a.arg, b))
    if isinstance(b, Neg):
        return neg(mul(a, b.arg))
    return Mul(a, b)


def div(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return _fold(a.value / b.value) or Div(a, b)
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    return Div(a, b)


def power(base: Node, exponent) -> Node:
    exponent = Fraction(exponent)
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        if exponent.denominator == 1 or base.value >= 0:
            try:
                folded = _fold(base.value ** float(exponent)) if exponent.denominator != 1 \
                    else _fold(base.value ** int(exponent))
            except ZeroDivisionError:
                folded = None
            if folded is not None:
                return folded
    if isinstance(base, Pow):
        # (b^p)^q == b^(pq) holds for every real b only with integer p, q
        if base.exponent.denominator == 1 and exponent.denominator == 1:
            return power(base.base, base.exponent * exponent)
    return Pow(base, exponent)


def call(name: str, arg: Node) -> Node:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if isinstance(arg, Const):
        try:
            folded = _fold(_MATH_FUNC[name](arg.value))
        except (ValueError, OverflowError):
            folded = None
        if folded is not None:
            return folded
    return Call(name, arg)


def diff(node: Node, i: int) -> Node:
    """Partial derivative with respect to the 0-based variable ``i``."""
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.index == i else ZERO
    if isinstance(node, Add):
        return add(diff(node.left, i), diff(node.right, i))
    if isinstance(node, Sub):
        return sub(diff(node.left, i), diff(node.right, i))
    if isinstance(node, Neg):
        return neg(diff(node.arg, i))
    if isinstance(node, Mul):
        return add(mul(diff(node.left, i), node.right), mul(node.left, diff(node.right, i)))
    if isinstance(node, Div):
        da, db = diff(node.left, i), diff(node.right, i)
        first = div(da, node.right)
        if _is_const(db, 0.0):
            return first
        return sub(first, div(mul(node.left, db), power(node.right, 2)))
    if isinstance(node, Pow):
        db = diff(node.base, i)
        if _is_const(db, 0.0):
            return ZERO
        p = node.exponent
        return mul(mul(const(p), power(node.base, p - 1)), db)
    if isinstance(node, Call):
        du = diff(node.arg, i)
        if _is_const(du, 0.0):
            return ZERO
        u = node.arg
        if node.name == "exp":
            outer = node
        elif node.name == "ln":
            return div(du, u)
        elif node.name == "sin":
            outer = call("cos", u)
        elif node.name == "cos":
            outer = neg(call("sin", u))
        else:  # sqrt
            return div(du, mul(const(2.0), node))
        return mul(outer, du)
    raise TypeError(f"not an expression node: {node!r}")


def variables(node: Node) -> set:
    """0-based indices of every variable referenced in ``node``."""
    out = set()
    stack = [node]
    while stack:
        cur = stack.pop()
        if isinstance(cur, Var):
            out.add(cur.index)
        elif isinstance(cur, (Add, Sub, Mul, Div)):
            stack.extend((cur.left, cur.right))
        elif isinstance(cur, (Neg, Call)):
            stack.append(cur.arg)
        elif isinstance(cur, Pow):
            stack.append(cur.base)
    return out


def to_code(node: Node) -> str:
    """Python/numpy source for ``node``; variables read ``x[i]``."""
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x[{node.index}]"
    if isinstance(node, Add):
        return f"({to_code(node.left)} + {to_code(node.right)})"
    if isinstance(node, Sub):
        return f"({to_code(node.left)} - {to_code(node.right)})"
    if isinstance(node, Mul):
        return f"({to_code(node.left)} * {to_code(node.right)})"
    if isinstance(node, Div):
        return f"({to_code(node.left)} / {to_code(node.right)})"
    if isinstance(node, Neg):
        return f"(-{to_code(node.arg)})"
    if isinstance(node, Pow):
        p = node.exponent
        if p.denominator == 1:
            return f"({to_code(node.base)} ** {int(p)})"
        if p == Fraction(1, 2):
            return f"np.sqrt({to_code(node.base)})"
        return f"np.power({to_code(node.base)}, {float(p)!r})"
    if isinstance(node, Call):
        return f"{_NP_FUNC[node.name]}({to_code(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def compile_nodes(nodes):
    """Compile a sequence of trees into one callable ``f(x) -> tuple``.

    ``x`` is indexable by variable (shape ``(n, ...)``); entries of the
    returned tuple may be scalars when a tree is constant.
    """
    body = ", ".join(to_code(nd) for nd in nodes)
    source = f"lambda x: ({body},)"
    return eval(compile(source, "<potential>", "eval"), {"np": np})


_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def to_source(node: Node) -> str:
    """Render ``node`` in the potential DSL; ``parse(to_source(t))`` rebuilds ``t``'s value."""
    if isinstance(node, Const):
        text = repr(node.value)
        return f"({text})" if node.value < 0 or text.startswith("-") else text
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Call):
        return f"{node.name}({to_source(node.arg)})"
    prec = _PREC[type(node)]

    def wrap(child, strict=False):
        s = to_source(child)
        cp = _PREC.get(type(child), 5)
        if cp < prec or (strict and cp == prec):
            return f"({s})"
        return s

    if isinstance(node, Neg):
        return f"-{wrap(node.arg, strict=True)}"
    if isinstance(node, Pow):
        p = node.exponent
        ptxt = str(p.numerator) if p.denominator == 1 and p >= 0 else f"({p.numerator}/{p.denominator})"
        return f"{wrap(node.base, strict=True)}^{ptxt}"
    op = {Add: " + ", Sub: " - ", Mul: "*", Div: "/"}[type(node)]
    return f"{wrap(node.left)}{op}{wrap(node.right, strict=not isinstance(node, (Add, Mul)))}"


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(source):
    pos = 0
    tokens = []
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if not m:
            bad = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ParseError(f"unexpected character {source[bad]!r}", bad, source)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ParseError(message, tok[2], self.source)

    def expect(self, text):
        tok = self.take()
        if tok[1] != text:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            raise self.error(f"expected {text!r}, found {found}", tok)
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            raise self.error("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^":
            tok = self.take()
            exponent = self.unary()
            if not isinstance(exponent, Const):
                raise self.error("exponent must be a rational constant", tok)
            return power(base, Fraction(exponent.value).limit_denominator(10**9))
        return base

    def primary(self):
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return const(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return call(text, arg)
            m = re.fullmatch(r"x([1-9]\d*)", text)
            if m:
                return Var(int(m.group(1)) - 1)
            raise self.error(f"unknown identifier {text!r}", tok)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise self.error(f"unexpected {found}", tok)


def parse(source: str) -> Node:
    if not isinstance(source, str):
        raise ParseError(f"potential source must be text, got {type(source).__name__}")
    return _Parser(source).parse()
