"""Tiny arithmetic expression grammar shared by charts, fields and weights.

Grammar (``^`` is right associative and binds tighter than unary minus)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'
    FUNC    := sin | cos | exp | sqrt
    NAME    := x0 x1 x2 v0 v1 v2 (or any declared variable) | pi | e | E

Numeric literals become exact rationals so that ``parse(to_text(parse(s)))``
reproduces the same tree.  Parsed expressions are plain sympy objects; they
compile either to vectorised numpy callables or to a flat stack program
evaluated inside the numba kernels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import sympy as sp

DEFAULT_VARIABLES = ("x0", "x1", "x2", "v0", "v1", "v2")
FUNCTIONS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "sqrt": sp.sqrt}
CONSTANTS = {"pi": sp.pi, "e": sp.E, "E": sp.E}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*/^(),]))"
)


class ExpressionError(ValueError):
    """Malformed expression; carries the offending token and its offset."""

    def __init__(self, message: str, token: str = "", position: int = -1, text: str = ""):
        self.token = token
        self.position = position
        self.text = text
        loc = f" at position {position}" if position >= 0 else ""
        tok = f" (offending token {token!r})" if token else ""
        where = f" in expression {text!r}" if text else ""
        super().__init__(f"{message}{tok}{loc}{where}")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = text[pos:].lstrip()[:1]
            raise ExpressionError("unexpected character", bad, len(text) - len(text[pos:].lstrip()), text)
        kind = m.lastgroup
        start = m.start(kind)
        tok = m.group(kind)
        if kind == "op" and tok == "**":
            tok = "^"
        toks.append(_Tok(kind, tok, start))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, variables):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.variables = {name: sp.Symbol(name, real=True) for name in variables}

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok: _Tok):
        raise ExpressionError(message, tok.text or "<end>", tok.pos, self.text)

    def expect(self, text: str):
        tok = self.take()
        if tok.text != text:
            self.fail(f"expected {text!r}", tok)

    def finite(self, node, tok: _Tok):
        if node.has(sp.zoo, sp.oo, -sp.oo, sp.nan):
            self.fail("division by zero", tok)
        return node

    def parse(self):
        if self.peek().kind == "end":
            self.fail("empty expression", self.peek())
        node = self.expr()
        if self.peek().kind != "end":
            self.fail("unexpected token", self.peek())
        return node

    def expr(self):
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.unary()
        while self.peek().text in ("*", "/"):
            tok = self.take()
            rhs = self.unary()
            node = self.finite(node * rhs if tok.text == "*" else node / rhs, tok)
        return node

    def unary(self):
        if self.peek().text in ("+", "-"):
            op = self.take().text
            node = self.unary()
            return -node if op == "-" else node
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().text == "^":
            tok = self.take()
            return self.finite(base ** self.unary(), tok)
        return base

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return sp.Rational(Fraction(tok.text))
        if tok.kind == "name":
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return FUNCTIONS[tok.text](arg)
            if tok.text in CONSTANTS:
                return CONSTANTS[tok.text]
            if tok.text in self.variables:
                return self.variables[tok.text]
            self.fail("unknown name", tok)
        if tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.fail("unexpected token", tok)


def symbol(name: str) -> sp.Symbol:
    return sp.Symbol(name, real=True)


def parse(text: str, variables=DEFAULT_VARIABLES) -> sp.Expr:
    """Parse ``text`` into a sympy expression in the given variables."""
    if not isinstance(text, str):
        raise ExpressionError(f"expected a string, got {type(text).__name__}")
    return _Parser(text, variables).parse()


def to_text(expr) -> str:
    """Serialise a parsed expression back into the grammar."""
    return sp.sstr(sp.sympify(expr)).replace("**", "^")


def evaluate_constant(text: str) -> float:
    """Evaluate a variable-free expression such as ``2*pi/3``."""
    return float(parse(text, variables=()))


def lambdify(expr, variables=DEFAULT_VARIABLES):
    """Vectorised numpy callable ``f(*variables)``; broadcasts constants."""
    syms = [symbol(v) for v in variables]
    fn = sp.lambdify(syms, expr, "numpy")
    if sp.sympify(expr).free_symbols:
        return fn

    value = float(expr)

    def const(*args):
        shape = np.broadcast(*[np.asarray(a) for a in args]).shape if args else ()
        return np.full(shape, value) if shape else value

    return const


# Stack program opcodes (mirrored in _kernels.py).
OP_CONST, OP_VAR, OP_ADD, OP_MUL, OP_POW, OP_SIN, OP_COS, OP_EXP, OP_SQR, OP_INV = range(10)


def compile_program(expr, variables=DEFAULT_VARIABLES) -> tuple[np.ndarray, np.ndarray]:
    """Flatten ``expr`` into (ops, args) arrays for the numba stack machine.

    ``args`` holds the constant value for OP_CONST, the variable index for
    OP_VAR and the operand count for n-ary OP_ADD / OP_MUL.
    """
    index = {symbol(v): i for i, v in enumerate(variables)}
    ops: list[int] = []
    args: list[float] = []

    def emit(op, arg=0.0):
        ops.append(op)
        args.append(float(arg))

    def walk(node):
        if node.is_Number or node in (sp.pi, sp.E):
            emit(OP_CONST, float(node))
        elif node.is_Symbol:
            if node not in index:
                raise ExpressionError(f"variable {node} not available here", str(node))
            emit(OP_VAR, index[node])
        elif node.is_Add or node.is_Mul:
            for a in node.args:
                walk(a)
            emit(OP_ADD if node.is_Add else OP_MUL, len(node.args))
        elif node.is_Pow:
            base, ex = node.args
            walk(base)
            if ex == 2:
                emit(OP_SQR)
            elif ex == -1:
                emit(OP_INV)
            else:
                walk(ex)
                emit(OP_POW)
        elif isinstance(node, sp.sin):
            walk(node.args[0])
            emit(OP_SIN)
        elif isinstance(node, sp.cos):
            walk(node.args[0])
            emit(OP_COS)
        elif isinstance(node, sp.exp):
            walk(node.args[0])
            emit(OP_EXP)
        else:
            raise ExpressionError(f"cannot compile node {node!r}", str(node))

    walk(sp.sympify(expr))
    return np.asarray(ops, dtype=np.int64), np.asarray(args, dtype=np.float64)
