"""A small arithmetic-expression language for scalar fields in ``x`` and ``y``.

Grammar (``^`` binds tighter than unary minus and is right-associative)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := atom ("^" unary)?
    atom    := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

Names are the variables ``x`` and ``y``, the constants ``pi`` and ``e``, and
the functions ``exp``, ``sin``, ``cos``, ``log``, ``sqrt`` and ``abs``.
Compiled expressions evaluate elementwise on point arrays of shape (..., 2).
"""

import re
from dataclasses import dataclass

import numpy as np

from .errors import ParseError

FUNCTIONS = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "log": np.log,
             "sqrt": np.sqrt, "abs": np.abs}
CONSTANTS = {"pi": np.pi, "e": np.e}
VARIABLES = ("x", "y")

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    column: int


def tokenize(text):
    tokens, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise ParseError(f"unexpected character {text[col - 1]!r}", line=1, column=col)
        kind = m.lastgroup
        tokens.append(Token(kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    tokens.append(Token("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def take(self, text=None):
        t = self.tok
        if text is not None and t.text != text:
            what = t.text or "end of input"
            raise ParseError(f"expected {text!r}, found {what!r}", line=1, column=t.column)
        self.i += 1
        return t

    def parse(self):
        if self.tok.kind == "end":
            raise ParseError("empty expression", line=1, column=1)
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(f"unexpected {self.tok.text!r}", line=1, column=self.tok.column)
        return node

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.take().text
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.take().text
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.tok.text in ("+", "-"):
            op = self.take().text
            operand = self.unary()
            return ("neg", operand) if op == "-" else operand
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.text == "^":
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.take()
            return ("num", float(t.text))
        if t.kind == "name":
            self.take()
            if t.text in FUNCTIONS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return ("call", t.text, arg)
            if t.text in CONSTANTS:
                return ("num", CONSTANTS[t.text])
            if t.text in VARIABLES:
                return ("var", t.text)
            raise ParseError(f"unknown name {t.text!r}", line=1, column=t.column)
        if t.text == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        raise ParseError(f"unexpected {t.text or 'end of input'!r}", line=1, column=t.column)


def _evaluate(node, x, y):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "var":
        return x if node[1] == "x" else y
    if kind == "neg":
        return -_evaluate(node[1], x, y)
    if kind == "call":
        return FUNCTIONS[node[1]](_evaluate(node[2], x, y))
    a, b = _evaluate(node[1], x, y), _evaluate(node[2], x, y)
    if kind == "+":
        return a + b
    if kind == "-":
        return a - b
    if kind == "*":
        return a * b
    if kind == "/":
        return a / b
    return np.power(a, b)


@dataclass(frozen=True)
class Expression:
    """Compiled expression; call with points of shape (..., 2)."""

    source: str
    tree: tuple

    def __call__(self, points):
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return np.broadcast_to(np.asarray(_evaluate(self.tree, x, y), dtype=float), x.shape)

    def __str__(self):
        return self.source


def parse_expression(text):
    return Expression(text.strip(), _Parser(text).parse())
