"""Small arithmetic expression language for custom feedback functions.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | VAR | "pow" "(" expr "," expr ")" | "(" expr ")"

Variables are ``x1`` .. ``xd``. Nothing else is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass
import re

import numpy as np

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<var>x\d+)|(?P<name>pow)|(?P<op>[-+*/^(),]))"
)


class ExpressionError(ValueError):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character at position {pos} in {text!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    out.append(("end", ""))
    return out


@dataclass(frozen=True)
class Expression:
    """Parsed expression; call with an array whose last axis holds x1..xd."""

    source: str
    tree: tuple

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _eval(self.tree, x)
        return np.broadcast_to(out, x.shape[:-1]).astype(float)

    def variables(self) -> set[int]:
        return _vars(self.tree)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ExpressionError(f"expected {value!r} but found {tok[1] or 'end of input'!r} in {self.text!r}")
        self.i += 1
        return tok

    def parse(self):
        tree = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError(f"trailing input {self.peek()[1]!r} in {self.text!r}")
        return tree

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            operand = self.unary()
            return operand if op == "+" else ("neg", operand)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        kind, value = self.peek()
        if kind == "num":
            self.take()
            return ("num", float(value))
        if kind == "var":
            self.take()
            idx = int(value[1:])
            if idx < 1:
                raise ExpressionError(f"variables start at x1, got {value!r}")
            return ("var", idx)
        if kind == "name":
            self.take()
            self.take("(")
            a = self.expr()
            self.take(",")
            b = self.expr()
            self.take(")")
            return ("^", a, b)
        if value == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        raise ExpressionError(f"unexpected {value or 'end of input'!r} in {self.text!r}")


def parse_expression(text: str) -> Expression:
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    return Expression(text, _Parser(text).parse())


def _eval(node, x):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        if node[1] > x.shape[-1]:
            raise ExpressionError(f"x{node[1]} exceeds dimension {x.shape[-1]}")
        return x[..., node[1] - 1]
    if tag == "neg":
        return -_eval(node[1], x)
    a = _eval(node[1], x)
    b = _eval(node[2], x)
    if tag == "+":
        return a + b
    if tag == "-":
        return a - b
    if tag == "*":
        return a * b
    if tag == "/":
        return a / b
    return np.power(a, b)


def _vars(node) -> set[int]:
    if node[0] == "var":
        return {node[1]}
    if node[0] == "num":
        return set()
    out = set()
    for child in node[1:]:
        out |= _vars(child)
    return out
