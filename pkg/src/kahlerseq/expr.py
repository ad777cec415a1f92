"""Scalar expression language for chart-local field components.

Grammar, loosest binding first::

    expr     := term (("+" | "-") term)*
    term     := unary (("*" | "/") unary)*
    unary    := "-" unary | power
    power    := atom ["^" exponent]
    exponent := INT | ("+" | "-") INT | "(" exponent ")"
    atom     := NUMBER | COORD | FUNC "(" expr ")" | "(" expr ")"

Coordinates are ``x1 .. xn`` or aliases declared by the manifold spec. The
functions are ``exp``, ``log``, ``sin``, ``cos`` and ``sqrt``. Evaluation goes
through torch so that forward-mode dual tensors propagate exact derivatives.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import torch
from torch import Tensor

from kahlerseq.config import DTYPE
from kahlerseq.errors import (
    CoordinateRangeError,
    EvalError,
    ExprSyntaxError,
    UnknownIdentifierError,
)

logger = logging.getLogger(__name__)

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)

_COORD_RE = re.compile(r"x(\d+)")


def _check_log(v: Tensor) -> None:
    if (v <= 0).any():
        raise EvalError("log of nonpositive value")


def _check_sqrt(v: Tensor) -> None:
    if (v < 0).any():
        raise EvalError("sqrt of negative value")


FUNCTIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "exp": torch.exp,
    "log": torch.log,
    "sin": torch.sin,
    "cos": torch.cos,
    "sqrt": torch.sqrt,
}

_DOMAIN_CHECKS: Dict[str, Callable[[Tensor], None]] = {
    "log": _check_log,
    "sqrt": _check_sqrt,
}


class ScalarExpr:
    """Base of the expression AST."""

    precedence: int = _PREC_ATOM

    def evaluate(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def max_coordinate(self) -> int:
        """Largest 1-based coordinate index referenced, 0 if none."""
        raise NotImplementedError

    def __str__(self) -> str:
        return format_expr(self)


@dataclass(frozen=True, eq=True)
class Num(ScalarExpr):
    value: float

    def evaluate(self, x: Tensor) -> Tensor:
        return torch.tensor(self.value, dtype=DTYPE)

    def max_coordinate(self) -> int:
        return 0


@dataclass(frozen=True, eq=True)
class Coord(ScalarExpr):
    """Coordinate with 0-based ``index``."""

    index: int

    def evaluate(self, x: Tensor) -> Tensor:
        return x[..., self.index]

    def max_coordinate(self) -> int:
        return self.index + 1


@dataclass(frozen=True, eq=True)
class Neg(ScalarExpr):
    operand: ScalarExpr
    precedence = _PREC_NEG

    def evaluate(self, x: Tensor) -> Tensor:
        return -self.operand.evaluate(x)

    def max_coordinate(self) -> int:
        return self.operand.max_coordinate()


@dataclass(frozen=True, eq=True)
class BinOp(ScalarExpr):
    op: str
    left: ScalarExpr
    right: ScalarExpr

    @property
    def precedence(self) -> int:  # type: ignore[override]
        return _PREC_ADD if self.op in "+-" else _PREC_MUL

    def evaluate(self, x: Tensor) -> Tensor:
        a = self.left.evaluate(x)
        b = self.right.evaluate(x)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if (b == 0).any():
            raise EvalError("division by zero")
        return a / b

    def max_coordinate(self) -> int:
        return max(self.left.max_coordinate(), self.right.max_coordinate())


@dataclass(frozen=True, eq=True)
class Pow(ScalarExpr):
    base: ScalarExpr
    exponent: int
    precedence = _PREC_POW

    def evaluate(self, x: Tensor) -> Tensor:
        b = self.base.evaluate(x)
        if self.exponent < 0 and (b == 0).any():
            raise EvalError("zero raised to a negative power")
        if self.exponent == 0:
            return torch.ones_like(b)
        return torch.pow(b, self.exponent)

    def max_coordinate(self) -> int:
        return self.base.max_coordinate()


@dataclass(frozen=True, eq=True)
class Call(ScalarExpr):
    func: str
    arg: ScalarExpr

    def evaluate(self, x: Tensor) -> Tensor:
        v = self.arg.evaluate(x)
        check = _DOMAIN_CHECKS.get(self.func)
        if check is not None:
            check(v)
        return FUNCTIONS[self.func](v)

    def max_coordinate(self) -> int:
        return self.arg.max_coordinate()


def _wrap(node: ScalarExpr, min_prec: int) -> str:
    text = format_expr(node)
    return f"({text})" if node.precedence < min_prec else text


def format_expr(node: ScalarExpr) -> str:
    """Render an AST as source that parses back to an equivalent tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Coord):
        return f"x{node.index + 1}"
    if isinstance(node, Neg):
        return "-" + _wrap(node.operand, _PREC_NEG)
    if isinstance(node, BinOp):
        prec = node.precedence
        return f"{_wrap(node.left, prec)} {node.op} {_wrap(node.right, prec + 1)}"
    if isinstance(node, Pow):
        exponent = str(node.exponent) if node.exponent >= 0 else f"({node.exponent})"
        return f"{_wrap(node.base, _PREC_ATOM)}^{exponent}"
    if isinstance(node, Call):
        return f"{node.func}({format_expr(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(src: str) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {src[pos]!r}", _byte_offset(src, pos), src
            )
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), _byte_offset(src, pos)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(src, len(src))))
    return tokens


def _byte_offset(src: str, index: int) -> int:
    return len(src[:index].encode("utf-8"))


class _Parser:
    def __init__(self, src: str, dim: Optional[int], coords: Sequence[str]):
        self.src = src
        self.dim = dim
        self.aliases = {name: i for i, name in enumerate(coords)}
        self.tokens = _tokenize(src)
        self.pos = 0

    @property
    def token(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str, tok: Optional[_Token] = None) -> ExprSyntaxError:
        tok = tok or self.token
        return ExprSyntaxError(message, tok.offset, self.src)

    def unexpected(self) -> ExprSyntaxError:
        tok = self.token
        if tok.kind == "end":
            return self.error("unexpected end of expression")
        return self.error(f"unexpected token {tok.text!r}")

    def expect(self, text: str) -> _Token:
        if self.token.kind != "op" or self.token.text != text:
            if self.token.kind == "end":
                raise self.unexpected()
            raise self.error(f"expected {text!r}")
        return self.advance()

    def parse(self) -> ScalarExpr:
        node = self.expr()
        if self.token.kind != "end":
            raise self.unexpected()
        return node

    def expr(self) -> ScalarExpr:
        node = self.term()
        while self.token.kind == "op" and self.token.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> ScalarExpr:
        node = self.unary()
        while self.token.kind == "op" and self.token.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> ScalarExpr:
        if self.token.kind == "op" and self.token.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> ScalarExpr:
        base = self.atom()
        if self.token.kind == "op" and self.token.text == "^":
            self.advance()
            node = Pow(base, self.exponent())
            if self.token.kind == "op" and self.token.text == "^":
                raise self.error("chained '^' needs parentheses")
            return node
        return base

    def exponent(self) -> int:
        tok = self.token
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            value = self.exponent()
            self.expect(")")
            return value
        sign = 1
        if tok.kind == "op" and tok.text in "+-":
            sign = -1 if tok.text == "-" else 1
            self.advance()
            tok = self.token
        if tok.kind != "number" or not tok.text.isdigit():
            raise self.error("exponent must be an integer literal", tok)
        self.advance()
        return sign * int(tok.text)

    def atom(self) -> ScalarExpr:
        tok = self.token
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            return self.identifier()
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise self.unexpected()

    def identifier(self) -> ScalarExpr:
        tok = self.advance()
        name = tok.text
        if name in FUNCTIONS:
            if not (self.token.kind == "op" and self.token.text == "("):
                raise self.error(f"function {name!r} needs a parenthesized argument")
            self.advance()
            arg = self.expr()
            self.expect(")")
            return Call(name, arg)
        if name in self.aliases:
            return Coord(self.aliases[name])
        m = _COORD_RE.fullmatch(name)
        if m is None:
            raise UnknownIdentifierError(
                f"unknown identifier {name!r}", tok.offset, self.src
            )
        index = int(m.group(1))
        if index < 1 or (self.dim is not None and index > self.dim):
            raise CoordinateRangeError(
                f"unknown coordinate {name!r} for a chart of dimension {self.dim}",
                tok.offset,
                self.src,
            )
        return Coord(index - 1)


def parse_expr(
    src: str, dim: Optional[int] = None, coords: Sequence[str] = ()
) -> ScalarExpr:
    """
    Parse ``src`` into an expression AST.

    Args:
        src: Expression source.
        dim: Chart dimension; coordinates beyond it are rejected. ``None`` accepts any.
        coords: Optional coordinate names usable as aliases of ``x1 .. xn``.

    Raises:
        ExprSyntaxError: Malformed input, with the UTF-8 byte offset of the offending token.
        UnknownIdentifierError: Identifier that is neither a coordinate nor a function.
        CoordinateRangeError: Coordinate index outside ``1 .. dim``.
    """
    if src.strip() == "":
        raise ExprSyntaxError("empty expression", 0, src)
    return _Parser(src, dim, coords).parse()
