"""
Scalar field expressions
Recursive descent parser and vectorised evaluator for the source, flux,
Dirichlet and ambient-temperature fields given as text in run configs
"""

import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import ExpressionDomainError, ExpressionSyntaxError

Array = np.ndarray

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)

VARIABLES = ("x", "y")

_UNARY_FUNCTIONS: dict[str, Callable[[Array], Array]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_VARIADIC_FUNCTIONS: dict[str, Callable[[Array, Array], Array]] = {
    "min": np.minimum,
    "max": np.maximum,
}


# ============================================================================
# Abstract syntax tree
# ============================================================================

@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Union[Number, Variable, Unary, Binary, Call]


@dataclass(frozen=True)
class _Token:
    kind: str  # number | name | op | end
    text: str
    offset: int


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(
                f"Unexpected character {text[start]!r} at offset {_byte_offset(text, start)}",
                offset=_byte_offset(text, start),
                expected=("number", "name", "operator"),
            )
        kind = match.lastgroup or "op"
        tokens.append(_Token(kind, match.group(kind), _byte_offset(text, match.start(kind))))
        pos = match.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


class _Parser:
    """Grammar (precedence ^ > unary minus > * / > + -):

        expr    := term (("+" | "-") term)*
        term    := unary (("*" | "/") unary)*
        unary   := ("-" | "+") unary | power
        power   := primary ("^" unary)?
        primary := number | variable | function "(" args ")" | "(" expr ")"
    """

    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def _advance(self) -> _Token:
        token = self.current
        self.index += 1
        return token

    def _fail(self, expected: tuple[str, ...]) -> ExpressionSyntaxError:
        token = self.current
        found = "end of input" if token.kind == "end" else repr(token.text)
        return ExpressionSyntaxError(
            f"Expected {' or '.join(expected)} but found {found} at offset {token.offset}",
            offset=token.offset,
            expected=expected,
        )

    def _expect(self, text: str) -> None:
        if self.current.text != text or self.current.kind != "op":
            raise self._fail((repr(text),))
        self._advance()

    def parse(self) -> Node:
        node = self._expr()
        if self.current.kind != "end":
            raise self._fail(("operator", "end of input"))
        return node

    def _expr(self) -> Node:
        node = self._term()
        while self.current.kind == "op" and self.current.text in "+-":
            op = self._advance().text
            node = Binary(op, node, self._term())
        return node

    def _term(self) -> Node:
        node = self._unary()
        while self.current.kind == "op" and self.current.text in "*/":
            op = self._advance().text
            node = Binary(op, node, self._unary())
        return node

    def _unary(self) -> Node:
        if self.current.kind == "op" and self.current.text in "+-":
            op = self._advance().text
            return Unary(op, self._unary())
        return self._power()

    def _power(self) -> Node:
        base = self._primary()
        if self.current.kind == "op" and self.current.text == "^":
            self._advance()
            return Binary("^", base, self._unary())
        return base

    def _primary(self) -> Node:
        token = self.current
        if token.kind == "number":
            self._advance()
            return Number(float(token.text))
        if token.kind == "name":
            self._advance()
            if token.text in VARIABLES:
                return Variable(token.text)
            if token.text in _UNARY_FUNCTIONS or token.text in _VARIADIC_FUNCTIONS:
                return self._call(token)
            raise ExpressionSyntaxError(
                f"Unknown name {token.text!r} at offset {token.offset}",
                offset=token.offset,
                expected=VARIABLES + tuple(_UNARY_FUNCTIONS) + tuple(_VARIADIC_FUNCTIONS),
            )
        if token.kind == "op" and token.text == "(":
            self._advance()
            node = self._expr()
            self._expect(")")
            return node
        raise self._fail(("number", "variable", "function", "'('"))

    def _call(self, name: _Token) -> Node:
        self._expect("(")
        args = [self._expr()]
        while self.current.kind == "op" and self.current.text == ",":
            self._advance()
            args.append(self._expr())
        self._expect(")")
        if name.text in _UNARY_FUNCTIONS and len(args) != 1:
            raise ExpressionSyntaxError(
                f"{name.text}() takes exactly one argument", offset=name.offset, expected=("')'",)
            )
        if name.text in _VARIADIC_FUNCTIONS and len(args) < 2:
            raise ExpressionSyntaxError(
                f"{name.text}() takes at least two arguments", offset=name.offset, expected=("','",)
            )
        return Call(name.text, tuple(args))


# ============================================================================
# Evaluation and printing
# ============================================================================

def _evaluate(node: Node, x: Array, y: Array) -> Array:
    if isinstance(node, Number):
        return np.full(np.broadcast(x, y).shape, node.value)
    if isinstance(node, Variable):
        return np.broadcast_to(x if node.name == "x" else y, np.broadcast(x, y).shape).astype(float)
    if isinstance(node, Unary):
        value = _evaluate(node.operand, x, y)
        return -value if node.op == "-" else value
    if isinstance(node, Call):
        args = [_evaluate(arg, x, y) for arg in node.args]
        if node.name == "sqrt" and np.any(args[0] < 0.0):
            raise ExpressionDomainError("sqrt of a negative value", function="sqrt")
        if node.name in _UNARY_FUNCTIONS:
            with np.errstate(over="ignore"):
                return _UNARY_FUNCTIONS[node.name](args[0])
        result = args[0]
        for arg in args[1:]:
            result = _VARIADIC_FUNCTIONS[node.name](result, arg)
        return result

    left = _evaluate(node.left, x, y)
    right = _evaluate(node.right, x, y)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        if np.any(right == 0.0):
            raise ExpressionDomainError("division by zero", operator="/")
        return left / right
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        result = np.power(left, right)
    bad = np.isnan(result) & np.isfinite(left) & np.isfinite(right)
    if np.any(bad) or np.any((left == 0.0) & (right < 0.0)):
        raise ExpressionDomainError("power outside the real domain", operator="^")
    return result


def _to_text(node: Node) -> str:
    if isinstance(node, Number):
        return repr(node.value)
    if isinstance(node, Variable):
        return node.name
    if isinstance(node, Unary):
        return f"({node.op}{_to_text(node.operand)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_to_text(arg) for arg in node.args)})"
    return f"({_to_text(node.left)} {node.op} {_to_text(node.right)})"


@dataclass(frozen=True)
class Expr:
    """Parsed scalar field f(x, y); callable on scalars or numpy arrays"""

    root: Node
    text: str

    def __call__(self, x, y) -> Array:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return _evaluate(self.root, x, y)

    def to_text(self) -> str:
        return _to_text(self.root)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.root, Number)


def parse(text: str) -> Expr:
    """Parse an expression in x and y"""
    if not text or not text.strip():
        raise ExpressionSyntaxError("Empty expression", offset=0, expected=("number", "variable"))
    return Expr(_Parser(text).parse(), text)


def evaluate(expr: Expr, x, y) -> Array:
    """Evaluate a parsed expression at (x, y)"""
    return expr(x, y)


def constant(value: float) -> Expr:
    """Expression for a constant field"""
    return Expr(Number(float(value)), repr(float(value)))
