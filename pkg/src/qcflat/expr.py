"""Scalar expression language for surface definitions.

Expressions are written in variables x1..xn with decimal literals, the
operators + - * / ^ and the functions sqrt, sin, cos, exp, log.  The
exponent of ^ must be an integer constant, which keeps the language
closed under differentiation (sqrt covers the half powers that show up
in graph heights).  Trees are immutable and evaluation is pure, so
nodes can be shared freely across threads.

Domain violations (sqrt of a negative, log of a non-positive, division
by zero) raise EvalDomainError instead of propagating NaN: callers that
scan surfaces need to tell "outside the domain" apart from "numerically
zero".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ExprNode",
    "ExprError",
    "ExprSyntaxError",
    "EvalDomainError",
    "FUNCTIONS",
    "parse",
    "evaluate",
    "differentiate",
    "simplify",
    "to_text",
    "const",
    "var",
    "neg",
    "binop",
    "call",
]

FUNCTIONS = ("sqrt", "sin", "cos", "exp", "log")
_BINARY = ("+", "-", "*", "/", "^")


class ExprError(ValueError):
    """Base class for expression-language errors."""


class ExprSyntaxError(ExprError):
    """Parse failure; carries the byte offset of the offending input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalDomainError(ExprError):
    """A subexpression was evaluated outside its real domain."""

    def __init__(self, message: str, node: "ExprNode", point):
        super().__init__(f"{message} in '{to_text(node)}' at {tuple(float(v) for v in point)}")
        self.node = node
        self.point = tuple(float(v) for v in point)


@dataclass(frozen=True)
class ExprNode:
    """One node of an expression tree.

    kind is one of "const", "var", "neg", "binop", "call"; the payload
    fields value (constants), index (1-based variable index) and op
    (operator symbol or function name) are meaningful per kind.
    """

    kind: str
    args: tuple = ()
    value: float = 0.0
    index: int = 0
    op: str = ""

    def __post_init__(self):
        k = self.kind
        if k == "const":
            if not math.isfinite(self.value):
                raise ExprError("constants must be finite")
        elif k == "var":
            if self.index < 1:
                raise ExprError("variable index must be >= 1")
        elif k == "neg":
            if len(self.args) != 1:
                raise ExprError("negation takes one operand")
        elif k == "binop":
            if self.op not in _BINARY or len(self.args) != 2:
                raise ExprError(f"bad binary operation {self.op!r}")
        elif k == "call":
            if self.op not in FUNCTIONS or len(self.args) != 1:
                raise ExprError(f"unknown function {self.op!r}")
        else:
            raise ExprError(f"unknown node kind {k!r}")


def const(value: float) -> ExprNode:
    return ExprNode("const", value=float(value))


def var(index: int) -> ExprNode:
    return ExprNode("var", index=int(index))


def neg(operand: ExprNode) -> ExprNode:
    return ExprNode("neg", args=(operand,))


def binop(op: str, left: ExprNode, right: ExprNode) -> ExprNode:
    return ExprNode("binop", args=(left, right), op=op)


def call(name: str, operand: ExprNode) -> ExprNode:
    return ExprNode("call", args=(operand,), op=name)


# ---------------------------------------------------------------------------
# Parsing

_NUM, _IDENT, _OP, _END = "num", "ident", "op", "end"


def _tokenize(text: str):
    tokens = []
    i, size = 0, len(text)
    while i < size:
        ch = text[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < size and text[j].isdigit():
                j += 1
            if j < size and text[j] == ".":
                j += 1
                while j < size and text[j].isdigit():
                    j += 1
            if j < size and text[j] in "eE":
                k = j + 1
                if k < size and text[k] in "+-":
                    k += 1
                if k < size and text[k].isdigit():
                    k += 1
                    while k < size and text[k].isdigit():
                        k += 1
                    j = k
            lexeme = text[i:j]
            try:
                value = float(lexeme)
            except ValueError:
                raise ExprSyntaxError(f"malformed number {lexeme!r}", i) from None
            tokens.append((_NUM, lexeme, i, value))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < size and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append((_IDENT, text[i:j], i, None))
            i = j
            continue
        if ch in "+-*/^()":
            tokens.append((_OP, ch, i, None))
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append((_END, "", size, None))
    return tokens


class _Parser:
    def __init__(self, tokens, dim):
        self.tokens = tokens
        self.dim = dim
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def match_op(self, *symbols):
        kind, text, _, _ = self.peek()
        if kind == _OP and text in symbols:
            return self.advance()
        return None

    def expr(self):
        node = self.term()
        while True:
            tok = self.match_op("+", "-")
            if tok is None:
                return node
            node = binop(tok[1], node, self.term())

    def term(self):
        node = self.unary()
        while True:
            tok = self.match_op("*", "/")
            if tok is None:
                return node
            node = binop(tok[1], node, self.unary())

    def unary(self):
        if self.match_op("-"):
            operand = self.unary()
            if operand.kind == "const":
                return const(-operand.value)
            return neg(operand)
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.match_op("^")
        if tok is None:
            return base
        exponent = self._exponent_operand()
        value = _const_value(exponent)
        if value is None or not float(value).is_integer() or abs(value) > 2**31:
            raise ExprSyntaxError("exponent must be an integer constant", tok[2])
        return binop("^", base, const(float(value)))

    def _exponent_operand(self):
        if self.match_op("-"):
            operand = self._exponent_operand()
            if operand.kind == "const":
                return const(-operand.value)
            return neg(operand)
        return self.power()

    def atom(self):
        kind, text, offset, value = self.peek()
        if kind == _NUM:
            self.advance()
            return const(value)
        if kind == _IDENT:
            self.advance()
            if text in FUNCTIONS:
                if not self.match_op("("):
                    raise ExprSyntaxError(f"expected '(' after {text!r}", self.peek()[2])
                inner = self.expr()
                if not self.match_op(")"):
                    raise ExprSyntaxError("expected ')'", self.peek()[2])
                return call(text, inner)
            if len(text) > 1 and text[0] == "x" and text[1:].isdigit():
                index = int(text[1:])
                if index < 1:
                    raise ExprSyntaxError(f"unknown identifier {text!r}", offset)
                if index > self.dim:
                    raise ExprSyntaxError(
                        f"variable x{index} exceeds dimension {self.dim}", offset
                    )
                return var(index)
            raise ExprSyntaxError(f"unknown identifier {text!r}", offset)
        if kind == _OP and text == "(":
            self.advance()
            inner = self.expr()
            if not self.match_op(")"):
                raise ExprSyntaxError("expected ')'", self.peek()[2])
            return inner
        if kind == _END:
            raise ExprSyntaxError("unexpected end of input", offset)
        raise ExprSyntaxError(f"unexpected token {text!r}", offset)


def _const_value(node):
    """Value of a constants-only subtree, or None if not foldable."""
    if node.kind == "const":
        return node.value
    if node.kind == "neg":
        v = _const_value(node.args[0])
        return None if v is None else -v
    if node.kind == "binop":
        a = _const_value(node.args[0])
        b = _const_value(node.args[1])
        if a is None or b is None:
            return None
        return _try_binop(node.op, a, b)
    if node.kind == "call":
        v = _const_value(node.args[0])
        return None if v is None else _try_call(node.op, v)
    return None


def parse(text: str, dim: int) -> ExprNode:
    """Parse an expression over variables x1..x<dim>.

    Raises ExprSyntaxError (with byte offset) on malformed input,
    unknown identifiers, out-of-range variables or non-integer
    exponents.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    parser = _Parser(_tokenize(text), dim)
    node = parser.expr()
    kind, tok_text, offset, _ = parser.peek()
    if kind != _END:
        raise ExprSyntaxError(f"unexpected trailing input {tok_text!r}", offset)
    return node


# ---------------------------------------------------------------------------
# Evaluation

def evaluate(node: ExprNode, point) -> float:
    """Evaluate at a point (sequence of floats, 1-based variable indexing)."""
    k = node.kind
    if k == "const":
        return node.value
    if k == "var":
        if node.index > len(point):
            raise ExprError(
                f"variable x{node.index} exceeds point dimension {len(point)}"
            )
        v = float(point[node.index - 1])
        if not math.isfinite(v):
            raise EvalDomainError("non-finite coordinate", node, point)
        return v
    if k == "neg":
        return -evaluate(node.args[0], point)
    if k == "binop":
        a = evaluate(node.args[0], point)
        op = node.op
        if op == "^":
            exponent = node.args[1]
            if exponent.kind != "const" or not float(exponent.value).is_integer():
                raise ExprError("exponent is not an integer constant")
            try:
                out = a ** int(exponent.value)
            except ZeroDivisionError:
                raise EvalDomainError("zero raised to a negative power", node, point) from None
            except OverflowError:
                raise EvalDomainError("overflow in power", node, point) from None
            return _finite(out, node, point)
        b = evaluate(node.args[1], point)
        if op == "+":
            out = a + b
        elif op == "-":
            out = a - b
        elif op == "*":
            out = a * b
        else:  # "/"
            if b == 0.0:
                raise EvalDomainError("division by zero", node, point)
            out = a / b
        return _finite(out, node, point)
    # call
    a = evaluate(node.args[0], point)
    op = node.op
    if op == "sqrt":
        if a < 0.0:
            raise EvalDomainError("sqrt of a negative value", node, point)
        return math.sqrt(a)
    if op == "log":
        if a <= 0.0:
            raise EvalDomainError("log of a non-positive value", node, point)
        return math.log(a)
    try:
        if op == "exp":
            return math.exp(a)
        if op == "sin":
            return math.sin(a)
        return math.cos(a)
    except OverflowError:
        raise EvalDomainError("overflow in function evaluation", node, point) from None


def _finite(value, node, point):
    if not math.isfinite(value):
        raise EvalDomainError("non-finite intermediate value", node, point)
    return value


# ---------------------------------------------------------------------------
# Differentiation

def differentiate(node: ExprNode, variable: int) -> ExprNode:
    """Exact symbolic partial derivative with respect to x<variable>."""
    if variable < 1:
        raise ValueError("variable index must be >= 1")
    k = node.kind
    if k == "const":
        return const(0.0)
    if k == "var":
        return const(1.0 if node.index == variable else 0.0)
    if k == "neg":
        return neg(differentiate(node.args[0], variable))
    if k == "binop":
        u, v = node.args
        op = node.op
        if op == "^":
            if v.kind != "const" or not float(v.value).is_integer():
                raise ExprError("exponent is not an integer constant")
            power = int(v.value)
            if power == 0:
                return const(0.0)
            du = differentiate(u, variable)
            return binop(
                "*",
                binop("*", const(float(power)), binop("^", u, const(float(power - 1)))),
                du,
            )
        du = differentiate(u, variable)
        dv = differentiate(v, variable)
        if op == "+":
            return binop("+", du, dv)
        if op == "-":
            return binop("-", du, dv)
        if op == "*":
            return binop("+", binop("*", du, v), binop("*", u, dv))
        return binop(
            "/",
            binop("-", binop("*", du, v), binop("*", u, dv)),
            binop("^", v, const(2.0)),
        )
    # call
    u = node.args[0]
    du = differentiate(u, variable)
    op = node.op
    if op == "sqrt":
        return binop("/", du, binop("*", const(2.0), call("sqrt", u)))
    if op == "sin":
        return binop("*", call("cos", u), du)
    if op == "cos":
        return neg(binop("*", call("sin", u), du))
    if op == "exp":
        return binop("*", call("exp", u), du)
    return binop("/", du, u)  # log


# ---------------------------------------------------------------------------
# Simplification

def _try_binop(op, a, b):
    try:
        if op == "+":
            out = a + b
        elif op == "-":
            out = a - b
        elif op == "*":
            out = a * b
        elif op == "/":
            if b == 0.0:
                return None
            out = a / b
        else:
            if not float(b).is_integer():
                return None
            out = a ** int(b)
    except (OverflowError, ZeroDivisionError):
        return None
    return out if math.isfinite(out) else None


def _try_call(op, a):
    try:
        if op == "sqrt":
            return math.sqrt(a) if a >= 0.0 else None
        if op == "log":
            return math.log(a) if a > 0.0 else None
        if op == "exp":
            out = math.exp(a)
            return out if math.isfinite(out) else None
        return math.sin(a) if op == "sin" else math.cos(a)
    except OverflowError:
        return None


def _is_const(node, value):
    return node.kind == "const" and node.value == value


def simplify(node: ExprNode) -> ExprNode:
    """Constant folding plus the identities 0+e, 0*e, 1*e, e^1, e^0.

    The result evaluates identically to the input (up to rounding) at
    every point of the input's domain.
    """
    k = node.kind
    if k in ("const", "var"):
        return node
    args = tuple(simplify(a) for a in node.args)
    if k == "neg":
        (u,) = args
        if u.kind == "const":
            return const(-u.value)
        if u.kind == "neg":
            return u.args[0]
        return neg(u)
    if k == "call":
        (u,) = args
        if u.kind == "const":
            folded = _try_call(node.op, u.value)
            if folded is not None:
                return const(folded)
        return call(node.op, u)
    a, b = args
    op = node.op
    if a.kind == "const" and b.kind == "const":
        folded = _try_binop(op, a.value, b.value)
        if folded is not None:
            return const(folded)
    if op == "+":
        if _is_const(a, 0.0):
            return b
        if _is_const(b, 0.0):
            return a
    elif op == "-":
        if _is_const(b, 0.0):
            return a
        if _is_const(a, 0.0):
            return simplify(neg(b))
    elif op == "*":
        if _is_const(a, 0.0) or _is_const(b, 0.0):
            return const(0.0)
        if _is_const(a, 1.0):
            return b
        if _is_const(b, 1.0):
            return a
    elif op == "/":
        if _is_const(b, 1.0):
            return a
    elif op == "^":
        if _is_const(b, 1.0):
            return a
        if _is_const(b, 0.0):
            return const(1.0)
    return binop(op, a, b)


# ---------------------------------------------------------------------------
# Printing

_BIN_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_PREC_UNARY = 3
_PREC_ATOM = 5


def to_text(node: ExprNode) -> str:
    """Canonical text form; parse(to_text(e)) is structurally equal to e
    for every tree the grammar can produce."""
    return _render(node)[0]


def _render(node):
    k = node.kind
    if k == "const":
        text = repr(node.value)
        return text, (_PREC_UNARY if text.startswith("-") else _PREC_ATOM)
    if k == "var":
        return f"x{node.index}", _PREC_ATOM
    if k == "call":
        inner, _ = _render(node.args[0])
        return f"{node.op}({inner})", _PREC_ATOM
    if k == "neg":
        inner, prec = _render(node.args[0])
        if prec < _PREC_UNARY:
            inner = f"({inner})"
        return f"-{inner}", _PREC_UNARY
    op = node.op
    prec = _BIN_PREC[op]
    left, lp = _render(node.args[0])
    right, rp = _render(node.args[1])
    if op == "^":
        if lp < _PREC_ATOM:
            left = f"({left})"
        if rp < _PREC_UNARY:
            right = f"({right})"
        return f"{left}^{right}", prec
    if lp < prec:
        left = f"({left})"
    if rp <= prec:
        right = f"({right})"
    return f"{left} {op} {right}", prec
