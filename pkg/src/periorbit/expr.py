"""Scalar math expressions: parse, print, evaluate, compile.

Scenario files carry their right-hand sides as strings.  The grammar is a
small calculator language: decimal literals, named variables, ``+ - * / ^``
with the usual precedence (``^`` right-associative and binding tighter than
unary minus), parentheses, a fixed set of functions and the constants ``pi``
and ``e``.  There is no implicit multiplication.

Two evaluation routes exist on purpose.  ``eval_expression`` walks the tree
and is the readable reference; ``compile_expression`` generates a Python
function performing the identical operations in the identical order, so the
two agree to the last ulp.  Hot loops use the compiled route.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "EvalError",
    "Num",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Call",
    "ExprAst",
    "parse_expression",
    "print_expression",
    "eval_expression",
    "expression_variables",
    "substitute_constants",
    "compile_expression",
    "codegen_expression",
    "CODEGEN_NAMESPACE",
]


class ExprError(Exception):
    """Base class for expression failures."""


class ExprSyntaxError(ExprError):
    """Malformed source text.  ``position`` is a 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class EvalError(ExprError):
    """Evaluation hit an unbound variable or a domain error."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str  # "pi" or "e"


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-"
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Num | Const | Var | Unary | Binary | Call


@dataclass(frozen=True)
class ExprAst:
    """Immutable expression tree; ``str()`` gives a re-parseable rendering."""

    root: Node

    def variables(self) -> frozenset[str]:
        return expression_variables(self)

    def __str__(self) -> str:
        return print_expression(self)


FUNCTIONS: dict[str, int] = {
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "sign": 1,
    "pow": 2,
    "atan2": 2,
}

CONSTANTS: dict[str, float] = {"pi": math.pi, "e": math.e}


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


# ---------------------------------------------------------------------------
# Parser: sum -> product -> unary -> power -> atom, ^ right-associative.


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, text: str) -> None:
        kind, val, pos = self.peek()
        if kind != "op" or val != text:
            raise ExprSyntaxError(f"expected '{text}'", pos)
        self.advance()

    def parse(self) -> Node:
        node = self.sum()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}, expected end of input", pos)
        return node

    def sum(self) -> Node:
        node = self.product()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = Binary(val, node, self.product())
            else:
                return node

    def product(self) -> Node:
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = Binary(val, node, self.unary())
            else:
                return node

    def unary(self) -> Node:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Unary("-", self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            # exponent at unary level: 2^-3 parses, and a^b^c == a^(b^c)
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.advance()
        if kind == "number":
            return Num(float(val))
        if kind == "ident":
            nkind, nval, _ = self.peek()
            if nkind == "op" and nval == "(":
                return self.call(val, pos)
            if val in CONSTANTS:
                return Const(val)
            return Var(val)
        if kind == "op" and val == "(":
            node = self.sum()
            self.expect_op(")")
            return node
        raise ExprSyntaxError("expected expression", pos)

    def call(self, name: str, name_pos: int) -> Node:
        if name not in FUNCTIONS:
            raise ExprSyntaxError(f"unknown function '{name}'", name_pos)
        self.expect_op("(")
        args = [self.sum()]
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val == ",":
                self.advance()
                args.append(self.sum())
            elif kind == "op" and val == ")":
                self.advance()
                break
            else:
                raise ExprSyntaxError("expected ',' or ')'", pos)
        arity = FUNCTIONS[name]
        if len(args) != arity:
            raise ExprSyntaxError(
                f"function '{name}' takes {arity} argument(s), got {len(args)}",
                name_pos,
            )
        return Call(name, tuple(args))


def parse_expression(src: str) -> ExprAst:
    """Parse source text into an :class:`ExprAst`.

    Raises :class:`ExprSyntaxError` carrying the 0-based offset of the
    offending character on malformed input.
    """
    return ExprAst(_Parser(src).parse())


# ---------------------------------------------------------------------------
# Printing.  Minimal parentheses; parse(print(parse(s))) reproduces the tree.

_PREC_ATOM = 100
_PREC_POW = 40
_PREC_UNARY = 30
_PREC_MUL = 20
_PREC_ADD = 10

_BIN_PREC = {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}


def _prec(node: Node) -> int:
    if isinstance(node, Binary):
        return _BIN_PREC[node.op]
    if isinstance(node, Unary):
        return _PREC_UNARY
    return _PREC_ATOM


def _print_node(node: Node) -> str:
    if isinstance(node, Num):
        # negative literals only arise programmatically; wrap so the text
        # re-parses to something evaluating identically
        if node.value < 0 or math.copysign(1.0, node.value) < 0:
            return f"(-{-node.value!r})"
        return repr(node.value)
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        inner = _print_node(node.operand)
        if _prec(node.operand) <= _PREC_UNARY:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Binary):
        my = _BIN_PREC[node.op]
        left = _print_node(node.left)
        right = _print_node(node.right)
        if node.op == "^":
            # right-associative: parenthesize an operator-left, loose right
            if _prec(node.left) <= my:
                left = f"({left})"
            if _prec(node.right) < my:
                right = f"({right})"
        else:
            if _prec(node.left) < my:
                left = f"({left})"
            if _prec(node.right) <= my:
                right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_print_node(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def print_expression(ast: ExprAst) -> str:
    return _print_node(ast.root)


# ---------------------------------------------------------------------------
# Variable scan and constant substitution


def _collect_vars(node: Node, out: set[str]) -> None:
    if isinstance(node, Var):
        out.add(node.name)
    elif isinstance(node, Unary):
        _collect_vars(node.operand, out)
    elif isinstance(node, Binary):
        _collect_vars(node.left, out)
        _collect_vars(node.right, out)
    elif isinstance(node, Call):
        for a in node.args:
            _collect_vars(a, out)


def expression_variables(ast: ExprAst) -> frozenset[str]:
    out: set[str] = set()
    _collect_vars(ast.root, out)
    return frozenset(out)


def _subst(node: Node, values: Mapping[str, float]) -> Node:
    if isinstance(node, Var) and node.name in values:
        return Num(float(values[node.name]))
    if isinstance(node, Unary):
        return Unary(node.op, _subst(node.operand, values))
    if isinstance(node, Binary):
        return Binary(node.op, _subst(node.left, values), _subst(node.right, values))
    if isinstance(node, Call):
        return Call(node.name, tuple(_subst(a, values) for a in node.args))
    return node


def substitute_constants(ast: ExprAst, values: Mapping[str, float]) -> ExprAst:
    """Replace named variables by numeric literals (used for scenario defaults)."""
    return ExprAst(_subst(ast.root, values))


# ---------------------------------------------------------------------------
# Reference evaluation


def _sign(x: float) -> float:
    if x == 0.0:
        return 0.0
    return math.copysign(1.0, x)


def _eval(node: Node, env: Mapping[str, float]) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Var):
        try:
            return float(env[node.name])
        except KeyError:
            raise EvalError(f"unbound variable '{node.name}'") from None
    if isinstance(node, Unary):
        return -_eval(node.operand, env)
    if isinstance(node, Binary):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        try:
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                return a / b
            return a**b
        except ZeroDivisionError:
            raise EvalError(f"division by zero in '{node.op}'") from None
        except OverflowError:
            raise EvalError(f"overflow in '{node.op}'") from None
        except ValueError as exc:
            raise EvalError(f"domain error in '{node.op}': {exc}") from None
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        try:
            if node.name == "sin":
                return math.sin(args[0])
            if node.name == "cos":
                return math.cos(args[0])
            if node.name == "tan":
                return math.tan(args[0])
            if node.name == "exp":
                return math.exp(args[0])
            if node.name == "log":
                return math.log(args[0])
            if node.name == "sqrt":
                return math.sqrt(args[0])
            if node.name == "abs":
                return abs(args[0])
            if node.name == "sign":
                return _sign(args[0])
            if node.name == "pow":
                return args[0] ** args[1]
            if node.name == "atan2":
                return math.atan2(args[0], args[1])
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            raise EvalError(f"domain error in '{node.name}': {exc}") from None
    raise TypeError(f"not an expression node: {node!r}")


def eval_expression(ast: ExprAst, env: Mapping[str, float]) -> float:
    """Evaluate against a variable environment.

    Unbound variables and domain errors (log of a non-positive number,
    division by zero, overflow) raise :class:`EvalError`.
    """
    return _eval(ast.root, env)


# ---------------------------------------------------------------------------
# Compilation.  The generated source performs the same float operations in
# the same order as the reference walker, so results agree bit for bit.

CODEGEN_NAMESPACE: dict[str, object] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
    "sign": _sign,
    "atan2": math.atan2,
    "pi": math.pi,
    "e": math.e,
    "__builtins__": {},
}


def mangle(name: str) -> str:
    """Variable name as it appears in generated code.

    The prefix keeps user variables (which may shadow function names or be
    Python keywords such as ``lambda``) out of the codegen namespace.
    """
    return "v_" + name


def codegen_expression(ast: ExprAst) -> str:
    """Render as a Python expression over ``mangle``-d variable names."""
    return _gen(ast.root)


def _gen(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Var):
        return mangle(node.name)
    if isinstance(node, Unary):
        return f"(-{_gen(node.operand)})"
    if isinstance(node, Binary):
        op = "**" if node.op == "^" else node.op
        return f"({_gen(node.left)} {op} {_gen(node.right)})"
    if isinstance(node, Call):
        if node.name == "pow":  # same operation as ^, keeps routes identical
            return f"({_gen(node.args[0])} ** {_gen(node.args[1])})"
        return f"{node.name}({', '.join(_gen(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def compile_expression(ast: ExprAst, arg_names: Sequence[str]) -> Callable[..., float]:
    """Compile to a positional-argument Python function.

    ``arg_names`` fixes the calling convention and must cover every variable
    in the expression.
    """
    missing = expression_variables(ast) - set(arg_names)
    if missing:
        raise ExprError(f"unbound variables in compiled expression: {sorted(missing)}")
    params = ", ".join(mangle(n) for n in arg_names)
    src = f"def _compiled({params}):\n    return {codegen_expression(ast)}\n"
    namespace = dict(CODEGEN_NAMESPACE)
    local: dict[str, object] = {}
    exec(compile(src, "<expr>", "exec"), namespace, local)
    return local["_compiled"]  # type: ignore[return-value]
