"""Integer/boolean expression trees shared by models and properties.

Expressions are immutable dataclasses. They can be evaluated on a single
state (``evaluate``) or compiled into closures over numpy column arrays
(``compile_expr``). Both paths follow the same arithmetic: integer
operations stay integral, anything touching a decimal literal or ``/`` is
IEEE double, so the scalar and the vectorised simulators agree bit for bit.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

Value = Union[int, float, bool]


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Lit(Expr):
    value: Value


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # '-' or '!'
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str  # 'min' or 'max'
    args: tuple


TRUE = Lit(True)
FALSE = Lit(False)

ARITH = ("+", "-", "*", "/")
COMPARE = ("=", "!=", "<", "<=", ">", ">=")
LOGIC = ("&", "|")
FUNCS = ("min", "max")

# binding strength used by the printer; higher binds tighter
PRECEDENCE = {"|": 1, "&": 2, "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
              "+": 5, "-": 5, "*": 6, "/": 6}

_PY_OPS = {
    "+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.truediv,
    "=": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
    ">": operator.gt, ">=": operator.ge,
}

_NP_OPS = {
    "+": np.add, "-": np.subtract, "*": np.multiply, "/": np.true_divide,
    "=": np.equal, "!=": np.not_equal, "<": np.less, "<=": np.less_equal,
    ">": np.greater, ">=": np.greater_equal, "&": np.logical_and, "|": np.logical_or,
}


class ExprTypeError(Exception):
    """Raised when an expression does not type-check."""


class UnknownIdentifier(Exception):
    def __init__(self, name: str):
        super().__init__(f"unknown identifier '{name}'")
        self.name = name


def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Unary):
        return free_vars(e.arg)
    if isinstance(e, Binary):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, Call):
        out: set[str] = set()
        for a in e.args:
            out |= free_vars(a)
        return out
    return set()


def _lit_type(v: Value) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    return "double"


def infer_type(e: Expr, types: Mapping[str, str]) -> str:
    """Return 'int', 'double' or 'bool' for ``e``; raise ExprTypeError otherwise."""
    if isinstance(e, Lit):
        return _lit_type(e.value)
    if isinstance(e, Var):
        if e.name not in types:
            raise UnknownIdentifier(e.name)
        return types[e.name]
    if isinstance(e, Unary):
        t = infer_type(e.arg, types)
        if e.op == "!":
            if t != "bool":
                raise ExprTypeError(f"'!' applied to {t}")
            return "bool"
        if t == "bool":
            raise ExprTypeError("unary '-' applied to bool")
        return t
    if isinstance(e, Call):
        ts = [infer_type(a, types) for a in e.args]
        if not ts or "bool" in ts:
            raise ExprTypeError(f"{e.func}() needs numeric arguments")
        return "double" if "double" in ts else "int"
    if isinstance(e, Binary):
        lt, rt = infer_type(e.left, types), infer_type(e.right, types)
        if e.op in LOGIC:
            if lt != "bool" or rt != "bool":
                raise ExprTypeError(f"'{e.op}' needs bool operands, got {lt} and {rt}")
            return "bool"
        if e.op in ("=", "!="):
            if (lt == "bool") != (rt == "bool"):
                raise ExprTypeError(f"cannot compare {lt} with {rt}")
            return "bool"
        if "bool" in (lt, rt):
            raise ExprTypeError(f"'{e.op}' applied to bool")
        if e.op in COMPARE:
            return "bool"
        if e.op == "/":
            return "double"
        return "double" if "double" in (lt, rt) else "int"
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expr, env: Mapping[str, Value]) -> Value:
    """Evaluate on one state; ``env`` maps identifiers to typed values."""
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnknownIdentifier(e.name) from None
    if isinstance(e, Unary):
        v = evaluate(e.arg, env)
        return (not v) if e.op == "!" else -v
    if isinstance(e, Binary):
        if e.op == "&":
            return bool(evaluate(e.left, env)) and bool(evaluate(e.right, env))
        if e.op == "|":
            return bool(evaluate(e.left, env)) or bool(evaluate(e.right, env))
        return _PY_OPS[e.op](evaluate(e.left, env), evaluate(e.right, env))
    if isinstance(e, Call):
        vals = [evaluate(a, env) for a in e.args]
        return min(vals) if e.func == "min" else max(vals)
    raise TypeError(f"not an expression: {e!r}")


ColumnFn = Callable[[list], object]


def compile_expr(e: Expr, index: Mapping[str, int], bool_vars=frozenset()) -> ColumnFn:
    """Compile ``e`` to ``f(cols)`` where ``cols[i]`` is the int64 array of variable i.

    Constant subtrees compile to plain scalars, so callers must broadcast.
    """
    if isinstance(e, Lit):
        v = e.value
        return lambda cols: v
    if isinstance(e, Var):
        if e.name not in index:
            raise UnknownIdentifier(e.name)
        i = index[e.name]
        if e.name in bool_vars:
            return lambda cols: cols[i] != 0
        return lambda cols: cols[i]
    if isinstance(e, Unary):
        f = compile_expr(e.arg, index, bool_vars)
        if e.op == "!":
            return lambda cols: np.logical_not(f(cols))
        return lambda cols: np.negative(f(cols))
    if isinstance(e, Binary):
        lf = compile_expr(e.left, index, bool_vars)
        rf = compile_expr(e.right, index, bool_vars)
        op = _NP_OPS[e.op]
        return lambda cols: op(lf(cols), rf(cols))
    if isinstance(e, Call):
        fs = [compile_expr(a, index, bool_vars) for a in e.args]
        red = np.minimum if e.func == "min" else np.maximum

        def call(cols):
            out = fs[0](cols)
            for f in fs[1:]:
                out = red(out, f(cols))
            return out
        return call
    raise TypeError(f"not an expression: {e!r}")


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.func, tuple(substitute(a, mapping) for a in e.args))
    return e


def fold(e: Expr, consts: Mapping[str, Value] = {}) -> Expr:
    """Substitute constants and collapse every constant subtree to a literal."""
    if isinstance(e, Var):
        return Lit(consts[e.name]) if e.name in consts else e
    if isinstance(e, Unary):
        a = fold(e.arg, consts)
        if isinstance(a, Lit):
            return Lit(evaluate(Unary(e.op, a), {}))
        return Unary(e.op, a)
    if isinstance(e, Binary):
        l, r = fold(e.left, consts), fold(e.right, consts)
        if isinstance(l, Lit) and isinstance(r, Lit):
            if e.op == "/" and r.value == 0:
                raise ExprTypeError("division by zero in constant expression")
            return Lit(evaluate(Binary(e.op, l, r), {}))
        return Binary(e.op, l, r)
    if isinstance(e, Call):
        args = tuple(fold(a, consts) for a in e.args)
        if all(isinstance(a, Lit) for a in args):
            return Lit(evaluate(Call(e.func, args), {}))
        return Call(e.func, args)
    return e


def format_value(v: Value) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_text(e: Expr, parent: int = 0) -> str:
    """Render with the minimum parentheses that re-parse to the same tree."""
    if isinstance(e, Lit):
        s = format_value(e.value)
        if isinstance(e.value, (int, float)) and not isinstance(e.value, bool) and e.value < 0:
            return f"({s})"
        return s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        return f"{e.op}{to_text(e.arg, 7)}"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_text(a) for a in e.args)})"
    if isinstance(e, Binary):
        p = PRECEDENCE[e.op]
        # comparisons do not chain; left-assoc otherwise, so the right side binds one tighter
        lp = p + 1 if e.op in COMPARE else p
        s = f"{to_text(e.left, lp)} {e.op} {to_text(e.right, p + 1)}"
        return f"({s})" if p < parent else s
    raise TypeError(f"not an expression: {e!r}")
