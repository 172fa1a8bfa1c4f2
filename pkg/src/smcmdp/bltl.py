"""Bounded LTL: formula trees, the reference trace semantics and run-time monitors.

``evaluate_trace`` is the literal definition (until over a finite window,
with F/G/and derived by the usual equivalences) and serves as the oracle
for the incremental monitors. ``BatchMonitor`` decides many traces at once
using three-valued (Kleene) evaluation of the prefix seen so far, so a
verdict is returned as soon as every extension of the prefix agrees.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .expr import TRUE, Binary, Expr, Lit, Unary, compile_expr, evaluate, to_text as expr_text


class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class Atom(Formula):
    expr: Expr


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula


@dataclass(frozen=True)
class Finally(Formula):
    k: int
    arg: Formula


@dataclass(frozen=True)
class Globally(Formula):
    k: int
    arg: Formula


@dataclass(frozen=True)
class Until(Formula):
    k: int
    left: Formula
    right: Formula


TRUE_F = Atom(TRUE)


class Verdict(enum.Enum):
    FALSE = 0
    TRUE = 1
    UNDECIDED = 2


class InsufficientTrace(ValueError):
    pass


def children(f: Formula) -> tuple:
    if isinstance(f, Atom):
        return ()
    if isinstance(f, (Not, Next, Finally, Globally)):
        return (f.arg,)
    return (f.left, f.right)


def horizon(f: Formula) -> int:
    """Number of steps beyond the current position that ``f`` may inspect."""
    if isinstance(f, Atom):
        return 0
    if isinstance(f, Next):
        return 1 + horizon(f.arg)
    if isinstance(f, (Finally, Globally)):
        return f.k + horizon(f.arg)
    if isinstance(f, Until):
        return f.k + max(horizon(f.left), horizon(f.right))
    return max(horizon(c) for c in children(f))


def depth(f: Formula) -> int:
    cs = children(f)
    return 0 if not cs else 1 + max(depth(c) for c in cs)


def size(f: Formula) -> int:
    return 1 + sum(size(c) for c in children(f))


def is_state_formula(f: Formula) -> bool:
    if isinstance(f, Atom):
        return True
    if isinstance(f, (Not, And, Or)):
        return all(is_state_formula(c) for c in children(f))
    return False


def state_expr(f: Formula) -> Expr:
    """Boolean expression equivalent to a temporal-operator-free formula."""
    if isinstance(f, Atom):
        return f.expr
    if isinstance(f, Not):
        return Unary("!", state_expr(f.arg))
    if isinstance(f, And):
        return Binary("&", state_expr(f.left), state_expr(f.right))
    if isinstance(f, Or):
        return Binary("|", state_expr(f.left), state_expr(f.right))
    raise ValueError("formula has temporal operators")


def to_text(f: Formula, parent: int = 0) -> str:
    if isinstance(f, Atom):
        e = f.expr
        s = expr_text(e)
        if isinstance(e, (Binary, Unary)) and (e.op in ("&", "|", "!")):
            return f"({s})"
        return s
    if isinstance(f, Or):
        s = f"{to_text(f.left, 1)} | {to_text(f.right, 2)}"
        p = 1
    elif isinstance(f, And):
        s = f"{to_text(f.left, 2)} & {to_text(f.right, 3)}"
        p = 2
    elif isinstance(f, Until):
        s = f"{to_text(f.left, 4)} U<={f.k} {to_text(f.right, 4)}"
        p = 3
    else:
        prefix = {Not: "!", Next: "X "}.get(type(f))
        if prefix is None:
            prefix = f"{'F' if isinstance(f, Finally) else 'G'}<={f.k} "
        s = prefix + to_text(f.arg, 4)
        p = 4
    return f"({s})" if p < parent else s


# --------------------------------------------------------------------------
# reference semantics


def evaluate_trace(f: Formula, trace: Sequence[Mapping], i: int = 0) -> bool:
    """Decide ``trace^(i) |= f``; states are mappings from variable name to value."""
    need = i + horizon(f) + 1
    if len(trace) < need:
        raise InsufficientTrace(f"trace has {len(trace)} states, formula needs {need}")
    return _sat(f, trace, i)


def _until(k, left, right, trace, i) -> bool:
    for j in range(i, i + k + 1):
        if _sat(right, trace, j) and (j == i or all(_sat(left, trace, l) for l in range(i, j))):
            return True
    return False


def _sat(f: Formula, trace, i: int) -> bool:
    if isinstance(f, Atom):
        return bool(evaluate(f.expr, trace[i]))
    if isinstance(f, Not):
        return not _sat(f.arg, trace, i)
    if isinstance(f, Or):
        return _sat(f.left, trace, i) or _sat(f.right, trace, i)
    if isinstance(f, And):
        return not (not _sat(f.left, trace, i) or not _sat(f.right, trace, i))
    if isinstance(f, Next):
        return _sat(f.arg, trace, i + 1)
    if isinstance(f, Until):
        return _until(f.k, f.left, f.right, trace, i)
    if isinstance(f, Finally):
        return _until(f.k, TRUE_F, f.arg, trace, i)
    if isinstance(f, Globally):
        return not _until(f.k, TRUE_F, Not(f.arg), trace, i)
    raise TypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------------------
# three-valued helpers; 0 = false, 1 = true, 2 = undecided

F3, T3, U3 = np.int8(0), np.int8(1), np.int8(2)


def not3(x):
    return np.where(x == U3, U3, T3 - x).astype(np.int8)


def and3(x, y):
    out = np.full(np.broadcast(x, y).shape, U3, dtype=np.int8)
    out[(x == T3) & (y == T3)] = T3
    out[(x == F3) | (y == F3)] = F3
    return out


def or3(x, y):
    out = np.full(np.broadcast(x, y).shape, U3, dtype=np.int8)
    out[(x == F3) & (y == F3)] = F3
    out[(x == T3) | (y == T3)] = T3
    return out


def _as_bool(v, n):
    return np.broadcast_to(np.asarray(v, dtype=bool), (n,))


class _StateNode:
    def __init__(self, f, index, bool_vars):
        self.fn = compile_expr(state_expr(f), index, bool_vars)
        self.val = None

    def step(self, t, cols, n, prefix):
        if self.val is None:
            self.val = _as_bool(self.fn(cols), n).astype(np.int8)
        return self.val

    def compact(self, keep):
        if self.val is not None:
            self.val = self.val[keep]


class _UntilNode:
    """``left U<=k right`` at position 0 with state-formula operands, in O(1) per step."""

    def __init__(self, k, left, right, index, bool_vars):
        self.k = k
        self.lf = compile_expr(state_expr(left), index, bool_vars)
        self.rf = compile_expr(state_expr(right), index, bool_vars)
        self.res = None

    def step(self, t, cols, n, prefix):
        if self.res is None:
            self.res = np.full(n, U3, dtype=np.int8)
        if t <= self.k:
            open_ = self.res == U3
            if open_.any():
                r = _as_bool(self.rf(cols), n)
                l = _as_bool(self.lf(cols), n)
                self.res[open_ & r] = T3
                self.res[open_ & ~r & ~l] = F3
                if t == self.k:
                    self.res[self.res == U3] = F3
        return self.res

    def compact(self, keep):
        if self.res is not None:
            self.res = self.res[keep]


class _NotNode:
    def __init__(self, child):
        self.child = child

    def step(self, t, cols, n, prefix):
        return not3(self.child.step(t, cols, n, prefix))

    def compact(self, keep):
        self.child.compact(keep)


class _BinNode:
    def __init__(self, op, left, right):
        self.op, self.left, self.right = op, left, right

    def step(self, t, cols, n, prefix):
        return self.op(self.left.step(t, cols, n, prefix), self.right.step(t, cols, n, prefix))

    def compact(self, keep):
        self.left.compact(keep)
        self.right.compact(keep)


class _GenericNode:
    """Any other formula: Kleene evaluation over the stored prefix at every step."""

    def __init__(self, f, index, bool_vars):
        self.f = f
        self.h = horizon(f)
        self.fns = {TRUE_F: compile_expr(TRUE, index, bool_vars)}
        self._collect(f, index, bool_vars)
        self.res = None

    def _collect(self, f, index, bool_vars):
        if isinstance(f, Atom):
            if f not in self.fns:
                self.fns[f] = compile_expr(f.expr, index, bool_vars)
        for c in children(f):
            self._collect(c, index, bool_vars)

    def step(self, t, cols, n, prefix):
        if self.res is not None and not (self.res == U3).any():
            return self.res
        self.res = self._eval(self.f, 0, prefix, n, {})
        return self.res

    def _eval(self, f, i, prefix, n, memo):
        key = (f, i)
        if key in memo:
            return memo[key]
        if isinstance(f, Atom):
            if i < len(prefix):
                out = _as_bool(self.fns[f](prefix[i]), n).astype(np.int8)
            else:
                out = np.full(n, U3, dtype=np.int8)
        elif isinstance(f, Not):
            out = not3(self._eval(f.arg, i, prefix, n, memo))
        elif isinstance(f, And):
            out = and3(self._eval(f.left, i, prefix, n, memo), self._eval(f.right, i, prefix, n, memo))
        elif isinstance(f, Or):
            out = or3(self._eval(f.left, i, prefix, n, memo), self._eval(f.right, i, prefix, n, memo))
        elif isinstance(f, Next):
            out = self._eval(f.arg, i + 1, prefix, n, memo)
        elif isinstance(f, Globally):
            out = not3(self._until(f.k, TRUE_F, Not(f.arg), i, prefix, n, memo))
        elif isinstance(f, Finally):
            out = self._until(f.k, TRUE_F, f.arg, i, prefix, n, memo)
        else:
            out = self._until(f.k, f.left, f.right, i, prefix, n, memo)
        memo[key] = out
        return out

    def _until(self, k, left, right, i, prefix, n, memo):
        res = np.zeros(n, dtype=np.int8)
        all_left = np.ones(n, dtype=np.int8)
        for j in range(i, i + k + 1):
            res = or3(res, and3(self._eval(right, j, prefix, n, memo), all_left))
            all_left = and3(all_left, self._eval(left, j, prefix, n, memo))
        return res

    def compact(self, keep):
        if self.res is not None:
            self.res = self.res[keep]


def _build(f, index, bool_vars):
    if is_state_formula(f):
        return _StateNode(f, index, bool_vars)
    if isinstance(f, Not):
        return _NotNode(_build(f.arg, index, bool_vars))
    if isinstance(f, And):
        return _BinNode(and3, _build(f.left, index, bool_vars), _build(f.right, index, bool_vars))
    if isinstance(f, Or):
        return _BinNode(or3, _build(f.left, index, bool_vars), _build(f.right, index, bool_vars))
    if isinstance(f, Until) and is_state_formula(f.left) and is_state_formula(f.right):
        return _UntilNode(f.k, f.left, f.right, index, bool_vars)
    if isinstance(f, Finally) and is_state_formula(f.arg):
        return _UntilNode(f.k, TRUE_F, f.arg, index, bool_vars)
    if isinstance(f, Globally) and is_state_formula(f.arg):
        return _NotNode(_UntilNode(f.k, TRUE_F, Not(f.arg), index, bool_vars))
    return _GenericNode(f, index, bool_vars)


def _needs_prefix(node) -> bool:
    if isinstance(node, _GenericNode):
        return True
    if isinstance(node, _NotNode):
        return _needs_prefix(node.child)
    if isinstance(node, _BinNode):
        return _needs_prefix(node.left) or _needs_prefix(node.right)
    return False


class BatchMonitor:
    """Monitor ``n`` independent traces in lock step.

    Call ``step(cols)`` with the column arrays of the next state of every
    live trace; it returns an int8 array (0 false, 1 true, 2 undecided).
    ``compact(keep)`` drops finished traces from the internal state.
    """

    def __init__(self, f: Formula, index: Mapping[str, int], bool_vars=frozenset(), n: int = 1):
        self.formula = f
        self.horizon = horizon(f)
        self.n = n
        self.t = 0
        self.root = _build(f, index, bool_vars)
        self.prefix = [] if _needs_prefix(self.root) else None

    def step(self, cols) -> np.ndarray:
        if self.prefix is not None:
            self.prefix.append(list(cols))
        out = self.root.step(self.t, cols, self.n, self.prefix)
        if self.t >= self.horizon and (out == U3).any():
            raise AssertionError("monitor undecided past the formula horizon")
        self.t += 1
        return out

    def compact(self, keep: np.ndarray) -> None:
        self.root.compact(keep)
        if self.prefix is not None:
            self.prefix = [[c[keep] for c in cols] for cols in self.prefix]
        self.n = int(np.count_nonzero(keep))


class Monitor:
    """Single-trace monitor over states given as value tuples in ``var_names`` order."""

    def __init__(self, f: Formula, var_names: Sequence[str], bool_vars=frozenset()):
        self.formula = f
        self.var_names = tuple(var_names)
        self._batch = BatchMonitor(f, {v: i for i, v in enumerate(self.var_names)}, bool_vars, 1)
        self.verdict = Verdict.UNDECIDED
        self.length = 0

    @property
    def horizon(self) -> int:
        return self._batch.horizon

    def step(self, state: Sequence[int]) -> Verdict:
        if self.verdict is not Verdict.UNDECIDED:
            raise RuntimeError("monitor already decided")
        cols = [np.array([v], dtype=np.int64) for v in state]
        self.verdict = Verdict(int(self._batch.step(cols)[0]))
        self.length += 1
        return self.verdict


def step_monitor(m: Monitor, s: Sequence[int]) -> Verdict:
    return m.step(s)
