"""Per-trace simulation compiled with numba.

``build_kernel`` turns a model, a formula and an optional reward property
into Python source for one nopython function that simulates a batch of
(sigma, seed) rows one trace at a time, keeping the state in scalar locals.
It performs the same integer and floating point operations in the same
order as ``simulate_batch``, so both produce identical results.

Formulas are monitored as a Kleene combination of leaves. A leaf is a
bounded until between state formulas, started a fixed number of steps after
the beginning of the trace (``X`` is pushed down to the leaves). Formulas
outside that fragment, and machines without numba, use the numpy simulator.
"""
from __future__ import annotations

import hashlib
import importlib.util
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import bltl
from .bltl import Formula
from .compiled import CompiledModel
from .expr import Binary, Call, Expr, Lit, Unary, Var, infer_type
from .model import PROB_TOL, ModelError, RewardProperty
from .scheduler import GAMMA, MIX1, MIX2, BatchResult, SchedulerMode, simulate_batch

try:
    from numba.core.errors import NumbaError
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False
    NumbaError = Exception


class Unsupported(Exception):
    """The formula is outside the fragment the kernel monitors."""


# --------------------------------------------------------------------------
# formula -> Kleene tree over shifted until leaves


@dataclass(frozen=True)
class Leaf:
    offset: int
    k: int
    left: Expr
    right: Expr


def leaves_of(f: Formula, offset: int = 0):
    """``(tree, leaves)`` where tree nodes are ``('leaf', i)``, ``('not', a)``, ``('and'|'or', a, b)``."""
    leaves: list = []

    def go(f, d):
        if bltl.is_state_formula(f):
            leaves.append(Leaf(d, 0, Lit(True), bltl.state_expr(f)))
            return ("leaf", len(leaves) - 1)
        if isinstance(f, bltl.Not):
            return ("not", go(f.arg, d))
        if isinstance(f, bltl.And):
            return ("and", go(f.left, d), go(f.right, d))
        if isinstance(f, bltl.Or):
            return ("or", go(f.left, d), go(f.right, d))
        if isinstance(f, bltl.Next):
            return go(f.arg, d + 1)
        if isinstance(f, bltl.Until) and bltl.is_state_formula(f.left) and bltl.is_state_formula(f.right):
            leaves.append(Leaf(d, f.k, bltl.state_expr(f.left), bltl.state_expr(f.right)))
            return ("leaf", len(leaves) - 1)
        if isinstance(f, bltl.Finally) and bltl.is_state_formula(f.arg):
            leaves.append(Leaf(d, f.k, Lit(True), bltl.state_expr(f.arg)))
            return ("leaf", len(leaves) - 1)
        if isinstance(f, bltl.Globally) and bltl.is_state_formula(f.arg):
            leaves.append(Leaf(d, f.k, Lit(True), Unary("!", bltl.state_expr(f.arg))))
            return ("not", ("leaf", len(leaves) - 1))
        raise Unsupported(bltl.to_text(f))

    tree = go(f, offset)
    return tree, leaves


# --------------------------------------------------------------------------
# code generation

_PY_BIN = {"+": "+", "-": "-", "*": "*", "/": "/", "=": "==", "!=": "!=", "<": "<", "<=": "<=",
           ">": ">", ">=": ">=", "&": "&", "|": "|"}


class _Gen:
    def __init__(self, cm: CompiledModel):
        self.cm = cm
        self.model = cm.model
        self.lines: list = []

    def var(self, i: int, prefix: str = "s") -> str:
        return f"{prefix}{i}"

    def expr(self, e: Expr, prefix: str = "s") -> str:
        m = self.model
        if isinstance(e, Lit):
            v = e.value
            if isinstance(v, bool):
                return "True" if v else "False"
            if isinstance(v, int):
                return f"np.int64({v})"
            return f"np.float64({float(v)!r})"
        if isinstance(e, Var):
            i = m.var_index[e.name]
            if e.name in m.bool_vars:
                return f"({prefix}{i} != 0)"
            return f"{prefix}{i}"
        if isinstance(e, Unary):
            a = self.expr(e.arg, prefix)
            return f"(not {a})" if e.op == "!" else f"(-{a})"
        if isinstance(e, Binary):
            a, b = self.expr(e.left, prefix), self.expr(e.right, prefix)
            return f"({a} {_PY_BIN[e.op]} {b})"
        if isinstance(e, Call):
            double = infer_type(e, m.types) == "double"
            args = [self.expr(a, prefix) for a in e.args]
            if double:
                args = [f"np.float64({a})" for a in args]
            out = args[0]
            for a in args[1:]:
                out = f"{e.func}({out}, {a})"
            return out
        raise TypeError(f"not an expression: {e!r}")

    def emit(self, indent: int, text: str) -> None:
        self.lines.append("    " * indent + text)


def _tree_src(node) -> str:
    kind = node[0]
    if kind == "leaf":
        return f"l{node[1]}"
    if kind == "not":
        return f"_not3({_tree_src(node[1])})"
    return f"_{kind}3({_tree_src(node[1])}, {_tree_src(node[2])})"


_HEADER = '''import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _not3(x):
    return x if x == 2 else 1 - x


@njit(cache=True, inline="always")
def _and3(x, y):
    if x == 0 or y == 0:
        return 0
    if x == 1 and y == 1:
        return 1
    return 2


@njit(cache=True, inline="always")
def _or3(x, y):
    if x == 1 or y == 1:
        return 1
    if x == 0 and y == 0:
        return 0
    return 2


@njit(cache=True)
def _hadd(h, hv, bits, m):
    for _ in range(bits):
        h = h + h
        if h >= m:
            h = h - m
    h = h + hv
    if h >= m:
        h = h - m
    return h


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64({mix1})
    z = (z ^ (z >> np.uint64(27))) * np.uint64({mix2})
    return z ^ (z >> np.uint64(31))


'''


def generate_source(cm: CompiledModel, phi: Formula, rho: Optional[RewardProperty],
                    mode: SchedulerMode) -> str:
    """Source of a module defining ``run(sigmas, seeds, max_steps, modulus, loops, verdict, reward, steps, err)``."""
    tree, leaves = leaves_of(phi)
    model = cm.model
    g = _Gen(cm)
    nv = cm.nvars
    acts = cm.actions
    reward = model.reward(rho.reward_name) if rho is not None else None
    labels = [a.label for a in acts]

    def state_reward_lines(ind, target, prefix="s"):
        g.emit(ind, f"{target} = 0.0")
        for gd, v in reward.state_items:
            g.emit(ind, f"if {g.expr(gd, prefix)}:")
            g.emit(ind + 1, f"{target} = {target} + np.float64({g.expr(v, prefix)})")

    def leaf_lines(ind):
        for i, lf in enumerate(leaves):
            g.emit(ind, f"if l{i} == 2 and t >= {lf.offset}:")
            g.emit(ind + 1, f"if {g.expr(lf.right)}:")
            g.emit(ind + 2, f"l{i} = 1")
            g.emit(ind + 1, f"elif not {g.expr(lf.left)}:")
            g.emit(ind + 2, f"l{i} = 0")
            g.emit(ind + 1, f"elif t == {lf.offset + lf.k}:")
            g.emit(ind + 2, f"l{i} = 0")
        g.emit(ind, f"v = {_tree_src(tree)}")

    g.emit(0, "@njit(cache=True, error_model='numpy')")
    g.emit(0, "def run(sigmas, seeds, max_steps, modulus, loops, verdict, reward, steps, err):")
    g.emit(1, f"G = np.uint64({GAMMA})")
    g.emit(1, "m = np.uint64(modulus)")
    g.emit(1, "for row in range(sigmas.shape[0]):")
    for i, x in enumerate(cm.initial_state):
        g.emit(2, f"s{i} = np.int64({int(x)})")
    g.emit(2, "h0 = sigmas[row] % m")
    g.emit(2, "h = h0")
    g.emit(2, "ps = seeds[row]")
    g.emit(2, "acc = 0.0")
    g.emit(2, "inst = 0.0")
    for i in range(len(leaves)):
        g.emit(2, f"l{i} = 2")
    g.emit(2, "t = 0")
    leaf_lines(2)
    g.emit(2, "while v == 2:")
    g.emit(3, "if t >= max_steps:")
    g.emit(4, "break")
    if mode is SchedulerMode.MEMORYLESS:
        g.emit(3, "h = h0")
    # errors set flags and are raised once per step; long chains of branches
    # overflow numba's recursive SSA pass on large models
    g.emit(3, "bad = False")
    for i in range(nv):
        g.emit(3, f"hv = np.uint64(s{i} - np.int64({int(cm.lo[i])}))")
        g.emit(3, f"bad = bad | (hv >= np.uint64({1 << cm.bits[i]}))")
        g.emit(3, f"h = _hadd(h, hv, {cm.bits[i]}, m)")
    g.emit(3, "if bad:")
    g.emit(4, "err[0] = row + 1")
    g.emit(4, "err[1] = 3")
    g.emit(4, "return")
    # guards of every command once, then joint actions
    for (mi, ci), cmd in sorted(cm.commands.items()):
        src_cmd = model.modules[mi].commands[ci]
        g.emit(3, f"g_{mi}_{ci} = {g.expr(src_cmd.guard)}")
    g.emit(3, "count = 0")
    for j, a in enumerate(acts):
        cond = " & ".join(f"g_{mi}_{ci}" for mi, ci in a.commands)
        g.emit(3, f"e{j} = {cond}")
        g.emit(3, f"count += np.int64(e{j})")
    g.emit(3, "a = -1")
    g.emit(3, "if count == 0:")
    g.emit(4, "if not loops:")
    g.emit(5, "err[0] = row + 1")
    g.emit(5, "err[1] = 1")
    g.emit(5, "return")
    g.emit(3, "else:")
    g.emit(4, "pick = np.int64(_mix(h + G) % np.uint64(count))")
    for j in range(len(acts)):
        g.emit(4, f"hit = e{j} & (pick == 0) & (a < 0)")
        g.emit(4, f"a = a + ({j} - a) * np.int64(hit)")
        g.emit(4, f"pick -= np.int64(e{j})")
    if reward is not None:
        cut = rho.k if rho.kind in ("C", "I") else None
        ind = 3
        if cut is not None:
            g.emit(3, f"if t < {cut}:")
            ind = 4
        state_reward_lines(ind, "sr")
        g.emit(ind, "ar = 0.0")
        for label, gd, v in reward.action_items:
            hits = [j for j, lab in enumerate(labels) if lab == label]
            if not hits:
                continue
            cond = " | ".join(f"(a == {j})" for j in hits)
            g.emit(ind, f"if ({cond}) & {g.expr(gd)}:")
            g.emit(ind + 1, f"ar = ar + np.float64({g.expr(v)})")
        g.emit(ind, "acc = acc + (sr + ar)")
    for i in range(nv):
        g.emit(3, f"n{i} = s{i}")
    g.emit(3, "bad_p = False")
    g.emit(3, "bad_r = False")
    g.emit(3, "if a >= 0:")
    g.emit(4, "ps = ps + G")
    g.emit(4, "u = np.float64(_mix(ps) >> np.uint64(11)) * 1.1102230246251565e-16")
    for j, a in enumerate(acts):
        g.emit(4, f"{'if' if j == 0 else 'elif'} a == {j}:")
        cmds = [model.modules[mi].commands[ci] for mi, ci in a.commands]
        for c_i, cmd in enumerate(cmds):
            names = []
            for b_i, br in enumerate(cmd.branches):
                name = f"p{c_i}_{b_i}"
                names.append(name)
                g.emit(5, f"{name} = np.float64({g.expr(br.prob)})")
            g.emit(5, "tot = 0.0")
            for name in names:
                g.emit(5, f"tot = tot + {name}")
            bad = " | ".join([f"(abs(tot - 1.0) > {PROB_TOL!r})"] +
                             [f"({x} < {-PROB_TOL!r}) | ({x} > {1 + PROB_TOL!r})" for x in names])
            g.emit(5, f"bad_p = bad_p | {bad}")
        combos = [()]
        for cmd in cmds:
            combos = [c + (b,) for c in combos for b in range(len(cmd.branches))]
        g.emit(5, f"sel = {len(combos) - 1}")
        if len(combos) > 1:
            g.emit(5, "q = 0.0")
            for k, combo in enumerate(combos[:-1]):
                prod = " * ".join(f"p{c_i}_{b}" for c_i, b in enumerate(combo))
                g.emit(5, f"q = q + {prod}")
                # first k with u < q, else the last branch
                g.emit(5, f"hit = (sel == {len(combos) - 1}) & (u < q)")
                g.emit(5, f"sel = sel + ({k} - sel) * np.int64(hit)")
        for k, combo in enumerate(combos):
            body = []
            for cmd, b in zip(cmds, combo):
                for up in cmd.branches[b].updates:
                    vi = model.var_index[up.var]
                    body.append((vi, up.expr))
            if not body:
                continue
            g.emit(5, f"if sel == {k}:")
            for vi, ex in body:
                val = g.expr(ex)
                g.emit(6, f"n{vi} = np.int64({val})")
                g.emit(6, f"bad_r = bad_r | (n{vi} < {int(cm.lo[vi])}) | (n{vi} > {int(cm.hi[vi])})")
    g.emit(3, "if bad_p | bad_r:")
    g.emit(4, "err[0] = row + 1")
    g.emit(4, "err[1] = 2 if bad_p else 4")
    g.emit(4, "return")
    for i in range(nv):
        g.emit(3, f"s{i} = n{i}")
    g.emit(3, "t += 1")
    leaf_lines(3)
    if reward is not None and rho.kind == "I":
        g.emit(3, f"if t == {rho.k}:")
        state_reward_lines(4, "inst")
    g.emit(2, "verdict[row] = v")
    g.emit(2, "steps[row] = t")
    if reward is None:
        g.emit(2, "reward[row] = np.nan")
    elif rho.kind == "F":
        g.emit(2, "reward[row] = acc")
    else:
        val = "inst" if rho.kind == "I" else "acc"
        g.emit(2, f"reward[row] = {val} if v == 1 else np.inf")
    return _HEADER.format(mix1=MIX1, mix2=MIX2) + "\n".join(g.lines) + "\n"


# --------------------------------------------------------------------------
# loading

_loaded: dict = {}


def _kernel_dir() -> str:
    path = os.environ.get("SMCMDP_KERNEL_DIR") or os.path.join(tempfile.gettempdir(), "smcmdp-kernels")
    os.makedirs(path, exist_ok=True)
    return path


def _load(source: str):
    key = hashlib.sha256(source.encode()).hexdigest()[:20]
    if key in _loaded:
        return _loaded[key]
    name = f"smcmdp_kernel_{key}"
    path = os.path.join(_kernel_dir(), name + ".py")
    if not os.path.exists(path):
        tmp = f"{path}.{os.getpid()}.tmp"
        with open(tmp, "w") as fh:
            fh.write(source)
        os.replace(tmp, path)
    spec = importlib.util.spec_from_file_location(name, path)
    mod = importlib.util.module_from_spec(spec)
    sys.modules[name] = mod
    spec.loader.exec_module(mod)
    _loaded[key] = mod.run
    return mod.run


class Kernel:
    """Callable with the ``simulate_batch`` contract, backed by a compiled per-trace loop."""

    def __init__(self, cm: CompiledModel, phi: Formula, rho: Optional[RewardProperty],
                 mode: SchedulerMode, max_steps: int, modulus: int, deadlock_loops: bool):
        if not HAVE_NUMBA:
            raise Unsupported("numba is not installed")
        if max_steps < bltl.horizon(phi) + 1:
            raise ValueError(f"max_steps must be at least {bltl.horizon(phi) + 1}")
        self.args = (cm, phi, rho, mode, max_steps, modulus, deadlock_loops)
        self.source = generate_source(cm, phi, rho, mode)
        self._run = _load(self.source)
        try:
            # compile now so that compiler limits surface as a fallback, not mid-estimate
            self._call(np.empty(0, dtype=np.uint64), np.empty(0, dtype=np.uint64))
        except (RecursionError, NumbaError) as exc:
            raise Unsupported(f"kernel does not compile: {type(exc).__name__}") from exc

    def _call(self, sigmas, seeds):
        _, _, _, _, max_steps, modulus, loops = self.args
        n = len(sigmas)
        out = (np.empty(n, dtype=np.int8), np.empty(n), np.empty(n, dtype=np.int64), np.zeros(2, dtype=np.int64))
        self._run(sigmas, seeds, max_steps, modulus, loops, *out)
        return out

    def __call__(self, sigmas, prob_seeds) -> BatchResult:
        cm, phi, rho, mode, max_steps, modulus, loops = self.args
        sigmas = np.ascontiguousarray(sigmas, dtype=np.uint64)
        seeds = np.ascontiguousarray(prob_seeds, dtype=np.uint64)
        n = len(sigmas)
        verdict, reward, steps, err = self._call(sigmas, seeds)
        if err[0]:
            row = int(err[0]) - 1
            # the reference path raises the descriptive exception for this row
            simulate_batch(cm, phi, sigmas[row:row + 1], seeds[row:row + 1], mode, max_steps, rho, modulus, loops)
            raise ModelError(f"simulation failed in row {row} (code {int(err[1])})")
        return BatchResult(verdict, reward, steps, np.empty((n, 0), dtype=np.int64))


def make_simulator(cm: CompiledModel, phi: Formula, rho: Optional[RewardProperty], mode: SchedulerMode,
                   max_steps: int, modulus: int, deadlock_loops: bool, backend: str = "auto"):
    """``f(sigmas, seeds) -> BatchResult`` using the compiled kernel when possible."""
    if backend not in ("auto", "numba", "numpy"):
        raise ValueError("backend must be 'auto', 'numba' or 'numpy'")
    if backend != "numpy":
        try:
            return Kernel(cm, phi, rho, mode, max_steps, modulus, deadlock_loops)
        except Unsupported:
            if backend == "numba":
                raise

    def run(sigmas, seeds):
        return simulate_batch(cm, phi, sigmas, seeds, mode, max_steps, rho, modulus, deadlock_loops)
    return run
