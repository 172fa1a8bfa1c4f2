"""Formula enumeration and a vectorised reference semantics, shared by the monitor tests."""
import itertools

import numpy as np

from smcmdp.bltl import And, Atom, BatchMonitor, Finally, Globally, Next, Not, Or, Until, horizon
from smcmdp.expr import Var

A, B = Atom(Var("a")), Atom(Var("b"))
INDEX = {"a": 0, "b": 1}
BOOLS = frozenset(INDEX)
BOUNDS = (1, 2, 3, 4)


def formulas(n):
    """Every formula of exactly ``n`` nodes over the atoms a and b."""
    if n == 1:
        yield A
        yield B
        return
    for f in formulas(n - 1):
        yield Not(f)
        yield Next(f)
        for k in BOUNDS:
            yield Finally(k, f)
            yield Globally(k, f)
    for i in range(1, n - 1):
        lefts = list(formulas(i))
        rights = list(formulas(n - 1 - i))
        for l, r in itertools.product(lefts, rights):
            yield And(l, r)
            yield Or(l, r)
            for k in BOUNDS:
                yield Until(k, l, r)


def atoms_of(f):
    if isinstance(f, Atom):
        return {f.expr.name}
    if isinstance(f, (Not, Next, Finally, Globally)):
        return atoms_of(f.arg)
    return atoms_of(f.left) | atoms_of(f.right)


def all_traces(f):
    """Every trace of length ``horizon(f) + 1`` over the atoms ``f`` mentions; shape (n, length, 2)."""
    used = sorted(atoms_of(f))
    length = horizon(f) + 1
    width = len(used) * length
    codes = np.arange(1 << width, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(width)) & 1).astype(bool)
    traces = np.zeros((len(codes), length, 2), dtype=bool)
    for j, name in enumerate(used):
        traces[:, :, INDEX[name]] = bits[:, j * length:(j + 1) * length]
    return traces


def reference(f, traces, i=0):
    """Satisfaction of ``f`` at offset ``i`` on every trace, by literal expansion of the semantics."""
    if isinstance(f, Atom):
        return traces[:, i, INDEX[f.expr.name]]
    if isinstance(f, Not):
        return ~reference(f.arg, traces, i)
    if isinstance(f, And):
        return reference(f.left, traces, i) & reference(f.right, traces, i)
    if isinstance(f, Or):
        return reference(f.left, traces, i) | reference(f.right, traces, i)
    if isinstance(f, Next):
        return reference(f.arg, traces, i + 1)
    if isinstance(f, Finally):
        return _until(f.k, None, f.arg, traces, i)
    if isinstance(f, Globally):
        return ~_until(f.k, None, Not(f.arg), traces, i)
    return _until(f.k, f.left, f.right, traces, i)


def _until(k, left, right, traces, i):
    # exists j in i..i+k with right at j and (j = i or left at every l in i..j-1)
    n = len(traces)
    out = np.zeros(n, dtype=bool)
    for j in range(i, i + k + 1):
        prefix_ok = np.ones(n, dtype=bool)
        if left is not None:
            for l in range(i, j):
                prefix_ok &= reference(left, traces, l)
        out |= reference(right, traces, j) & prefix_ok
    return out


def run_monitor(f, traces):
    """Feed every trace to a batch monitor; return (final verdicts, step of first decision).

    Raises AssertionError if a decided verdict ever changes.
    """
    n, length, _ = traces.shape
    mon = BatchMonitor(f, INDEX, BOOLS, n)
    first = np.full(n, -1)
    verdict = np.full(n, 2, dtype=np.int8)
    for t in range(length):
        out = mon.step([traces[:, t, 0].astype(np.int64), traces[:, t, 1].astype(np.int64)])
        decided = verdict != 2
        if (out[decided] != verdict[decided]).any():
            raise AssertionError(f"verdict flipped at step {t + 1}")
        new = (~decided) & (out != 2)
        verdict[new] = out[new]
        first[new] = t + 1
    return verdict, first
