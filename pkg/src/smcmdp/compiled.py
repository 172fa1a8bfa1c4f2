"""Vectorised view of a Model: guards, branches and rewards over column arrays.

States of a batch are an int64 matrix with one row per trace and one column
per variable. Every method reproduces the scalar semantics of ``model`` bit
for bit (same float operations in the same order), so a batch simulation and
the reference ``simulate`` loop produce identical traces.
"""
from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from .expr import compile_expr
from .model import PROB_TOL, DeadlockError, Model, ModelError, RangeViolation, RewardStructure


def _full(v, n, dtype):
    a = np.asarray(v)
    if a.shape == (n,) and a.dtype == dtype:
        return a
    return np.broadcast_to(a, (n,)).astype(dtype)


class _CompiledCommand:
    def __init__(self, model: Model, cmd, index, bool_vars):
        self.line = cmd.line
        self.guard = compile_expr(cmd.guard, index, bool_vars)
        self.probs = [compile_expr(b.prob, index, bool_vars) for b in cmd.branches]
        self.updates = [[(index[u.var], compile_expr(u.expr, index, bool_vars)) for u in b.updates]
                        for b in cmd.branches]


class CompiledReward:
    def __init__(self, r: RewardStructure, cm: "CompiledModel"):
        idx, bv = cm.model.var_index, cm.model.bool_vars
        self.name = r.name
        self.state_items = [(compile_expr(g, idx, bv), compile_expr(v, idx, bv)) for g, v in r.state_items]
        labels = [a.label for a in cm.actions]
        self.action_items = []
        for label, g, v in r.action_items:
            hits = np.array([lab == label for lab in labels], dtype=bool)
            if hits.any():
                self.action_items.append((hits, compile_expr(g, idx, bv), compile_expr(v, idx, bv)))

    def state(self, cols, n) -> np.ndarray:
        total = np.zeros(n)
        for g, v in self.state_items:
            hold = _full(g(cols), n, bool)
            total = total + np.where(hold, _full(v(cols), n, np.float64), 0.0)
        return total

    def action(self, cols, n, chosen) -> np.ndarray:
        total = np.zeros(n)
        for hits, g, v in self.action_items:
            hold = hits[chosen] & _full(g(cols), n, bool)
            if hold.any():
                total = total + np.where(hold, _full(v(cols), n, np.float64), 0.0)
        return total


class CompiledModel:
    """Model compiled to numpy closures; ``actions`` follow the canonical joint-action order."""

    def __init__(self, model: Model):
        self.model = model
        idx, bv = model.var_index, model.bool_vars
        self.nvars = len(model.variables)
        self.lo = np.array([v.lo for v in model.variables], dtype=np.int64)
        self.hi = np.array([v.hi for v in model.variables], dtype=np.int64)
        self.bits = [v.bit_width for v in model.variables]
        self.commands = {}
        for mi, m in enumerate(model.modules):
            for ci, c in enumerate(m.commands):
                self.commands[(mi, ci)] = _CompiledCommand(model, c, idx, bv)
        self.actions = model.joint_actions
        self.initial_state = np.array(model.initial_state, dtype=np.int64)
        self._rewards = {}

    def reward(self, name: Optional[str]) -> CompiledReward:
        r = self.model.reward(name)
        if r.name not in self._rewards:
            self._rewards[r.name] = CompiledReward(r, self)
        return self._rewards[r.name]

    @staticmethod
    def columns(states: np.ndarray) -> list:
        return [states[:, i] for i in range(states.shape[1])]

    def enabled(self, cols, n) -> np.ndarray:
        """Boolean matrix (rows, joint actions)."""
        guards = {ref: _full(c.guard(cols), n, bool) for ref, c in self.commands.items()}
        out = np.empty((n, len(self.actions)), dtype=bool)
        for j, a in enumerate(self.actions):
            g = guards[a.commands[0]]
            for ref in a.commands[1:]:
                g = g & guards[ref]
            out[:, j] = g
        return out

    def _probs(self, c: _CompiledCommand, cols, n) -> list:
        ps = [_full(f(cols), n, np.float64) for f in c.probs]
        total = np.zeros(n)
        for p in ps:
            total = total + p
        bad = (np.abs(total - 1.0) > PROB_TOL)
        for p in ps:
            bad |= (p < -PROB_TOL) | (p > 1 + PROB_TOL)
        if bad.any():
            row = int(np.argmax(bad))
            raise ModelError(f"command on line {c.line}: branch probabilities "
                             f"{[float(p[row]) for p in ps]} do not form a distribution")
        return ps

    def branch_table(self, action: int, cols, n):
        """Participating commands and the joint branch probabilities (one array per branch, canonical order)."""
        cmds = [self.commands[ref] for ref in self.actions[action].commands]
        probs = [self._probs(c, cols, n) for c in cmds]
        joint = []
        for combo in itertools.product(*(range(len(p)) for p in probs)):
            p = probs[0][combo[0]]
            for ci in range(1, len(cmds)):
                p = p * probs[ci][combo[ci]]
            joint.append(p)
        return cmds, joint

    def successors(self, states: np.ndarray, chosen: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Apply the chosen joint action of every row with uniform draw ``u``."""
        out = states.copy()
        for a in np.unique(chosen):
            rows = np.flatnonzero(chosen == a)
            sub = states[rows]
            cols = self.columns(sub)
            n = len(rows)
            cmds, joint = self.branch_table(int(a), cols, n)
            # half-open cumulative intervals, last branch takes the residue
            pick = np.full(n, len(joint) - 1, dtype=np.int64)
            open_ = np.ones(n, dtype=bool)
            acc = np.zeros(n)
            ua = u[rows]
            for j, p in enumerate(joint[:-1]):
                acc = acc + p
                hit = open_ & (ua < acc)
                pick[hit] = j
                open_ &= ~hit
            out[rows] = self._apply(cmds, pick, sub, cols)
        return out

    def expand(self, action: int, states: np.ndarray) -> list:
        """Every joint branch of ``action`` from each row: ``[(probabilities, successors)]``."""
        cols = self.columns(states)
        n = len(states)
        cmds, joint = self.branch_table(action, cols, n)
        return [(p, self._apply(cmds, np.full(n, j, dtype=np.int64), states, cols))
                for j, p in enumerate(joint)]

    def _apply(self, cmds, pick, sub, cols) -> np.ndarray:
        new = sub.copy()
        radix = [len(c.probs) for c in cmds]
        rem = pick
        per_cmd = []
        for r in reversed(radix):
            per_cmd.append(rem % r)
            rem = rem // r
        per_cmd.reverse()
        for c, bsel in zip(cmds, per_cmd):
            for bi, ups in enumerate(c.updates):
                if not ups:
                    continue
                sel = np.flatnonzero(bsel == bi)
                if not len(sel):
                    continue
                sub_cols = [col[sel] for col in cols]
                for var, f in ups:
                    v = np.broadcast_to(np.asarray(f(sub_cols)), (len(sel),)).astype(np.int64)
                    out_of_range = (v < self.lo[var]) | (v > self.hi[var])
                    if out_of_range.any():
                        d = self.model.variables[var]
                        raise RangeViolation(d.name, int(v[out_of_range][0]), d.lo, d.hi)
                    new[sel, var] = v
        return new

    def deadlock(self, states: np.ndarray, rows: np.ndarray) -> DeadlockError:
        return DeadlockError(tuple(int(x) for x in states[rows[0]]))
