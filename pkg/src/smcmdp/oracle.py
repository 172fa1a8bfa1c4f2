"""Exact finite-horizon values by explicit-state exploration and value iteration.

Used to validate the statistical estimates on models small enough to
enumerate: maximum, minimum and uniform-random-scheduler values of a reward
property or of the probability of a simple bounded formula.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import bltl
from .bltl import Formula
from .compiled import CompiledModel
from .expr import compile_expr
from .model import DeadlockError, Model, ProbabilityProperty, RewardProperty

STATE_CAP = 1_000_000


class OracleInfeasible(RuntimeError):
    pass


@dataclass
class StateSpace:
    """Reachable states with their choices (joint actions) and branches, sorted by state."""
    states: np.ndarray        # (S, nvars)
    depth: np.ndarray         # (S,) BFS layer of first discovery
    choice_state: np.ndarray  # (C,) owning state, nondecreasing
    choice_action: np.ndarray  # (C,) joint action index
    branch_choice: np.ndarray  # (T,)
    branch_succ: np.ndarray   # (T,)
    branch_prob: np.ndarray   # (T,)
    expanded: np.ndarray      # (S,) bool, False for states left unexplored (stop set or depth limit)

    @property
    def size(self) -> int:
        return len(self.states)


def _key_function(cm: CompiledModel):
    """Hashable key per state row: packed bits when they fit in 63, raw bytes otherwise."""
    if sum(cm.bits) <= 63:
        shifts = np.cumsum([0] + list(cm.bits[:0:-1]))[::-1].astype(np.int64)
        lo = np.asarray(cm.lo, dtype=np.int64)
        return lambda states: (((states - lo) << shifts).sum(axis=1)).tolist()
    return lambda states: [row.tobytes() for row in np.ascontiguousarray(states)]


def explore(cm: CompiledModel, max_depth: int, stop: Optional[Formula] = None,
            cap: int = STATE_CAP, deadlock_loops: bool = False) -> StateSpace:
    """Breadth-first reachable states up to ``max_depth`` steps; ``stop`` states are not expanded."""
    model = cm.model
    stop_fn = None
    if stop is not None:
        stop_fn = compile_expr(bltl.state_expr(stop), model.var_index, model.bool_vars)
    all_states = [cm.initial_state[None, :]]
    depths = [np.zeros(1, dtype=np.int64)]
    key_of = _key_function(cm)
    known = {key_of(all_states[0])[0]: 0}
    frontier = all_states[0]
    frontier_idx = np.zeros(1, dtype=np.int64)
    count = 1
    choices, branches = [], []
    expanded = []
    for d in range(max_depth):
        if not len(frontier):
            break
        n = len(frontier)
        cols = cm.columns(frontier)
        grow = np.ones(n, dtype=bool)
        if stop_fn is not None:
            grow &= ~np.broadcast_to(np.asarray(stop_fn(cols), dtype=bool), (n,))
        expanded.append(frontier_idx[grow])
        src, src_idx = frontier[grow], frontier_idx[grow]
        if not len(src):
            frontier = src
            continue
        en = cm.enabled(cm.columns(src), len(src))
        dead = ~en.any(axis=1)
        if dead.any() and not deadlock_loops:
            raise DeadlockError(tuple(int(x) for x in src[np.argmax(dead)]))
        succ_states, pend = [], []
        for j in range(en.shape[1]):
            rows = np.flatnonzero(en[:, j])
            if not len(rows):
                continue
            for p, nxt in cm.expand(j, src[rows]):
                keep = p > 0
                succ_states.append(nxt[keep])
                pend.append((src_idx[rows][keep], np.full(int(keep.sum()), j), p[keep]))
        if dead.any():
            # deadlocks become self-loops without action reward
            rows = np.flatnonzero(dead)
            succ_states.append(src[rows])
            pend.append((src_idx[rows], np.full(len(rows), -1), np.ones(len(rows))))
        if not succ_states:
            frontier = src[:0]
            continue
        succ = np.concatenate(succ_states)
        uid = np.empty(len(succ), dtype=np.int64)
        new = []
        for i, key in enumerate(key_of(succ)):
            v = known.get(key)
            if v is None:
                v = known[key] = count + len(new)
                new.append(i)
                if v >= cap:
                    raise OracleInfeasible(f"more than {cap} reachable states")
            uid[i] = v
        count += len(new)
        new_states = succ[new]
        all_states.append(new_states)
        depths.append(np.full(len(new), d + 1, dtype=np.int64))
        succ_id = uid
        off = 0
        for (s_idx, acts, probs), part in zip(pend, succ_states):
            k = len(part)
            branches.append((s_idx, acts, probs, succ_id[off:off + k]))
            off += k
        frontier = new_states
        frontier_idx = uid[new]

    states = np.concatenate(all_states)
    depth = np.concatenate(depths)
    exp_mask = np.zeros(len(states), dtype=bool)
    for e in expanded:
        exp_mask[e] = True
    if branches:
        s_idx = np.concatenate([b[0] for b in branches])
        acts = np.concatenate([b[1] for b in branches])
        probs = np.concatenate([b[2] for b in branches])
        succ = np.concatenate([b[3] for b in branches])
    else:
        s_idx = acts = succ = np.zeros(0, dtype=np.int64)
        probs = np.zeros(0)
    # one choice per (state, action); sort so that choices of a state are contiguous
    pair = np.stack([s_idx, acts], axis=1)
    uniq_pair, choice_of = np.unique(pair, axis=0, return_inverse=True)
    return StateSpace(states, depth, uniq_pair[:, 0], uniq_pair[:, 1], choice_of.ravel(), succ, probs, exp_mask)


@dataclass(frozen=True)
class OracleResult:
    max: float
    min: float
    uniform: float
    states: int


def _reduce(values: np.ndarray, space: StateSpace, how: str, fill: np.ndarray) -> np.ndarray:
    """Per-state max/min/mean of choice values; states without choices take ``fill``."""
    out = fill.copy()
    if not len(values):
        return out
    starts = np.flatnonzero(np.r_[True, space.choice_state[1:] != space.choice_state[:-1]])
    owners = space.choice_state[starts]
    if how == "max":
        red = np.maximum.reduceat(values, starts)
    elif how == "min":
        red = np.minimum.reduceat(values, starts)
    else:
        red = np.add.reduceat(values, starts) / np.diff(np.r_[starts, len(values)])
    out[owners] = red
    return out


def _expected(space: StateSpace, v: np.ndarray) -> np.ndarray:
    return np.bincount(space.branch_choice, weights=space.branch_prob * v[space.branch_succ],
                       minlength=len(space.choice_state))


def _state_values(cm: CompiledModel, space: StateSpace, f) -> np.ndarray:
    cols = cm.columns(space.states)
    return np.broadcast_to(np.asarray(f(cols), dtype=np.float64), (space.size,)).copy()


def _check_full(space: StateSpace, stop_mask: np.ndarray, k: int) -> None:
    """Every state reachable within fewer than ``k`` steps must have been expanded."""
    need = (space.depth < k) & ~stop_mask
    if (need & ~space.expanded).any():
        raise AssertionError("exploration incomplete")


def reward_values(model: Model, rho: RewardProperty, cap: int = STATE_CAP,
                  deadlock_loops: bool = False) -> OracleResult:
    """Exact max/min/uniform expected reward of ``rho`` from the initial state."""
    if rho.constraint is not None:
        raise OracleInfeasible("constrained reward properties need history; the oracle handles plain I/C/F")
    cm = CompiledModel(model)
    r = cm.reward(rho.reward_name)
    k = rho.k
    space = explore(cm, k, rho.target if rho.kind == "F" else None, cap, deadlock_loops)
    cols = cm.columns(space.states)
    s_rew = r.state(cols, space.size)
    c_states = space.states[space.choice_state]
    acts = np.maximum(space.choice_action, 0)
    a_rew = r.action(cm.columns(c_states), len(c_states), acts)
    a_rew = np.where(space.choice_action >= 0, a_rew, 0.0)
    stop = np.zeros(space.size, dtype=bool)
    if rho.kind == "F":
        stop = _state_values(cm, space, compile_expr(bltl.state_expr(rho.target), model.var_index,
                                                     model.bool_vars)) > 0
    out = {}
    for how in ("max", "min", "uniform"):
        v = s_rew.copy() if rho.kind == "I" else np.zeros(space.size)
        for t in range(1, k + 1):
            # states first seen at depth d only need values for horizons <= k - d
            if rho.kind == "I":
                cv = _expected(space, v)
                v = _reduce(cv, space, how, np.zeros(space.size))
            else:
                cv = s_rew[space.choice_state] + a_rew + _expected(space, v)
                v = _reduce(cv, space, how, np.zeros(space.size))
                if rho.kind == "F":
                    v[stop] = 0.0
        out[how] = float(v[0])
    return OracleResult(out["max"], out["min"], out["uniform"], space.size)


def probability_values(model: Model, phi: Formula, cap: int = STATE_CAP,
                       deadlock_loops: bool = False) -> OracleResult:
    """Exact max/min/uniform probability of ``phi``.

    Supported shapes: state formulas, ``X s``, ``F<=k s``, ``G<=k s`` and
    ``s1 U<=k s2`` where ``s``, ``s1`` and ``s2`` have no temporal operators.
    """
    cm = CompiledModel(model)
    model_idx, bv = model.var_index, model.bool_vars

    def sfn(f):
        return compile_expr(bltl.state_expr(f), model_idx, bv)

    negate = False
    if bltl.is_state_formula(phi):
        kind, k, left, right = "S", 0, None, phi
    elif isinstance(phi, bltl.Next) and bltl.is_state_formula(phi.arg):
        kind, k, left, right = "X", 1, None, phi.arg
    elif isinstance(phi, bltl.Finally) and bltl.is_state_formula(phi.arg):
        kind, k, left, right = "U", phi.k, bltl.TRUE_F, phi.arg
    elif isinstance(phi, bltl.Globally) and bltl.is_state_formula(phi.arg):
        kind, k, left, right = "U", phi.k, bltl.TRUE_F, bltl.Not(phi.arg)
        negate = True
    elif isinstance(phi, bltl.Until) and bltl.is_state_formula(phi.left) and bltl.is_state_formula(phi.right):
        kind, k, left, right = "U", phi.k, phi.left, phi.right
    else:
        raise OracleInfeasible(f"formula shape not supported by the oracle: {bltl.to_text(phi)}")

    if kind == "S":
        space = explore(cm, 0, None, cap, deadlock_loops)
        val = float(_state_values(cm, space, sfn(right))[0] > 0)
        return OracleResult(val, val, val, space.size)
    stop_f = None if kind == "X" else bltl.Or(right, bltl.Not(left))
    space = explore(cm, k, stop_f, cap, deadlock_loops)
    goal = _state_values(cm, space, sfn(right)) > 0
    allowed = (_state_values(cm, space, sfn(left)) > 0) if left is not None else np.ones(space.size, dtype=bool)
    out = {}
    for how in ("max", "min", "uniform"):
        opt = how
        if negate and how != "uniform":
            opt = "min" if how == "max" else "max"
        v = goal.astype(np.float64)
        for t in range(1, k + 1):
            nv = _reduce(_expected(space, v), space, opt, np.zeros(space.size))
            if kind == "U":
                nv[goal] = 1.0
                nv[~goal & ~allowed] = 0.0
            v = nv
        val = float(v[0])
        out[how] = 1.0 - val if negate else val
    return OracleResult(out["max"], out["min"], out["uniform"], space.size)


def exact_oracle(model: Model, prop: Union[RewardProperty, ProbabilityProperty, Formula],
                 cap: int = STATE_CAP, deadlock_loops: bool = False) -> OracleResult:
    if isinstance(prop, RewardProperty):
        return reward_values(model, prop, cap, deadlock_loops)
    if isinstance(prop, ProbabilityProperty):
        prop = prop.formula
    return probability_values(model, prop, cap, deadlock_loops)
