"""In-memory MDP representation and its single-step semantics.

A model is a set of modules; each module owns bounded integer (or boolean)
variables and guarded probabilistic commands. Labelled commands synchronise
across every module that declares the label, unlabelled commands
interleave. Everything here is immutable and evaluated directly from the
expression trees; the vectorised counterpart lives in ``compiled``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping, NamedTuple, Optional, Sequence, Union

from .bltl import And, Finally, Formula, Globally, TRUE_F, evaluate_trace, is_state_formula, state_expr
from .expr import Expr, Value, evaluate

State = tuple  # one int per variable, declaration order

PROB_TOL = 1e-9


class ModelError(Exception):
    pass


class RangeViolation(ModelError):
    def __init__(self, var: str, value, lo: int, hi: int):
        super().__init__(f"update sets '{var}' to {value}, outside [{lo}..{hi}]")
        self.var = var


class DeadlockError(ModelError):
    def __init__(self, state):
        super().__init__(f"deadlock: no enabled action in state {state}")
        self.state = state


class InsufficientTraceError(ValueError):
    pass


@dataclass(frozen=True)
class VariableDecl:
    name: str
    lo: int
    hi: int
    init: int
    is_bool: bool = False

    @property
    def bit_width(self) -> int:
        span = self.hi - self.lo + 1
        return max(1, math.ceil(math.log2(span))) if span > 1 else 1


@dataclass(frozen=True)
class Update:
    var: str
    expr: Expr


@dataclass(frozen=True)
class Branch:
    prob: Expr
    updates: tuple


@dataclass(frozen=True)
class Command:
    action: Optional[str]
    guard: Expr
    branches: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Module:
    name: str
    variables: tuple
    commands: tuple


@dataclass(frozen=True)
class RewardStructure:
    name: str
    state_items: tuple = ()   # (guard, value)
    action_items: tuple = ()  # (label or None, guard, value)


@dataclass(frozen=True)
class JointAction:
    label: Optional[str]
    commands: tuple  # ((module index, command index), ...)


@dataclass(frozen=True)
class Model:
    modules: tuple
    rewards: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    sync_labels: tuple = ()

    @cached_property
    def variables(self) -> tuple:
        return tuple(v for m in self.modules for v in m.variables)

    @cached_property
    def var_names(self) -> tuple:
        return tuple(v.name for v in self.variables)

    @cached_property
    def var_index(self) -> dict:
        return {n: i for i, n in enumerate(self.var_names)}

    @cached_property
    def bool_vars(self) -> frozenset:
        return frozenset(v.name for v in self.variables if v.is_bool)

    @cached_property
    def types(self) -> dict:
        return {v.name: ("bool" if v.is_bool else "int") for v in self.variables}

    @cached_property
    def initial_state(self) -> State:
        return tuple(v.init for v in self.variables)

    @cached_property
    def total_bits(self) -> int:
        return sum(v.bit_width for v in self.variables)

    @cached_property
    def joint_actions(self) -> tuple:
        """Every joint action in canonical order, ignoring guards."""
        out = [JointAction(None, ((mi, ci),))
               for mi, m in enumerate(self.modules)
               for ci, c in enumerate(m.commands) if c.action is None]
        labels = sorted({c.action for m in self.modules for c in m.commands if c.action})
        for label in labels:
            per_module = [[(mi, ci) for ci, c in enumerate(m.commands) if c.action == label]
                          for mi, m in enumerate(self.modules)]
            per_module = [p for p in per_module if p]
            out.extend(JointAction(label, combo) for combo in itertools.product(*per_module))
        return tuple(out)

    def command(self, ref) -> Command:
        mi, ci = ref
        return self.modules[mi].commands[ci]

    def env(self, s: State) -> dict:
        return {v.name: (bool(x) if v.is_bool else x) for v, x in zip(self.variables, s)}

    def reward(self, name: Optional[str]) -> RewardStructure:
        if name is None:
            if len(self.rewards) != 1:
                raise ModelError("model has several reward structures; name one")
            return next(iter(self.rewards.values()))
        try:
            return self.rewards[name]
        except KeyError:
            raise ModelError(f"unknown reward structure '{name}'") from None


@dataclass(frozen=True)
class RewardProperty:
    """``I=k`` / ``C<=k`` (optionally constrained by a path formula) or ``F<=k target``."""

    kind: str  # 'I', 'C' or 'F'
    k: int
    reward_name: Optional[str] = None
    target: Optional[Formula] = None
    constraint: Optional[Formula] = None
    direction: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("I", "C", "F"):
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("reward bound k must be >= 1")
        if self.kind == "F":
            if self.target is None or not is_state_formula(self.target):
                raise ValueError("reachability target must be a state formula")

    def formula(self) -> Formula:
        """The path formula whose monitor decides when a simulation may stop."""
        if self.kind == "F":
            return Finally(self.k, self.target)
        window = Globally(self.k, TRUE_F)
        return window if self.constraint is None else And(self.constraint, window)


@dataclass(frozen=True)
class ProbabilityProperty:
    formula: Formula
    direction: Optional[str] = None


class RewardOutcome(NamedTuple):
    value: Union[Fraction, float]
    satisfied: bool


# --------------------------------------------------------------------------
# semantics


def _guard(model: Model, c: Command, env) -> bool:
    return bool(evaluate(c.guard, env))


def enabled_actions(model: Model, s: State) -> list:
    env = model.env(s)
    ok = {}
    out = []
    for a in model.joint_actions:
        if all(ok.setdefault(ref, _guard(model, model.command(ref), env)) for ref in a.commands):
            out.append(a)
    return out


def _branch_probs(model: Model, c: Command, env) -> list:
    ps = [float(evaluate(b.prob, env)) for b in c.branches]
    if any(p < -PROB_TOL or p > 1 + PROB_TOL for p in ps) or abs(sum(ps) - 1.0) > PROB_TOL:
        raise ModelError(f"command on line {c.line}: branch probabilities {ps} do not form a distribution")
    return ps


def joint_branches(model: Model, s: State, a: JointAction) -> list:
    """``[(probability, successor)]`` for joint action ``a`` in canonical branch order."""
    env = model.env(s)
    cmds = [model.command(ref) for ref in a.commands]
    probs = [_branch_probs(model, c, env) for c in cmds]
    out = []
    for combo in itertools.product(*(range(len(c.branches)) for c in cmds)):
        p = probs[0][combo[0]]
        for ci in range(1, len(cmds)):
            p = p * probs[ci][combo[ci]]
        nxt = list(s)
        for c, bi in zip(cmds, combo):
            for up in c.branches[bi].updates:
                i = model.var_index[up.var]
                v = evaluate(up.expr, env)
                decl = model.variables[i]
                v = int(v)
                if not decl.lo <= v <= decl.hi:
                    raise RangeViolation(decl.name, v, decl.lo, decl.hi)
                nxt[i] = v
        out.append((p, tuple(nxt)))
    return out


def select_branch(probs: Sequence[float], u: float) -> int:
    """Half-open cumulative intervals; the last branch absorbs rounding residue."""
    acc = 0.0
    for j, p in enumerate(probs[:-1]):
        acc += p
        if u < acc:
            return j
    return len(probs) - 1


def apply_transition(model: Model, s: State, a: JointAction, u: float) -> State:
    branches = joint_branches(model, s, a)
    return branches[select_branch([p for p, _ in branches], u)][1]


def _add(total, v):
    if isinstance(v, bool):
        v = int(v)
    if isinstance(v, int):
        return total + v
    return float(total) + v


def state_reward(model: Model, r: RewardStructure, s: State):
    env = model.env(s)
    total = Fraction(0)
    for guard, value in r.state_items:
        if evaluate(guard, env):
            total = _add(total, evaluate(value, env))
    return total


def action_reward(model: Model, r: RewardStructure, s: State, a: Optional[JointAction]):
    total = Fraction(0)
    if a is None:
        return total
    env = model.env(s)
    for label, guard, value in r.action_items:
        if label == a.label and evaluate(guard, env):
            total = _add(total, evaluate(value, env))
    return total


def step_reward(model: Model, r: RewardStructure, s: State, a: Optional[JointAction]):
    return _add(state_reward(model, r, s), action_reward(model, r, s, a))


def trace_reward(model: Model, r: RewardStructure, trace: Sequence, rho: RewardProperty) -> RewardOutcome:
    """Reward of a finite trace ``[(state, action taken from it), ...]`` under ``rho``.

    The action of the last state is ignored. A reachability trace that never
    meets the target within ``k`` steps yields its full ``k``-step sum with
    ``satisfied=False``; an ``I``/``C`` trace violating its constraint yields
    ``inf``.
    """
    states = [s for s, _ in trace]
    n = len(states)
    if rho.kind == "F":
        target = state_expr(rho.target)
        stop = None
        for j in range(min(n, rho.k + 1)):
            if evaluate(target, model.env(states[j])):
                stop = j
                break
        if stop is None and n < rho.k + 1:
            raise InsufficientTraceError(f"reachability trace needs {rho.k + 1} states, has {n}")
        steps = stop if stop is not None else rho.k
        total = Fraction(0)
        for s, a in trace[:steps]:
            total = _add(total, step_reward(model, r, s, a))
        return RewardOutcome(total, stop is not None)

    if rho.constraint is not None:
        envs = [model.env(s) for s in states]
        try:
            ok = evaluate_trace(rho.constraint, envs)
        except ValueError as exc:
            raise InsufficientTraceError(str(exc)) from None
        if not ok:
            return RewardOutcome(math.inf, False)
    if n < rho.k + 1:
        raise InsufficientTraceError(f"trace needs {rho.k + 1} states, has {n}")
    if rho.kind == "I":
        return RewardOutcome(state_reward(model, r, states[rho.k]), True)
    total = Fraction(0)
    for s, a in trace[:rho.k]:
        total = _add(total, step_reward(model, r, s, a))
    return RewardOutcome(total, True)


def is_valid_state(model: Model, s: State) -> bool:
    return len(s) == len(model.variables) and all(v.lo <= x <= v.hi for v, x in zip(model.variables, s))

