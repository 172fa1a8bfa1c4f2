"""Constant-memory schedulers: a scheduler is a 64-bit seed ``sigma``.

At every step the trace prefix (or only the current state, for memoryless
schedulers) is folded into a modular hash seeded with ``sigma``. That hash
seeds a SplitMix64 generator whose first output picks the action, so the
same prefix always gets the same action. Probabilistic branching draws from
a second, independent SplitMix64 stream seeded once per simulation.

``simulate`` is the plain one-trace reference loop. ``simulate_batch`` runs
many (sigma, seed) rows in lock step with numpy and returns exactly the same
per-row results.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .bltl import BatchMonitor, Formula, Monitor, Verdict
from .compiled import CompiledModel
from .model import (DeadlockError, Model, RewardProperty, apply_transition, enabled_actions, state_reward,
                    step_reward, trace_reward)

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# prime, ~1.30 * 2**60: more than 10% away from 2**60 and 2**61
DEFAULT_MODULUS = 1499999999999999941


class SchedulerMode(enum.Enum):
    HISTORY = "history"
    MEMORYLESS = "memoryless"


class EncodingError(ValueError):
    pass


# --------------------------------------------------------------------------
# SplitMix64


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix_next(state: int) -> tuple:
    """Advance a SplitMix64 state; returns ``(new_state, output)``."""
    state = (state + GAMMA) & MASK64
    return state, mix64(state)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state, out = splitmix_next(self.state)
        return out

    def uniform(self) -> float:
        return to_unit(self.next())


def to_unit(r: int) -> float:
    """Top 53 bits of a 64-bit draw as a double in [0, 1)."""
    return (r >> 11) * 2.0 ** -53


def derive_seed(*parts: int) -> int:
    """Chain SplitMix64 over ``parts``; used for per-simulation and per-stream seeds."""
    s = 0
    for p in parts:
        s = mix64(((s ^ (p & MASK64)) + GAMMA) & MASK64)
    return s


_G = np.uint64(GAMMA)
_M1 = np.uint64(MIX1)
_M2 = np.uint64(MIX2)


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed_np(*parts) -> np.ndarray:
    s = np.uint64(0)
    for p in parts:
        with np.errstate(over="ignore"):
            s = mix64_np((s ^ np.asarray(p, dtype=np.uint64)) + _G)
    return s


def stream_np(seed: int, start: int, count: int) -> np.ndarray:
    """Outputs ``start .. start+count-1`` of the SplitMix64 stream seeded with ``seed``."""
    i = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return mix64_np(np.uint64(seed & MASK64) + i * _G)


# --------------------------------------------------------------------------
# modular trace hashing


def is_probable_prime(n: int) -> bool:
    """Deterministic Miller-Rabin for n < 3.3e24 (first 13 prime bases)."""
    if n < 2:
        return False
    bases = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)
    for p in bases:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in bases:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def check_modulus(m: int) -> None:
    if not (2 < m < 1 << 62):
        raise ValueError("modulus must lie in (2, 2**62)")
    if not is_probable_prime(m):
        raise ValueError(f"modulus {m} is not prime")
    p = 1 << (m.bit_length() - 1)
    for q in (p, 2 * p):
        if abs(m - q) < 0.1 * q:
            raise ValueError(f"modulus {m} is within 10% of 2**{q.bit_length() - 1}")


def hash_init(sigma: int, m: int = DEFAULT_MODULUS) -> int:
    return sigma % m


def hash_update(h: int, value: int, bits: int, m: int = DEFAULT_MODULUS) -> int:
    """``(h * 2**bits + value) mod m`` by repeated modular doubling."""
    if not 0 <= value < 1 << bits:
        raise EncodingError(f"value {value} does not fit in {bits} bits")
    for _ in range(bits):
        h = h + h
        if h >= m:
            h -= m
    h += value % m
    if h >= m:
        h -= m
    return h


def encode_state(model: Model, s) -> list:
    return [(x - v.lo, v.bit_width) for v, x in zip(model.variables, s)]


def hash_state(h: int, model: Model, s, m: int = DEFAULT_MODULUS) -> int:
    for value, bits in encode_state(model, s):
        h = hash_update(h, value, bits, m)
    return h


def hash_update_np(h: np.ndarray, value: np.ndarray, bits: int, m: np.uint64) -> np.ndarray:
    for _ in range(bits):
        h = h + h
        h = np.where(h >= m, h - m, h)
    h = h + value.astype(np.uint64)
    return np.where(h >= m, h - m, h)


def hash_states_np(h: np.ndarray, states: np.ndarray, cm: CompiledModel, m: np.uint64) -> np.ndarray:
    for i, bits in enumerate(cm.bits):
        h = hash_update_np(h, states[:, i] - cm.lo[i], bits, m)
    return h


# --------------------------------------------------------------------------
# reference simulation


@dataclass
class TraceRecord:
    states: list
    actions: list            # joint action taken from each state (None for the last one / deadlock loops)
    rewards: list = field(default_factory=list)  # step reward of each transition, if a reward was given
    verdict: Verdict = Verdict.UNDECIDED
    exhausted: bool = False

    @property
    def steps(self) -> int:
        return len(self.states) - 1


def simulate(model: Model, phi: Formula, sigma: int, prob_seed: int,
             mode: SchedulerMode = SchedulerMode.HISTORY, max_steps: int = 10_000,
             reward_name: Optional[str] = None, modulus: int = DEFAULT_MODULUS,
             deadlock_loops: bool = False) -> TraceRecord:
    """Run one trace under scheduler ``sigma`` until the monitor for ``phi`` decides."""
    monitor = Monitor(phi, model.var_names, model.bool_vars)
    if max_steps < monitor.horizon + 1:
        raise ValueError(f"max_steps must be at least {monitor.horizon + 1}")
    r = model.reward(reward_name) if reward_name is not None or len(model.rewards) == 1 else None
    prob = SplitMix64(prob_seed)
    s = model.initial_state
    rec = TraceRecord([s], [])
    verdict = monitor.step(s)
    h = hash_init(sigma, modulus)
    while verdict is Verdict.UNDECIDED:
        if rec.steps >= max_steps:
            rec.exhausted = True
            break
        if mode is SchedulerMode.MEMORYLESS:
            h = hash_init(sigma, modulus)
        h = hash_state(h, model, s, modulus)
        acts = enabled_actions(model, s)
        if not acts:
            if not deadlock_loops:
                raise DeadlockError(s)
            a, nxt = None, s
        else:
            _, r_nd = splitmix_next(h)
            a = acts[r_nd % len(acts)]
            nxt = apply_transition(model, s, a, to_unit(prob.next()))
        rec.actions.append(a)
        if r is not None:
            rec.rewards.append(step_reward(model, r, s, a))
        s = nxt
        rec.states.append(s)
        verdict = monitor.step(s)
    rec.actions.append(None)
    rec.verdict = verdict
    return rec


def record_outcome(model: Model, rec: TraceRecord, rho: RewardProperty):
    """``(reward, satisfied)`` of a finished trace, matching the batch simulator's convention."""
    r = model.reward(rho.reward_name)
    pairs = list(zip(rec.states, rec.actions))
    if rho.kind == "F":
        return trace_reward(model, r, pairs, rho)
    if rec.verdict is not Verdict.TRUE:
        return math.inf, False
    return trace_reward(model, r, pairs, replace(rho, constraint=None))


# --------------------------------------------------------------------------
# batch simulation


@dataclass
class BatchResult:
    verdict: np.ndarray     # int8: 0 false, 1 true, 2 undecided (step budget exhausted)
    reward: np.ndarray      # float64, property reward per row (nan without a reward property)
    steps: np.ndarray       # int64 transitions taken
    final: np.ndarray       # int64 (rows, vars) last state


def simulate_batch(cm: CompiledModel, phi: Formula, sigmas, prob_seeds,
                   mode: SchedulerMode = SchedulerMode.HISTORY, max_steps: int = 10_000,
                   rho: Optional[RewardProperty] = None, modulus: int = DEFAULT_MODULUS,
                   deadlock_loops: bool = False) -> BatchResult:
    """Simulate one trace per (sigma, prob_seed) row; identical to ``simulate`` row by row.

    With a reward property ``rho``, ``phi`` should be ``rho.formula()``; the
    returned reward follows ``trace_reward`` (``inf`` for a violated constraint).
    """
    sigmas = np.asarray(sigmas, dtype=np.uint64)
    n = len(sigmas)
    m = np.uint64(modulus)
    model = cm.model
    monitor = BatchMonitor(phi, model.var_index, model.bool_vars, n)
    if max_steps < monitor.horizon + 1:
        raise ValueError(f"max_steps must be at least {monitor.horizon + 1}")
    reward = cm.reward(rho.reward_name) if rho is not None else None

    verdict_out = np.full(n, 2, dtype=np.int8)
    reward_out = np.full(n, np.nan)
    steps_out = np.zeros(n, dtype=np.int64)
    final_out = np.empty((n, cm.nvars), dtype=np.int64)

    live = np.arange(n)
    states = np.tile(cm.initial_state, (n, 1))
    h0 = sigmas % m
    h = h0.copy()
    prob_state = np.asarray(prob_seeds, dtype=np.uint64).copy()
    acc = np.zeros(n)
    inst = np.zeros(n)
    t = 0
    cols = cm.columns(states)
    v = monitor.step(cols)

    while True:
        done = v != 2
        if t >= max_steps:
            done[:] = True
        if done.any():
            idx = live[done]
            verdict_out[idx] = v[done]
            steps_out[idx] = t
            final_out[idx] = states[done]
            if reward is not None:
                if rho.kind == "F":
                    reward_out[idx] = acc[done]
                else:
                    ok = v[done] == 1
                    val = inst[done] if rho.kind == "I" else acc[done]
                    reward_out[idx] = np.where(ok, val, np.inf)
            keep = ~done
            if not keep.any():
                break
            live, states, h, h0, prob_state = live[keep], states[keep], h[keep], h0[keep], prob_state[keep]
            acc, inst = acc[keep], inst[keep]
            monitor.compact(keep)
        k = len(live)
        cols = cm.columns(states)
        if mode is SchedulerMode.MEMORYLESS:
            h = h0
        h = hash_states_np(h, states, cm, m)
        en = cm.enabled(cols, k)
        count = en.sum(axis=1)
        dead = count == 0
        if dead.any() and not deadlock_loops:
            raise cm.deadlock(states, np.flatnonzero(dead))
        r_nd = mix64_np(h + _G)
        pick = r_nd % np.maximum(count, 1).astype(np.uint64)
        chosen = np.argmax(np.cumsum(en, axis=1) > pick[:, None].astype(np.int64), axis=1)
        moving = ~dead
        nxt = states.copy()
        if moving.any():
            mv = np.flatnonzero(moving)
            prob_state[mv] = prob_state[mv] + _G
            u = (mix64_np(prob_state[mv]) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
            nxt[mv] = cm.successors(states[mv], chosen[mv], u)
        if reward is not None:
            cut = rho.k if rho.kind in ("C", "I") else None
            if cut is None or t < cut:
                step_r = reward.state(cols, k) + np.where(moving, reward.action(cols, k, chosen), 0.0)
                acc = acc + step_r
        states = nxt
        t += 1
        cols = cm.columns(states)
        v = monitor.step(cols)
        if reward is not None and rho.kind == "I" and t == rho.k:
            inst = reward.state(cols, k)

    return BatchResult(verdict_out, reward_out, steps_out, final_out)
