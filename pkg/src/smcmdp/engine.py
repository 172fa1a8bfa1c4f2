"""Smart-sampling search for schedulers with extremal expected reward or probability.

A run samples many schedulers (seeds), estimates each one cheaply, then
repeatedly re-simulates the survivors with a larger per-scheduler budget and
keeps the better half, until the joint Chernoff bound of the survivors'
estimates reaches the requested confidence.

Simulations are addressed by ``(sigma, sim_index)``; the probabilistic seed
of every simulation is derived from those and the global seed, so results
do not depend on how rows are split across worker processes.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bltl import Formula, horizon
from .compiled import CompiledModel
from .model import Model, RewardProperty
from .kernel import make_simulator
from .scheduler import DEFAULT_MODULUS, SchedulerMode, check_modulus, derive_seed, derive_seed_np, stream_np
from .stats import (HypothesisResult, NoCandidateError, chernoff_n, hypothesis_test, multi_chernoff_n,
                    multi_confidence, optimal_split)

CHUNK_ROWS = 1 << 15
_INITIAL_STREAM = 1
_SECOND_STREAM = 2


def default_workers() -> int:
    env = os.environ.get("SMCMDP_WORKERS")
    return max(1, int(env)) if env else 1


@dataclass
class EngineConfig:
    direction: str = "max"
    mode: SchedulerMode = SchedulerMode.HISTORY
    budget: int = 100_000            # N_max, simulations per iteration
    epsilon: float = 0.01
    delta: float = 0.01
    p0: float = 0.99
    alpha: float = 0.99
    seed: int = 0
    workers: int = field(default_factory=default_workers)
    max_steps: Optional[int] = None  # None: horizon of the property + 1
    modulus: int = DEFAULT_MODULUS
    deadlock_loops: bool = False
    backend: str = "auto"            # 'numba', 'numpy' or 'auto' (numba when the formula allows it)

    def validate(self) -> None:
        if self.direction not in ("max", "min"):
            raise ValueError("direction must be 'max' or 'min'")
        if not 0 < self.epsilon < 1 or not 0 < self.delta < 1:
            raise ValueError("epsilon and delta must lie in (0, 1)")
        need = chernoff_n(self.epsilon, self.delta)
        if self.budget < need:
            raise ValueError(f"budget {self.budget} too small: a single estimate needs {need} simulations "
                             f"at epsilon={self.epsilon}, delta={self.delta}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        check_modulus(self.modulus)
        if self.backend not in ("auto", "numba", "numpy"):
            raise ValueError("backend must be 'auto', 'numba' or 'numpy'")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    schedulers_remaining: int
    sims_per_scheduler: int
    best_estimate: float
    conf: float


@dataclass
class CandidateSet:
    sigmas: np.ndarray      # uint64
    estimates: np.ndarray   # float64, latest per-scheduler estimate
    trues: np.ndarray       # int64, satisfying refinement traces
    next_index: np.ndarray  # int64, next unused simulation index per scheduler
    conf: float = 1.0
    uniform_estimate: float = math.nan
    simulations: int = 0

    def __len__(self) -> int:
        return len(self.sigmas)

    def subset(self, keep: np.ndarray) -> "CandidateSet":
        return CandidateSet(self.sigmas[keep], self.estimates[keep], self.trues[keep], self.next_index[keep],
                            self.conf, self.uniform_estimate, self.simulations)


@dataclass
class EngineResult:
    estimate: float
    sigma: int
    conf: float
    hypothesis: Optional[HypothesisResult]
    bound: Optional[str]          # 'lower' / 'upper' when the hypothesis was rejected
    iterations: int
    simulations: int
    satisfaction_fraction: float
    uniform_estimate: float
    samples: int
    history: list = field(default_factory=list)


# --------------------------------------------------------------------------
# simulation dispatch

_worker_state = {}


def _worker_init(model, phi, rho, mode, max_steps, modulus, deadlock_loops, backend):
    cm = CompiledModel(model)
    _worker_state["run"] = make_simulator(cm, phi, rho, mode, max_steps, modulus, deadlock_loops, backend)


def _run_rows(sigmas, seeds):
    res = _worker_state["run"](sigmas, seeds)
    return res.verdict, res.reward


class Simulator:
    """Runs simulations for (sigma, sim_index) rows, locally or on a process pool."""

    def __init__(self, model: Model, phi: Formula, rho: Optional[RewardProperty], config: EngineConfig):
        self.config = config
        steps = config.max_steps if config.max_steps is not None else horizon(phi) + 1
        if steps < horizon(phi) + 1:
            raise ValueError(f"max_steps must be at least {horizon(phi) + 1} for this property")
        args = (model, phi, rho, config.mode, steps, config.modulus, config.deadlock_loops, config.backend)
        self._pool = None
        if config.workers > 1:
            self._pool = ProcessPoolExecutor(config.workers, initializer=_worker_init, initargs=args)
        else:
            _worker_init(*args)
            self._local = _worker_state["run"]
        self.count = 0

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def run(self, sigmas: np.ndarray, indices: np.ndarray):
        """Verdicts (int8) and rewards (float64) of one simulation per row."""
        seeds = derive_seed_np(np.uint64(self.config.seed), sigmas, indices.astype(np.uint64))
        n = len(sigmas)
        self.count += n
        bounds = [(i, min(i + CHUNK_ROWS, n)) for i in range(0, n, CHUNK_ROWS)]
        if self._pool is None:
            _worker_state["run"] = self._local
            parts = [_run_rows(sigmas[a:b], seeds[a:b]) for a, b in bounds]
        else:
            futures = [self._pool.submit(_run_rows, sigmas[a:b], seeds[a:b]) for a, b in bounds]
            parts = [f.result() for f in futures]
        if not parts:
            return np.zeros(0, dtype=np.int8), np.zeros(0)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def run_schedulers(self, cands: CandidateSet, n: int):
        """``n`` fresh simulations for every candidate; returns (M, n) verdict and reward matrices."""
        m = len(cands)
        sig = np.repeat(cands.sigmas, n)
        idx = np.repeat(cands.next_index, n) + np.tile(np.arange(n, dtype=np.int64), m)
        cands.next_index = cands.next_index + n
        v, r = self.run(sig, idx)
        return v.reshape(m, n), r.reshape(m, n)


def _new_candidates(seed: int, stream: int, m: int) -> CandidateSet:
    sigmas = stream_np(derive_seed(seed, stream), 0, m)
    return CandidateSet(sigmas, np.zeros(m), np.zeros(m, dtype=np.int64), np.zeros(m, dtype=np.int64))


# --------------------------------------------------------------------------
# search stages


def initial_candidates(sim: Simulator, config: EngineConfig, probability: bool) -> CandidateSet:
    """Sample schedulers and give each a first estimate.

    Rewards: one simulation for each of ``budget`` schedulers. Probabilities:
    ``ceil(sqrt(budget))`` simulations for as many schedulers.
    """
    if probability:
        n = m = math.ceil(math.sqrt(config.budget))
    else:
        n, m = 1, config.budget
    cands = _new_candidates(config.seed, _INITIAL_STREAM, m)
    v, r = sim.run_schedulers(cands, n)
    vals = (v == 1).astype(np.float64) if probability else r
    cands.estimates = vals.mean(axis=1)
    cands.uniform_estimate = float(vals.mean())
    cands.simulations = m * n
    return cands


def _survivors(order: np.ndarray, direction: str) -> np.ndarray:
    """Indices kept from an ascending order: 1-based ``floor(M/2)..M`` for max, ``1..ceil(M/2)`` for min."""
    m = len(order)
    if direction == "max":
        keep = order[max(m // 2, 1) - 1:]
        if len(keep) >= m and m > 1:
            # the verbatim rule cannot shrink |S| <= 3; fall back to strict halving
            keep = order[m // 2:]
    else:
        keep = order[:math.ceil(m / 2)]
    return keep


def refine(cands: CandidateSet, sim: Simulator, config: EngineConfig, probability: bool,
           progress: Optional[Callable[[IterationRecord], None]] = None):
    """Halve the candidate set until the joint confidence of the survivors reaches ``delta``.

    Returns the final candidate set, the index of the extremal scheduler in
    it, the accumulated per-scheduler sample count and the history.
    """
    if not len(cands):
        raise NoCandidateError("empty candidate set")
    eps, delta = config.epsilon, config.delta
    samples = 0
    history = []
    it = 0
    while True:
        it += 1
        m = len(cands)
        cap = math.ceil(config.budget / m)
        n = min(cap, multi_chernoff_n(eps, delta, m))
        conf = multi_confidence(eps, n, m, two_sided=True)
        v, r = sim.run_schedulers(cands, n)
        sat = v == 1
        cands.estimates = sat.mean(axis=1) if probability else r.mean(axis=1)
        cands.trues = cands.trues + sat.sum(axis=1)
        cands.simulations += m * n
        cands.conf = conf
        samples += n
        # ascending by (estimate, sigma)
        order = np.lexsort((cands.sigmas, cands.estimates))
        best = order[-1] if config.direction == "max" else order[0]
        rec = IterationRecord(it, m, n, float(cands.estimates[best]), conf)
        history.append(rec)
        if progress is not None:
            progress(rec)
        if conf <= delta:
            return cands, int(best), samples, history
        cands = cands.subset(_survivors(order, config.direction))


def _finish(cands, best, samples, history, config: EngineConfig, test: bool, sim: Simulator) -> EngineResult:
    trues = int(cands.trues[best])
    hyp = bound = None
    if test:
        hyp = hypothesis_test(trues, samples, config.p0, config.alpha)
        if not hyp.accepted:
            bound = "lower" if config.direction == "max" else "upper"
    return EngineResult(
        estimate=float(cands.estimates[best]),
        sigma=int(cands.sigmas[best]),
        conf=cands.conf,
        hypothesis=hyp,
        bound=bound,
        iterations=len(history),
        simulations=sim.count,
        satisfaction_fraction=trues / samples if samples else math.nan,
        uniform_estimate=cands.uniform_estimate,
        samples=samples,
        history=history,
    )


def estimate_reward_extremum(model: Model, rho: RewardProperty, config: EngineConfig,
                             progress: Optional[Callable[[IterationRecord], None]] = None) -> EngineResult:
    """Max or min expected reward of ``rho`` over sampled schedulers, with a confidence bound."""
    config.validate()
    model.reward(rho.reward_name)
    with Simulator(model, rho.formula(), rho, config) as sim:
        cands = initial_candidates(sim, config, probability=False)
        uniform = cands.uniform_estimate
        cands, best, samples, history = refine(cands, sim, config, False, progress)
        cands.uniform_estimate = uniform
        return _finish(cands, best, samples, history, config, rho.kind == "F", sim)


def estimate_probability_extremum(model: Model, phi: Formula, config: EngineConfig,
                                  progress: Optional[Callable[[IterationRecord], None]] = None) -> EngineResult:
    """Max or min probability of ``phi``: square-root exploration, re-budgeting, then refinement."""
    config.validate()
    with Simulator(model, phi, None, config) as sim:
        first = initial_candidates(sim, config, probability=True)
        est = first.estimates
        nonzero = est[est > 0]
        if not len(nonzero):
            raise NoCandidateError("no sampled scheduler satisfied the property; raise the budget or the bound k")
        p_gbar = float(nonzero.max() if config.direction == "max" else nonzero.min())
        split = optimal_split(len(nonzero) / len(est), p_gbar, config.budget)
        cands = _new_candidates(config.seed, _SECOND_STREAM, split.m)
        v, _ = sim.run_schedulers(cands, split.n)
        cands.estimates = (v == 1).mean(axis=1)
        if config.direction == "max":
            keep = np.flatnonzero(cands.estimates > 0)
            if not len(keep):
                cands = first.subset(np.flatnonzero(first.estimates > 0))
            else:
                cands = cands.subset(keep)
        cands.uniform_estimate = first.uniform_estimate
        cands, best, samples, history = refine(cands, sim, config, True, progress)
        cands.uniform_estimate = first.uniform_estimate
        return _finish(cands, best, samples, history, config, False, sim)
