"""The nine acceptance criteria, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v`` (or ``-m acceptance``); the
verdict lines are repeated in the "acceptance criteria" summary section.
Criteria that cannot be met in full are reported as FAIL and marked xfail
after every attainable part of them has been asserted.
"""
import json
import math
import random
import time
from dataclasses import replace
from itertools import product

import mpmath
import numpy as np
import pytest

from smcmdp.bltl import And, Finally, evaluate_trace, Globally, Next, Not, Or, Until, horizon, size
from smcmdp.cli import main
from smcmdp.engine import EngineConfig, estimate_reward_extremum
from smcmdp.lang import parse_model, parse_property
from smcmdp.model import enabled_actions, joint_branches, trace_reward
from smcmdp.models import choice_source, list_models
from smcmdp.oracle import exact_oracle
from smcmdp.scheduler import DEFAULT_MODULUS, SchedulerMode, encode_state, hash_init, hash_state
from smcmdp.stats import chernoff_n, hoeffding_n, hypothesis_test, multi_chernoff_n

from formulas import A, B, BOUNDS, all_traces, atoms_of, formulas, reference, run_monitor

pytestmark = pytest.mark.acceptance
mpmath.mp.dps = 60

SELFSTAB = ("selfstab", 'R{"steps"}=? [ F<=200 "stable" ]', SchedulerMode.HISTORY)
VIRUS = ("virus", 'R{"detected"}=? [ F<=300 "target" ]', SchedulerMode.MEMORYLESS)
FIG1_PROP = 'R{"cost"}min=? [ C<=6 given X ("psi" & X G<=4 "phi") ]'


def _hp_n(eps, delta, m=1, value_range=1):
    eps, delta = mpmath.mpf(eps), mpmath.mpf(delta)
    per = 1 - (1 - delta) ** (mpmath.mpf(1) / m)
    return int(mpmath.ceil((mpmath.log(2) - mpmath.log(per)) * mpmath.mpf(value_range) ** 2 / (2 * eps ** 2)))


def test_criterion_1_sample_size_formulas(report):
    start = time.perf_counter()
    got = (chernoff_n(0.01, 0.01), multi_chernoff_n(0.01, 0.01, 2), hoeffding_n(0.01, 0.01, 10))
    want = (_hp_n("0.01", "0.01"), _hp_n("0.01", "0.01", 2), _hp_n("0.01", "0.01", 1, 10))
    grid = [(e, d) for e in (0.3, 0.1, 0.05, 0.03, 0.01, 0.001) for d in (0.3, 0.1, 0.05, 0.01, 1e-6)]
    same = all(multi_chernoff_n(e, d, 1) == chernoff_n(e, d) for e, d in grid)
    ms = (time.perf_counter() - start) * 1000
    ok = got == want == (26492, 29945, 2649159) and same
    report(1, ok, f"chernoff/multi/hoeffding = {got}, oracle {want}, M=1 identity {same}, {ms:.0f} ms")
    assert ok


def test_criterion_2_hash_oracle(report, bundled):
    rng = random.Random(2)
    names = list_models()
    start = time.perf_counter()
    bad = 0
    for _ in range(1000):
        model = bundled(rng.choice(names))
        sigma = rng.getrandbits(64)
        trace = [tuple(rng.randint(v.lo, v.hi) for v in model.variables) for _ in range(rng.randint(1, 40))]
        h = hash_init(sigma)
        for s in trace:
            h = hash_state(h, model, s)
        big = sigma
        for s in trace:
            for value, bits in encode_state(model, s):
                big = (big << bits) | value
        bad += h != big % DEFAULT_MODULUS
    secs = time.perf_counter() - start
    report(2, bad == 0 and secs < 1, f"{1000 - bad}/1000 pairs match the big-integer oracle in {secs:.2f} s")
    assert bad == 0 and secs < 1


def _random_formula(rng, n):
    """A uniformly shaped random formula with exactly ``n`` nodes."""
    if n == 1:
        return rng.choice([A, B])
    if n == 2 or rng.random() < 0.5:
        kind = rng.choice(["not", "next", "F", "G"])
        arg = _random_formula(rng, n - 1)
        return {"not": lambda: Not(arg), "next": lambda: Next(arg),
                "F": lambda: Finally(rng.choice(BOUNDS), arg), "G": lambda: Globally(rng.choice(BOUNDS), arg)}[kind]()
    i = rng.randint(1, n - 2)
    l, r = _random_formula(rng, i), _random_formula(rng, n - 1 - i)
    kind = rng.choice(["and", "or", "U"])
    return {"and": And(l, r), "or": Or(l, r), "U": Until(rng.choice(BOUNDS), l, r)}[kind]


def _check_formula(f, traces):
    verdict, first = run_monitor(f, traces)
    assert (verdict != 2).all(), f
    assert ((verdict == 1) == reference(f, traces)).all(), f
    assert (first <= horizon(f) + 1).all(), f


def test_criterion_3_monitor_equivalence(report):
    start = time.perf_counter()
    exhaustive = 0
    for n in range(1, 5):
        for f in formulas(n):
            _check_formula(f, all_traces(f))
            exhaustive += 1
    rng = random.Random(3)
    sampled = 0
    for n in (5, 6):
        for _ in range(150):
            f = _random_formula(rng, n)
            assert size(f) == n
            if len(atoms_of(f)) * (horizon(f) + 1) <= 14:
                traces = all_traces(f)
            else:
                traces = np.random.default_rng(sampled).integers(0, 2, (1 << 13, horizon(f) + 1, 2)).astype(bool)
            _check_formula(f, traces)
            sampled += 1
    secs = time.perf_counter() - start
    report(3, False, f"all {exhaustive} formulas of size <= 4 agree on every trace; sizes 5-6 checked on "
                     f"{sampled} random formulas only ({secs:.0f} s). Exhaustive size <= 6 is out of reach")
    pytest.xfail("exhaustive enumeration of size-6 formulas over all traces is infeasible; see the ledger")


def _accuracy_runs(bundled, spec, direction, runs=20):
    name, prop, mode = spec
    model = bundled(name)
    rho = parse_property(prop, model)
    truth = getattr(exact_oracle(model, rho), direction)
    errs = []
    for seed in range(1, runs + 1):
        cfg = EngineConfig(direction=direction, mode=mode, budget=100_000, epsilon=0.01, delta=0.01, seed=seed)
        errs.append(estimate_reward_extremum(model, rho, cfg).estimate / truth - 1)
    return truth, np.array(errs)


@pytest.mark.parametrize("spec", [SELFSTAB, VIRUS], ids=["selfstab", "virus"])
@pytest.mark.parametrize("direction", ["max", "min"])
def test_criterion_4_oracle_agreement(report, bundled, spec, direction):
    truth, errs = _accuracy_runs(bundled, spec, direction)
    within = int((np.abs(errs) <= 0.01).sum())
    ok = within >= 19
    report(4, ok, f"{spec[0]} {direction}: {within}/20 runs within 1% of {truth:.4f} "
                  f"(errors {errs.min():+.2%} .. {errs.max():+.2%})")
    assert ok


def _min_rounds(tourists, bound, seed=1):
    model = parse_model(choice_source(tourists, bound))
    rho = parse_property('R{"rounds"}=? [ F<=100 "met" ]', model)
    cfg = EngineConfig(direction="min", budget=100_000, epsilon=0.01, delta=0.01, seed=seed)
    return model, rho, estimate_reward_extremum(model, rho, cfg).estimate


def test_criterion_5_choice_coordination(report):
    published = {2: 4.0, 3: 5.0, 4: 7.0, 5: 8.0, 6: 10.0, 7: 11.0, 8: 12.0, 9: 13.0, 10: 14.0}
    small = {}
    for n in (2, 3, 4):
        model, rho, est = _min_rounds(n, 3)
        exact = exact_oracle(model, rho).min
        assert abs(est / exact - 1) <= 0.01
        small[n] = est
    large = {}
    for n in range(2, 11):
        _, _, est = _min_rounds(n, 100)
        assert abs(est / (2 * n) - 1) <= 0.01
        large[n] = est
    matches = [n for n in large if abs(large[n] / published[n] - 1) <= 0.01]
    ok = len(matches) == len(published)
    report(5, ok, f"estimates agree with the exact oracle (BOUND=3) and with 2n (BOUND=100): "
                  f"{[round(large[n], 2) for n in sorted(large)]}; published row matched for n in {matches} only")
    if not ok:
        pytest.xfail("the rebuilt choice-coordination model gives 2n rounds; see the ledger")


def test_criterion_6_history_beats_memoryless(report, bundled):
    model = bundled("history")
    rho = parse_property(FIG1_PROP, model)
    pairs = []
    for seed in range(1, 11):
        got = []
        for mode in (SchedulerMode.HISTORY, SchedulerMode.MEMORYLESS):
            cfg = EngineConfig(direction="min", mode=mode, budget=100_000, epsilon=0.01, delta=0.01, seed=seed)
            got.append(estimate_reward_extremum(model, rho, cfg).estimate)
        pairs.append(tuple(got))
    ok = all(h < m for h, m in pairs)
    report(6, ok, "history-dependent < memoryless min in "
                  f"{sum(h < m for h, m in pairs)}/10 runs, e.g. {pairs[0][0]:g} < {pairs[0][1]:g}")
    assert ok


def _enumerated_fig1(model):
    """Min over deterministic schedulers that fix one action per visit of s=0 (history) or one overall."""
    rho = parse_property(FIG1_PROP, model)
    plain = replace(rho, constraint=None)
    r = model.reward("cost")

    def expected(choose):
        total = 0.0
        stack = [([], 1.0, model.initial_state, 0)]
        while stack:
            path, p, s, visits = stack.pop()
            if len(path) == rho.k:
                pairs = path + [(s, None)]
                if not evaluate_trace(rho.constraint, [dict(zip(model.var_names, x)) for x, _ in pairs]):
                    return math.inf
                total += p * float(trace_reward(model, r, pairs, plain).value)
                continue
            acts = enabled_actions(model, s)
            a = acts[choose(visits) if len(acts) > 1 else 0]
            for q, nxt in joint_branches(model, s, a):
                stack.append((path + [(s, a)], p * q, nxt, visits + (s == (0,))))
        return total

    history = min(expected(lambda v, c=c: c[v]) for c in product(range(2), repeat=3))
    memoryless = min(expected(lambda v, c=c: c) for c in range(2))
    return history, memoryless


def test_criterion_6_values_by_enumeration(bundled):
    # the constraint looks 6 steps ahead, exactly the length of the C<=6 window
    history, memoryless = _enumerated_fig1(bundled("history"))
    assert (history, memoryless) == (15, 18)


def test_criterion_7_hypothesis_calibration(report):
    rng = np.random.default_rng(7)
    p0, alpha, trials = 0.99, 0.99, 1000
    trues = rng.binomial(10_000, p0, trials)
    rate = np.mean([not hypothesis_test(int(t), 10_000, p0, alpha).accepted for t in trues])
    limit = (1 - alpha) + 3 * math.sqrt(alpha * (1 - alpha) / trials)
    power = {}
    for n in (500, 1000, 10_000):
        low = rng.binomial(n, 0.9, trials)
        power[n] = np.mean([not hypothesis_test(int(t), n, p0, alpha).accepted for t in low])
    ok = rate <= limit and all(v >= 0.99 for v in power.values())
    report(7, ok, f"false rejections {rate:.3f} <= {limit:.4f}; Bernoulli(0.9) rejected "
                  + ", ".join(f"{v:.1%} at {n}" for n, v in power.items()))
    assert ok


@pytest.mark.parametrize("spec", [SELFSTAB, VIRUS], ids=["selfstab", "virus"])
def test_criterion_8_statistical_soundness(report, bundled, spec):
    name, prop, mode = spec
    model = bundled(name)
    rho = parse_property(prop, model)
    truth = exact_oracle(model, rho).max
    eps = delta = 0.05
    runs = 100
    over = 0
    for seed in range(1000, 1000 + runs):
        cfg = EngineConfig(direction="max", mode=mode, budget=10_000, epsilon=eps, delta=delta, seed=seed)
        over += estimate_reward_extremum(model, rho, cfg).estimate > truth * (1 + eps)
    # consistent with an exceedance rate of at most delta: binomial mean plus three standard deviations
    limit = runs * delta + 3 * math.sqrt(runs * delta * (1 - delta))
    ok = over <= limit
    report(8, ok, f"{name}: {over}/{runs} max estimates above {truth:.3f}*(1+eps), allowed <= {limit:.1f}")
    assert ok


DETERMINISM = {
    "history": ["reward", "--prop", FIG1_PROP],
    "selfstab": ["reward", "--prop", SELFSTAB[1]],
    "virus": ["reward", "--prop", VIRUS[1], "--memoryless"],
    "gossip": ["reward", "--prop", 'R{"steps"}min=? [ F<=100 "all" ]'],
    "choice": ["reward", "--prop", 'R{"rounds"}min=? [ F<=100 "met" ]'],
}


def test_criterion_9_worker_determinism(report, tmp_path):
    assert sorted(DETERMINISM) == list_models()
    same = []
    for name, args in DETERMINISM.items():
        outs = []
        for workers in (1, 8):
            path = tmp_path / f"{name}-{workers}.json"
            code = main([args[0], "--model", name, *args[1:], "--seed", "5", "--budget", "20000",
                         "--epsilon", "0.02", "--delta", "0.02", "--workers", str(workers), "--out", str(path)])
            assert code in (0, 2)
            res = json.loads(path.read_text())
            res.pop("wall_time_ms")
            outs.append(res)
        same.append(outs[0] == outs[1])
    ok = all(same)
    report(9, ok, f"identical JSON for --workers 1 and 8 on {sum(same)}/{len(same)} bundled models")
    assert ok
