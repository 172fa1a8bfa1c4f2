import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from smcmdp.stats import (NoCandidateError, best_split, chernoff_n, hoeffding_n, hypothesis_test, multi_chernoff_n,
                          multi_confidence, normal_quantile, optimal_split, split_objective)

mpmath.mp.dps = 50


def hp_chernoff(eps, delta):
    return int(mpmath.ceil((mpmath.log(2) - mpmath.log(delta)) / (2 * mpmath.mpf(eps) ** 2)))


def hp_multi(eps, delta, m):
    per = 1 - (1 - mpmath.mpf(delta)) ** (mpmath.mpf(1) / m)
    return int(mpmath.ceil((mpmath.log(2) - mpmath.log(per)) / (2 * mpmath.mpf(eps) ** 2)))


def hp_hoeffding(eps, delta, rng):
    return int(mpmath.ceil(mpmath.log(2 / mpmath.mpf(delta)) * mpmath.mpf(rng) ** 2 / (2 * mpmath.mpf(eps) ** 2)))


def test_chernoff_examples():
    assert chernoff_n(0.01, 0.01) == 26492 == hp_chernoff("0.01", "0.01")
    assert chernoff_n(0.1, 0.05) == hp_chernoff("0.1", "0.05") == 185


def test_chernoff_inverse_consistency():
    for n in (5000, 26492, 100000):
        delta = 2 * math.exp(-2 * 0.01 ** 2 * n)
        assert chernoff_n(0.01, delta) == n


def test_multi_chernoff_examples():
    assert multi_chernoff_n(0.01, 0.01, 2) == 29945 == hp_multi("0.01", "0.01", 2)
    assert multi_chernoff_n(0.01, 0.01, 1) == chernoff_n(0.01, 0.01)


@pytest.mark.parametrize("eps", ["0.3", "0.1", "0.03", "0.01", "0.05"])
@pytest.mark.parametrize("delta", ["0.3", "0.1", "0.03", "0.01", "0.05"])
def test_sample_sizes_against_high_precision(eps, delta):
    e, d = float(eps), float(delta)
    assert chernoff_n(e, d) == hp_chernoff(eps, delta)
    for m in (1, 2, 7, 1000, 100_000):
        assert multi_chernoff_n(e, d, m) == hp_multi(eps, delta, m)
    assert hoeffding_n(e, d, 3) == hp_hoeffding(eps, delta, 3)
    assert multi_confidence(e, chernoff_n(e, d), 1) <= d


@given(st.floats(0.001, 0.5), st.floats(0.001, 0.5), st.integers(1, 10 ** 6))
def test_multi_chernoff_equals_chernoff_at_one(eps, delta, m):
    assert multi_chernoff_n(eps, delta, 1) == chernoff_n(eps, delta)
    assert multi_chernoff_n(eps, delta, m + 1) >= multi_chernoff_n(eps, delta, m)


@given(st.floats(0.001, 0.5), st.floats(0.001, 0.5), st.floats(1.01, 2), st.integers(1, 1000))
def test_sizes_nonincreasing(eps, delta, factor, m):
    assert chernoff_n(min(0.99, eps * factor), delta) <= chernoff_n(eps, delta)
    assert chernoff_n(eps, min(0.99, delta * factor)) <= chernoff_n(eps, delta)
    assert multi_chernoff_n(min(0.99, eps * factor), delta, m) <= multi_chernoff_n(eps, delta, m)
    assert hoeffding_n(eps, min(0.99, delta * factor), 2) <= hoeffding_n(eps, delta, 2)


def test_hoeffding_examples():
    assert hoeffding_n(0.01, 0.01, 10) == 2649159 == hp_hoeffding("0.01", "0.01", 10)
    assert hoeffding_n(0.01, 0.01, 1) == chernoff_n(0.01, 0.01)
    n1, n2 = hoeffding_n(0.01, 0.01, 3), hoeffding_n(0.01, 0.01, 6)
    assert 4 * n1 - 4 <= n2 <= 4 * n1


def test_multi_confidence_examples():
    c = multi_confidence(0.01, 26492, 1)
    assert c == pytest.approx(0.005, rel=1e-3) and c <= 0.01
    assert multi_confidence(0.01, 0, 5) == 1.0
    assert multi_confidence(0.01, 26492, 1, two_sided=True) <= 0.01


@given(st.floats(0.001, 0.5), st.integers(1, 10 ** 5), st.integers(1, 1000))
def test_multi_confidence_decreasing_in_n(eps, n, m):
    assert multi_confidence(eps, n + 1, m) <= multi_confidence(eps, n, m)


def test_optimal_split_examples():
    s = optimal_split(0.3, 0.5, 100)
    assert (s.n, s.m) == (2, 50)
    s = optimal_split(0.3, 1.0, 100)
    assert (s.n, s.m) == (1, 100)
    assert split_objective(1, 1, 3, 4) == 1


def test_optimal_split_needs_a_candidate():
    with pytest.raises(NoCandidateError):
        optimal_split(0.0, 0.0, 100)


@given(st.floats(0.0001, 1), st.floats(0.0001, 1), st.integers(1, 10 ** 6))
def test_split_respects_budget(p_g, p_gbar, n_max):
    s = optimal_split(p_g, p_gbar, n_max)
    assert s.n >= 1 and s.m >= 1 and s.n * s.m <= n_max


def test_best_split_dominates_heuristic():
    h = optimal_split(0.01, 0.05, 2000)
    b = best_split(0.01, 0.05, 2000)
    assert b.objective >= h.objective
    assert b.n * b.m <= 2000


def test_normal_quantile_examples():
    assert normal_quantile(0.5) == 0
    assert normal_quantile(0.95) == pytest.approx(1.644854, abs=1e-6)
    assert normal_quantile(0.99) == pytest.approx(2.326348, abs=1e-6)


def test_normal_quantile_against_mpmath():
    qs = np.concatenate([np.linspace(0.0001, 0.9999, 2001), [1e-10, 1e-6, 0.02425, 1 - 0.02425]])
    worst = max(abs(normal_quantile(float(q)) - float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(float(q)) - 1)))
                for q in qs)
    assert worst < 1e-6


@given(st.floats(1e-8, 1 - 1e-8))
def test_normal_quantile_symmetry(q):
    assert abs(normal_quantile(q) + normal_quantile(1 - q)) < 1e-6


def test_hypothesis_examples():
    assert hypothesis_test(50, 100, 0.5, 0.5).z == 0
    ok = hypothesis_test(985, 1000, 0.99, 0.95)
    assert ok.z == pytest.approx(-1.589, abs=1e-3) and ok.z_crit == pytest.approx(-1.645, abs=1e-3) and ok.accepted
    bad = hypothesis_test(984, 1000, 0.99, 0.95)
    assert bad.z == pytest.approx(-1.907, abs=1e-3) and not bad.accepted


def test_hypothesis_calibration_at_ten_thousand_samples():
    rng = np.random.default_rng(2024)
    p0, alpha, trials = 0.99, 0.99, 1000
    trues = rng.binomial(10_000, p0, trials)
    rate = np.mean([not hypothesis_test(int(t), 10_000, p0, alpha).accepted for t in trues])
    assert rate <= (1 - alpha) + 3 * math.sqrt(alpha * (1 - alpha) / trials)


@pytest.mark.parametrize("args", [(0, 0.1), (1, 0.1), (0.1, 0), (0.1, 1)])
def test_parameter_checks(args):
    with pytest.raises(ValueError):
        chernoff_n(*args)
