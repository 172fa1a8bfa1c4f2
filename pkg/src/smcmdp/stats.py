"""Sample sizes, confidence of multiple estimates, budget splitting and the Z test."""
from __future__ import annotations

import math
from dataclasses import dataclass

# the ceiling tolerates this much relative float noise, so that exact inverses map back to N
_CEIL_TOL = 1e-12


class NoCandidateError(RuntimeError):
    """No sampled scheduler ever satisfied the property."""


def _ceil(x: float) -> int:
    r = round(x)
    if abs(x - r) <= _CEIL_TOL * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def _check(epsilon: float, delta: float) -> None:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")


def chernoff_n(epsilon: float, delta: float) -> int:
    """Simulations needed so that ``P(|p_hat - p| >= epsilon) <= delta``."""
    _check(epsilon, delta)
    return _ceil((math.log(2) - math.log(delta)) / (2 * epsilon ** 2))


def multi_chernoff_n(epsilon: float, delta: float, m: int) -> int:
    """Per-estimate simulations so that all ``m`` estimates hold jointly with probability ``1 - delta``."""
    _check(epsilon, delta)
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return chernoff_n(epsilon, delta)
    # 1 - (1 - delta)**(1/m), without cancellation for large m
    per = -math.expm1(math.log1p(-delta) / m)
    return _ceil((math.log(2) - math.log(per)) / (2 * epsilon ** 2))


def multi_confidence(epsilon: float, n: int, m: int, two_sided: bool = False) -> float:
    """Failure probability ``1 - (1 - e^{-2 eps^2 n})^m`` of ``m`` simultaneous estimates.

    ``two_sided`` uses ``2 e^{-2 eps^2 n}`` per estimate (capped at 1), the
    exact inverse of ``multi_chernoff_n``.
    """
    tail = math.exp(-2 * epsilon ** 2 * n)
    if two_sided:
        tail = min(1.0, 2 * tail)
    if tail >= 1.0:
        return 1.0
    return -math.expm1(m * math.log1p(-tail))


def hoeffding_n(epsilon: float, delta: float, value_range: float) -> int:
    """Samples for an absolute error ``epsilon`` on a variable bounded in an interval of width ``value_range``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not value_range > 0:
        raise ValueError("range must be positive")
    return _ceil(math.log(2 / delta) * value_range ** 2 / (2 * epsilon ** 2))


@dataclass(frozen=True)
class BudgetSplit:
    n: int      # simulations per scheduler
    m: int      # schedulers
    p_g: float
    p_gbar: float

    @property
    def objective(self) -> float:
        return split_objective(self.p_g, self.p_gbar, self.n, self.m)


def split_objective(p_g: float, p_gbar: float, n: int, m: int) -> float:
    """Probability of sampling a good scheduler and seeing it satisfy the property at least once."""
    return (1 - (1 - p_g) ** m) * (1 - (1 - p_gbar) ** n)


def optimal_split(p_g: float, p_gbar: float, n_max: int) -> BudgetSplit:
    """``N = ceil(1/p_gbar)`` simulations for each of ``M = floor(n_max/N)`` schedulers."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if p_gbar <= 0:
        raise NoCandidateError("no scheduler satisfied the property; raise the budget or the step bound")
    if p_gbar > 1:
        raise ValueError("p_gbar must be a probability")
    n = min(_ceil(1 / p_gbar), n_max)
    return BudgetSplit(n, max(1, n_max // n), p_g, p_gbar)


def best_split(p_g: float, p_gbar: float, n_max: int) -> BudgetSplit:
    """Numerically maximise ``split_objective`` over ``N * M <= n_max``."""
    best = None
    for n in range(1, n_max + 1):
        m = n_max // n
        val = split_objective(p_g, p_gbar, n, m)
        if best is None or val > best[0]:
            best = (val, n, m)
    return BudgetSplit(best[1], best[2], p_g, p_gbar)


# --------------------------------------------------------------------------
# normal quantile (Acklam's rational approximation with one Halley step)

_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _acklam(q: float) -> float:
    if q < _P_LOW:
        t = math.sqrt(-2 * math.log(q))
        return (((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / \
               ((((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1)
    if q > 1 - _P_LOW:
        return -_acklam(1 - q)
    r = q - 0.5
    t = r * r
    return (((((_A[0] * t + _A[1]) * t + _A[2]) * t + _A[3]) * t + _A[4]) * t + _A[5]) * r / \
           (((((_B[0] * t + _B[1]) * t + _B[2]) * t + _B[3]) * t + _B[4]) * t + 1)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2))


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q > 0.5:
        return -normal_quantile(1 - q)
    x = _acklam(q)
    # one Halley refinement brings the relative error to ~1e-15
    e = normal_cdf(x) - q
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


@dataclass(frozen=True)
class HypothesisResult:
    z: float
    z_crit: float
    accepted: bool


def hypothesis_test(trues: int, samples: int, p0: float, alpha: float) -> HypothesisResult:
    """Z test of ``H0: P(phi) >= p0``; accepted iff ``Z > Phi^-1(1 - alpha)``."""
    if samples < 1 or not 0 <= trues <= samples:
        raise ValueError("need 0 <= trues <= samples and samples >= 1")
    if not 0 < p0 < 1 or not 0 < alpha < 1:
        raise ValueError("p0 and alpha must lie in (0, 1)")
    z = (trues - samples * p0) / math.sqrt(samples * p0 * (1 - p0))
    z_crit = normal_quantile(1 - alpha)
    return HypothesisResult(z, z_crit, z > z_crit)
