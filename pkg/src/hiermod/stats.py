"""Welch's unequal-variance t-test with a self-contained Student-t CDF.

The CDF goes through the regularized incomplete beta function, evaluated by
the modified Lentz continued fraction. Samples here are tiny (n = 4 per
group), so no normal approximation is used anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 10_000


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast on this side of the mean; use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, dof: float) -> float:
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    x = dof / (dof + t * t)
    tail = 0.5 * betainc(dof / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class WelchResult:
    t_stat: float
    dof: float
    p_value: float
    mean1: float
    mean2: float
    s1: float
    s2: float


def _mean_sd(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return mean, math.sqrt(var)


def welch_test(sample1: Sequence[float], sample2: Sequence[float],
               alternative: str = "less") -> WelchResult:
    """H0: mu1 == mu2. ``alternative`` is ``less`` (mu1 < mu2), ``greater``
    or ``two-sided``."""
    sample1 = [float(v) for v in sample1]
    sample2 = [float(v) for v in sample2]
    if len(sample1) < 2 or len(sample2) < 2:
        raise ValueError("each sample needs at least 2 values")
    n1, n2 = len(sample1), len(sample2)
    m1, s1 = _mean_sd(sample1)
    m2, s2 = _mean_sd(sample2)
    se1, se2 = s1 * s1 / n1, s2 * s2 / n2
    se = se1 + se2
    if se == 0.0:
        # both samples constant: no evidence either way unless the means differ
        if m1 == m2:
            return WelchResult(0.0, float("nan"), 0.5, m1, m2, s1, s2)
        t = math.copysign(math.inf, m1 - m2)
        dof = float(n1 + n2 - 2)
    else:
        t = (m1 - m2) / math.sqrt(se)
        # in terms of variance shares so tiny variances cannot underflow
        r1, r2 = se1 / se, se2 / se
        dof = 1.0 / (r1 * r1 / (n1 - 1) + r2 * r2 / (n2 - 1))
    if alternative == "less":
        p = student_t_cdf(t, dof)
    elif alternative == "greater":
        p = student_t_cdf(-t, dof)
    elif alternative == "two-sided":
        p = 2.0 * student_t_cdf(-abs(t), dof)
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return WelchResult(t, dof, min(max(p, 0.0), 1.0), m1, m2, s1, s2)
