"""Welch's t-test with a self-contained Student-t tail probability.

The two-sided p-value comes from the regularized incomplete beta function
I_x(a, b), evaluated with the continued-fraction expansion (modified
Lentz), the classic approach: for t and Welch-Satterthwaite df,
p = I_{df/(df+t^2)}(df/2, 1/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import EvaluationError

_MAX_ITER = 300
_EPS = 3e-14
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise EvaluationError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x < 0.0 or x > 1.0:
        raise EvaluationError(f"incomplete beta argument x={x} outside [0,1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for T ~ Student-t with df degrees of freedom."""
    if df <= 0:
        raise EvaluationError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


def _mean_var(sample) -> tuple[float, float, int]:
    n = len(sample)
    mean = sum(sample) / n
    var = sum((v - mean) ** 2 for v in sample) / (n - 1)
    return mean, var, n


def welch_ttest_from_stats(mean_a: float, sd_a: float, n_a: int,
                           mean_b: float, sd_b: float, n_b: int) -> TTestResult:
    """Welch's t-test from summary statistics (two-sided)."""
    if n_a < 2 or n_b < 2:
        raise EvaluationError("each sample needs at least 2 values")
    va, vb = sd_a * sd_a, sd_b * sd_b
    if va == 0.0 and vb == 0.0:
        raise EvaluationError("degenerate variance: both samples are constant")
    ua, ub = va / n_a, vb / n_b
    se2 = ua + ub
    t = (mean_a - mean_b) / math.sqrt(se2)
    # Welch-Satterthwaite via variance ratios: scale-invariant, so denormal
    # variances cannot underflow the denominator
    ra, rb = ua / se2, ub / se2
    df = 1.0 / (ra * ra / (n_a - 1) + rb * rb / (n_b - 1))
    return TTestResult(t, df, student_t_two_sided_p(t, df))


def welch_ttest(sample_a, sample_b) -> TTestResult:
    """Welch's t-test on raw samples (two-sided, unequal variances).

    Raises on degenerate input: fewer than 2 values per sample, or both
    samples constant (zero combined variance).
    """
    if len(sample_a) < 2:
        raise EvaluationError("sample_a needs at least 2 values")
    if len(sample_b) < 2:
        raise EvaluationError("sample_b needs at least 2 values")
    ma, va, na = _mean_var(sample_a)
    mb, vb, nb = _mean_var(sample_b)
    if va == 0.0 and vb == 0.0:
        raise EvaluationError(
            "degenerate variance: sample_a and sample_b are both constant"
        )
    return welch_ttest_from_stats(ma, math.sqrt(va), na, mb, math.sqrt(vb), nb)


def equivalence_interpretation(result: TTestResult, alpha: float = 0.05) -> dict:
    """Both readings of the test, so reports never guess at intent.

    A difference test that fails to reject (p > alpha) is *consistent
    with* equivalence; rejecting (p < alpha) indicates a difference.
    """
    return {
        "p_value": result.p_value,
        "alpha": alpha,
        "rejects_equality": result.p_value < alpha,
        "consistent_with_equivalence": result.p_value >= alpha,
    }
