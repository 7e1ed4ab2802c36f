import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as scipy_stats
from scipy.special import betainc

from phishbench.errors import EvaluationError
from phishbench.stats import (equivalence_interpretation,
                              regularized_incomplete_beta,
                              student_t_two_sided_p, welch_ttest,
                              welch_ttest_from_stats)


def test_identical_samples_t_zero_p_one():
    result = welch_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert result.t_statistic == 0.0
    assert result.p_value == 1.0


def test_swapping_samples_negates_t_preserves_p():
    a, b = [0.9, 0.95, 0.97, 0.91], [0.7, 0.75, 0.71]
    fwd = welch_ttest(a, b)
    rev = welch_ttest(b, a)
    assert fwd.t_statistic == pytest.approx(-rev.t_statistic, abs=1e-12)
    assert fwd.p_value == pytest.approx(rev.p_value, abs=1e-12)
    assert fwd.degrees_of_freedom == pytest.approx(rev.degrees_of_freedom, abs=1e-12)


def test_degenerate_variance_names_samples():
    with pytest.raises(EvaluationError, match="sample_a and sample_b"):
        welch_ttest([2.0, 2.0, 2.0], [5.0, 5.0])
    with pytest.raises(EvaluationError, match="sample_a"):
        welch_ttest([1.0], [1.0, 2.0])


def test_one_constant_sample_is_fine():
    result = welch_ttest([2.0, 2.0, 2.0], [5.0, 6.0])
    reference = scipy_stats.ttest_ind([2.0, 2.0, 2.0], [5.0, 6.0], equal_var=False)
    assert result.p_value == pytest.approx(reference.pvalue, abs=1e-6)


def test_clearly_different_samples_with_jitter():
    a = [0.0, 1e-9, -1e-9, 5e-10]
    b = [1.0, 1.0 + 1e-9, 1.0 - 1e-9, 1.0 + 5e-10]
    assert welch_ttest(a, b).p_value < 0.001


def test_paper_summary_stats_consistent_with_equivalence():
    # best two same-dataset families: 0.977/0.016 vs 0.978/0.011, n=40 each
    result = welch_ttest_from_stats(0.977, 0.016, 40, 0.978, 0.011, 40)
    reference = scipy_stats.ttest_ind_from_stats(0.977, 0.016, 40, 0.978, 0.011, 40,
                                                 equal_var=False)
    assert result.p_value == pytest.approx(reference.pvalue, abs=1e-6)
    assert result.p_value > 0.05
    reading = equivalence_interpretation(result)
    assert reading["consistent_with_equivalence"] is True
    assert reading["rejects_equality"] is False


def test_matches_scipy_on_random_pairs():
    rng = np.random.default_rng(42)
    for _ in range(100):
        na, nb = rng.integers(2, 30), rng.integers(2, 30)
        a = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 3), size=na)
        b = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 3), size=nb)
        mine = welch_ttest(a.tolist(), b.tolist())
        reference = scipy_stats.ttest_ind(a, b, equal_var=False)
        assert mine.t_statistic == pytest.approx(reference.statistic, abs=1e-9)
        assert mine.p_value == pytest.approx(reference.pvalue, abs=1e-6)


def test_incomplete_beta_against_scipy():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, b = rng.uniform(0.2, 50), rng.uniform(0.2, 50)
        x = rng.uniform(0, 1)
        assert regularized_incomplete_beta(a, b, x) == pytest.approx(
            betainc(a, b, x), abs=1e-10)
    assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
    assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0


def test_student_t_tail_against_scipy():
    for t in (-4.0, -0.5, 0.0, 0.33, 2.5, 11.0):
        for df in (1.0, 2.5, 10.0, 78.0):
            assert student_t_two_sided_p(t, df) == pytest.approx(
                2 * scipy_stats.t.sf(abs(t), df), abs=1e-10)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=15),
       st.lists(st.floats(-50, 50), min_size=2, max_size=15))
def test_welch_properties(a, b):
    try:
        result = welch_ttest(a, b)
    except EvaluationError:
        # both computed variances are zero (constant samples, or denormal
        # spreads whose squared deviations underflow)
        assert np.var(a, ddof=1) == 0.0 and np.var(b, ddof=1) == 0.0
        return
    assert 0.0 <= result.p_value <= 1.0
    assert result.degrees_of_freedom > 0
    swapped = welch_ttest(b, a)
    assert math.isclose(result.p_value, swapped.p_value,
                        rel_tol=1e-9, abs_tol=1e-12)
