import numpy as np
import pytest
import scipy.stats

from otindex.errors import (InsufficientOverlap, NoOverlap, SeriesTooShort,
                            ZeroVariance)
from otindex.evaluate import (EvalReport, _rank_average, cumulative_difference,
                              evaluate, hp_filter, pearson, spearman)
from otindex.index import IndexSeries


def hp_system_matrix(n, lam):
    d = np.zeros((n - 2, n))
    for i in range(n - 2):
        d[i, i:i + 3] = (1.0, -2.0, 1.0)
    return np.eye(n) + lam * d.T @ d


def months(n, start_year=2000):
    return tuple(f"{start_year + i // 12:04d}-{i % 12 + 1:02d}" for i in range(n))


class TestHpFilter:
    def test_constant_series(self):
        y = np.full(20, 3.25)
        trend, cycle = hp_filter(y, 129600.0)
        np.testing.assert_allclose(trend, y, atol=1e-10)
        np.testing.assert_allclose(cycle, 0.0, atol=1e-10)

    def test_linear_series(self):
        y = 0.7 * np.arange(40) - 3.0
        _, cycle = hp_filter(y, 129600.0)
        assert np.abs(cycle).max() < 1e-8

    def test_linear_system_residual(self, rng):
        y = rng.standard_normal(50)
        lam = 129600.0
        trend, _ = hp_filter(y, lam)
        a = hp_system_matrix(50, lam)
        assert np.abs(a @ trend - y).max() < 1e-8

    def test_reconstruction_exact(self, rng):
        y = rng.standard_normal(80) * 20 + 100
        trend, cycle = hp_filter(y, 129600.0)
        np.testing.assert_allclose(trend + cycle, y, atol=1e-10)

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            hp_filter([1.0, 2.0, 3.0], 10.0)

    def test_matches_dense_solve(self, rng):
        y = rng.standard_normal(30)
        lam = 7.5
        trend, _ = hp_filter(y, lam)
        expected = np.linalg.solve(hp_system_matrix(30, lam), y)
        np.testing.assert_allclose(trend, expected, atol=1e-10)


class TestPearson:
    def test_affine_relation(self, rng):
        x = rng.standard_normal(25)
        assert pearson(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-12)

    def test_negation(self, rng):
        x = rng.standard_normal(25)
        assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_computed(self):
        assert pearson([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]) == \
            pytest.approx(0.5, abs=1e-12)

    def test_identical_exactly_one(self, rng):
        x = rng.standard_normal(40) * 17 + 100
        assert pearson(x, x) == 1.0

    def test_constant_raises(self):
        with pytest.raises(ZeroVariance):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_symmetry(self, rng):
        x = rng.standard_normal(30)
        y = rng.standard_normal(30)
        assert pearson(x, y) == pytest.approx(pearson(y, x), abs=1e-12)

    def test_matches_scipy(self, rng):
        x = rng.standard_normal(50)
        y = 0.3 * x + rng.standard_normal(50)
        assert pearson(x, y) == pytest.approx(
            scipy.stats.pearsonr(x, y).statistic, abs=1e-12)


class TestSpearman:
    def test_monotone_transform_gives_one(self, rng):
        x = rng.standard_normal(30)
        assert spearman(x, np.exp(x)) == pytest.approx(1.0, abs=1e-12)

    def test_reversed_gives_minus_one(self):
        x = np.arange(10.0)
        assert spearman(x, x[::-1]) == pytest.approx(-1.0, abs=1e-12)

    def test_average_rank_ties(self):
        np.testing.assert_allclose(_rank_average(np.array([1.0, 2.0, 2.0, 4.0])),
                                   [1.0, 2.5, 2.5, 4.0])

    def test_monotone_invariance(self, rng):
        x = rng.standard_normal(30)
        y = rng.standard_normal(30)
        base = spearman(x, y)
        assert spearman(np.exp(x), y) == pytest.approx(base, abs=1e-12)
        assert spearman(x, y ** 3) == pytest.approx(base, abs=1e-12)

    def test_matches_scipy_with_ties(self, rng):
        x = rng.integers(0, 6, size=40).astype(float)
        y = rng.integers(0, 6, size=40).astype(float)
        assert spearman(x, y) == pytest.approx(
            scipy.stats.spearmanr(x, y).statistic, abs=1e-12)


class TestCumulativeDifference:
    def test_identical_all_zero(self, rng):
        s = IndexSeries(months(10), rng.standard_normal(10))
        out = cumulative_difference(s, s)
        np.testing.assert_array_equal(out.values, np.zeros(10))

    def test_single_common_month(self):
        a = IndexSeries(("2001-01", "2001-02"), np.array([1.0, 5.0]))
        b = IndexSeries(("2001-02", "2001-03"), np.array([3.0, 9.0]))
        out = cumulative_difference(a, b)
        assert out.months == ("2001-02",)
        np.testing.assert_allclose(out.values, [2.0])

    def test_running_sum(self):
        a = IndexSeries(months(2), np.array([1.0, 1.0]))
        b = IndexSeries(months(2), np.array([2.0, 4.0]))
        out = cumulative_difference(a, b)
        np.testing.assert_allclose(out.values, [1.0, 4.0])

    def test_non_decreasing(self, rng):
        a = IndexSeries(months(50), rng.standard_normal(50))
        b = IndexSeries(months(50), rng.standard_normal(50))
        out = cumulative_difference(a, b)
        assert np.all(np.diff(out.values) >= 0)

    def test_signed_variant(self):
        a = IndexSeries(months(2), np.array([1.0, 1.0]))
        b = IndexSeries(months(2), np.array([2.0, 0.0]))
        out = cumulative_difference(a, b, signed=True)
        np.testing.assert_allclose(out.values, [-1.0, 0.0])

    def test_no_overlap_raises(self):
        a = IndexSeries(("2001-01",), np.array([1.0]))
        b = IndexSeries(("2002-01",), np.array([1.0]))
        with pytest.raises(NoOverlap):
            cumulative_difference(a, b)


class TestEvaluate:
    def test_self_comparison_exact_ones(self, rng):
        s = IndexSeries(months(30), rng.standard_normal(30) + 100)
        report = evaluate(s, s)
        for value in report.correlations().values():
            assert value == 1.0
        np.testing.assert_array_equal(report.cumdiff.values, np.zeros(30))
        assert report.hp_lambda == 129600.0

    def test_affine_reference_raw_pearson_one(self, rng):
        s = IndexSeries(months(30), rng.standard_normal(30) + 100)
        ref = IndexSeries(months(30), 2.5 * s.values - 40.0)
        report = evaluate(s, ref)
        assert report.pearson_raw == pytest.approx(1.0, abs=1e-12)

    def test_report_schema(self, rng):
        s = IndexSeries(months(26), rng.standard_normal(26))
        ref = IndexSeries(months(26), rng.standard_normal(26))
        report = evaluate(s, ref)
        assert set(report.correlations()) == {
            "pearson_raw", "pearson_trend", "pearson_cycle",
            "spearman_raw", "spearman_trend", "spearman_cycle",
        }
        for value in report.correlations().values():
            assert -1.0 <= value <= 1.0

    def test_alignment_inner_join(self, rng):
        s = IndexSeries(months(36), rng.standard_normal(36))
        ref = IndexSeries(months(36)[6:], rng.standard_normal(30))
        report = evaluate(s, ref)
        assert len(report.cumdiff) == 30
        assert report.cumdiff.months[0] == months(36)[6]

    def test_insufficient_overlap(self, rng):
        s = IndexSeries(months(20), rng.standard_normal(20))
        with pytest.raises(InsufficientOverlap):
            evaluate(s, s)
