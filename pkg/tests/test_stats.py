import numpy as np
import pytest

from memberflow import stats
from oracles import ols_normal_equations, partial_single_control, pearson_loop
from conftest import rng


def test_pearson_examples():
    assert stats.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert stats.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert stats.pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_pearson_matches_loop():
    g = rng(11)
    for _ in range(50):
        n = int(g.integers(3, 40))
        x, y = g.normal(size=n), g.normal(size=n)
        assert stats.pearson(x, y) == pytest.approx(pearson_loop(x, y), abs=1e-12)


def test_pearson_errors():
    with pytest.raises(stats.ZeroVariance):
        stats.pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(stats.LengthMismatch):
        stats.pearson([1, 2, 3], [1, 2])


def test_partial_correlation_single_control_closed_form():
    g = rng(12)
    for _ in range(50):
        z = g.normal(size=60)
        x = 0.5 * z + g.normal(size=60)
        y = -0.3 * z + 0.4 * x + g.normal(size=60)
        assert stats.partial_correlation(x, y, [z]) == pytest.approx(partial_single_control(x, y, z), abs=1e-10)


def test_partial_correlation_cases():
    g = rng(13)
    z = g.normal(size=10000)
    with pytest.raises(stats.ZeroVariance):
        stats.partial_correlation(z, g.normal(size=10000), [z])
    x = z + g.normal(size=10000)
    y = -z + g.normal(size=10000)
    assert abs(stats.partial_correlation(x, y, [z])) < 0.05
    a, b = g.normal(size=30), g.normal(size=30)
    assert stats.partial_correlation(a, b, []) == pytest.approx(stats.pearson(a, b), abs=1e-12)
    with pytest.raises(stats.RankDeficientControls):
        stats.partial_correlation(a, b, [z[:30], 2 * z[:30]])


def test_ols_examples():
    x = np.arange(10.0)
    fit = stats.ols(np.column_stack([np.ones(10), x]), 2 * x)
    assert fit.coefficients[1] == pytest.approx(2.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    y = rng(1).normal(size=25)
    assert stats.ols(np.ones((25, 1)), y).coefficients[0] == pytest.approx(y.mean(), abs=1e-12)


def test_ols_matches_normal_equations():
    g = rng(14)
    x = np.column_stack([np.ones(200), g.normal(size=(200, 3))])
    y = x @ np.array([0.5, -1.0, 2.0, 0.1]) + g.normal(size=200)
    fit = stats.ols(x, y)
    np.testing.assert_allclose(fit.coefficients, ols_normal_equations(x.tolist(), y.tolist()), atol=1e-8)
    np.testing.assert_allclose(x.T @ fit.residuals, 0.0, atol=1e-9)
    bigger = stats.ols(np.column_stack([x, g.normal(size=200)]), y)
    assert bigger.r_squared >= fit.r_squared


def test_ols_errors():
    x = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(stats.RankDeficient):
        stats.ols(x, np.arange(10.0))
    with pytest.raises(stats.DimensionMismatch):
        stats.ols(np.ones((10, 1)), np.ones(9))


def test_ols_p_values_normal_approximation():
    g = rng(15)
    x = np.column_stack([np.ones(500), g.normal(size=500)])
    fit = stats.ols(x, g.normal(size=500))
    from scipy.stats import norm

    np.testing.assert_allclose(fit.p_values, 2 * norm.sf(np.abs(fit.t_stats)), rtol=1e-12)


def test_eigen_examples():
    vals, _ = stats.symmetric_eigen(np.eye(3))
    np.testing.assert_allclose(vals, [1, 1, 1], atol=1e-15)
    vals, _ = stats.symmetric_eigen(np.array([[1, 0.4], [0.4, 1]]))
    np.testing.assert_allclose(vals, [1.4, 0.6], atol=1e-14)


def test_eigen_reconstruction_and_oracle():
    g = rng(16)
    for n in (1, 2, 5, 8, 31, 62):
        a = g.normal(size=(n, n))
        m = (a + a.T) / 2
        vals, vecs = stats.symmetric_eigen(m)
        np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, m, atol=1e-10)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-10)
        np.testing.assert_allclose(vals, np.sort(np.linalg.eigvalsh(m))[::-1], atol=1e-10)
        assert np.all(np.diff(vals) <= 0)


def test_eigen_errors():
    with pytest.raises(stats.NotSquare):
        stats.symmetric_eigen(np.ones((2, 3)))
    with pytest.raises(stats.NotSymmetric):
        stats.symmetric_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_correlation_matrix_trace():
    x = rng(17).normal(size=(12, 80))
    c = stats.correlation_matrix(x)
    vals, _ = stats.symmetric_eigen(c)
    assert vals.sum() == pytest.approx(12.0, abs=1e-8)
    np.testing.assert_allclose(c, np.corrcoef(x), atol=1e-12)


def test_masked_pairwise_pearson_matches_loop():
    g = rng(18)
    a, b = g.normal(size=(4, 50)), g.normal(size=(3, 50))
    ma, mb = g.random((4, 50)) < 0.8, g.random((3, 50)) < 0.8
    corr, overlap = stats.masked_pairwise_pearson(a, b, ma, mb, min_overlap=5)
    for i in range(4):
        for j in range(3):
            both = ma[i] & mb[j]
            assert overlap[i, j] == both.sum()
            assert corr[i, j] == pytest.approx(pearson_loop(a[i, both], b[j, both]), abs=1e-12)


def test_rowwise_pearson_min_overlap():
    g = rng(19)
    a, b = g.normal(size=(2, 40)), g.normal(size=(2, 40))
    mask = np.ones((2, 40), bool)
    mask[1, 10:] = False
    out = stats.rowwise_pearson(a, b, mask, min_overlap=30)
    assert out[0] == pytest.approx(pearson_loop(a[0], b[0]), abs=1e-12)
    assert np.isnan(out[1])
