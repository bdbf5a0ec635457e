import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from memberflow import behavior, herding, network, panel, stats

floats = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
amounts = st.one_of(st.just(0.0), st.floats(1e-6, 1e6))
series = st.integers(3, 40).flatmap(lambda n: st.tuples(
    hnp.arrays(float, n, elements=floats), hnp.arrays(float, n, elements=floats)))


def _varied(x):
    return np.ptp(x) > 1e-6 * max(1.0, np.abs(x).max())


@given(series, st.floats(0.1, 10), st.floats(-50, 50), st.sampled_from([-1, 1]))
def test_pearson_symmetric_and_affine(xy, a, b, sign):
    x, y = xy
    assume(_varied(x) and _varied(y))
    r = stats.pearson(x, y)
    assert -1 - 1e-12 <= r <= 1 + 1e-12
    assert abs(r - stats.pearson(y, x)) < 1e-9
    assert abs(stats.pearson(sign * a * x + b, y) - sign * r) < 1e-6


@settings(max_examples=60)
@given(st.integers(1, 12).flatmap(lambda n: hnp.arrays(float, (n, n), elements=st.floats(-10, 10))))
def test_eigen_trace_and_reconstruction(a):
    m = (a + a.T) / 2
    vals, vecs = stats.symmetric_eigen(m)
    assert abs(vals.sum() - np.trace(m)) < 1e-8
    assert np.abs(vecs @ np.diag(vals) @ vecs.T - m).max() < 1e-8
    assert np.all(np.diff(vals) <= 1e-12)


@given(st.integers(0, 60), st.integers(0, 60))
def test_herding_symmetry(a, b):
    assume(a + b > 0)
    h1, H1 = herding.herding_day(a, b)
    h2, H2 = herding.herding_day(b, a)
    assert h1 == h2 and H1 == -H2 and abs(H1) <= h1


@given(hnp.arrays(float, (3, 20), elements=amounts),
       hnp.arrays(float, (3, 20), elements=amounts),
       st.floats(1e-3, 1e3), st.floats(0.05, 0.95))
def test_directionality_scale_invariant(buy, sell, k, theta):
    active = np.ones(buy.shape, bool)
    a = behavior.stock_directionality(buy, sell, active, theta)
    b = behavior.stock_directionality(k * buy, k * sell, active, theta)
    np.testing.assert_allclose(a, b, atol=1e-12, equal_nan=True)
    c = behavior.stock_directionality(buy, sell, active, min(theta + 0.04, 0.99))
    assert np.all((c <= a + 1e-12) | np.isnan(a))


@given(st.lists(st.tuples(st.text("abcdefgh", min_size=1, max_size=4), st.integers(1, 5)),
                min_size=10, max_size=40, unique_by=lambda t: t[0]), st.randoms())
def test_deciles_permutation_invariant(caps, rnd):
    caps = [(s, float(c)) for s, c in caps]
    ref = panel.assign_deciles(caps)
    shuffled = caps[:]
    rnd.shuffle(shuffled)
    assert panel.assign_deciles(shuffled) == ref
    sizes = np.bincount(list(ref.values()), minlength=11)[1:]
    assert sizes.max() - sizes.min() <= 1


@settings(max_examples=40)
@given(st.integers(2, 10).flatmap(lambda n: hnp.arrays(float, (n, n), elements=st.floats(-1, 1))),
       st.floats(0, 0.5))
def test_network_weights_symmetric_and_thresholded(a, thr):
    w = (a + a.T) / 2
    net = network.network_from_weights([str(i) for i in range(len(w))], w, thr)
    assert np.array_equal(net.weights, net.weights.T)
    assert np.all((net.weights == 0) | (net.weights > thr))


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_ols_nested_monotone(seed):
    g = np.random.default_rng(seed)
    x = np.column_stack([np.ones(40), g.normal(size=(40, 2))])
    y = g.normal(size=40)
    small = stats.ols(x, y).r_squared
    big = stats.ols(np.column_stack([x, g.normal(size=40)]), y).r_squared
    assert big >= small - 1e-12
