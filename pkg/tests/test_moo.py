import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mogan import moo
from mogan.errors import DimensionError, NadirError, NumericError, PreconditionError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
positive = st.floats(0.01, 50, allow_nan=False, allow_infinity=False)


def loss_vectors(min_size=1, max_size=8, elements=finite):
    return st.integers(min_size, max_size).flatmap(lambda k: arrays(float, k, elements=elements))


def grid_min_norm_k2(g, points=200_001):
    """Brute-force ||a g0 + (1-a) g1|| over a dense grid of a in [0, 1]."""
    d = g[0] - g[1]
    a = np.linspace(0.0, 1.0, points)
    sq = (d @ d) * a**2 + 2.0 * (d @ g[1]) * a + g[1] @ g[1]
    return float(np.sqrt(max(sq.min(), 0.0)))


# ---------------------------------------------------------------------------
# dominance
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "a, b, expected",
    [((1, 2), (2, 3), True), ((1, 3), (2, 2), False), ((1, 2), (1, 2), False)],
)
def test_dominates_examples(a, b, expected):
    assert moo.dominates(a, b) is expected


def test_dominates_length_mismatch():
    with pytest.raises(DimensionError):
        moo.dominates([1.0, 2.0], [1.0, 2.0, 3.0])


@given(loss_vectors(elements=st.integers(-3, 3).map(float)))
def test_dominates_irreflexive(a):
    assert not moo.dominates(a, a)


@settings(max_examples=300)
@given(st.integers(1, 4).flatmap(lambda k: st.tuples(*[arrays(float, k, elements=st.integers(-2, 2).map(float))] * 3)))
def test_dominates_antisymmetric_and_transitive(triple):
    a, b, c = triple
    assert not (moo.dominates(a, b) and moo.dominates(b, a))
    if moo.dominates(a, b) and moo.dominates(b, c):
        assert moo.dominates(a, c)


# ---------------------------------------------------------------------------
# min-norm point
# ---------------------------------------------------------------------------


def test_min_norm_single_objective():
    alpha, direction = moo.min_norm_point([[3.0, 4.0]])
    np.testing.assert_array_equal(alpha, [1.0])
    np.testing.assert_array_equal(direction, [3.0, 4.0])


@pytest.mark.parametrize(
    "g, alpha, direction",
    [
        ([[1.0, 0.0], [-1.0, 0.0]], [0.5, 0.5], [0.0, 0.0]),
        ([[2.0, 0.0], [-1.0, 0.0]], [1 / 3, 2 / 3], [0.0, 0.0]),
        ([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5], [0.5, 0.5]),
    ],
)
def test_min_norm_examples(g, alpha, direction):
    a, d = moo.min_norm_point(g)
    np.testing.assert_allclose(a, alpha, atol=1e-9)
    np.testing.assert_allclose(d, direction, atol=1e-9)
    assert moo.is_simplex(a)


@pytest.mark.parametrize(
    "g",
    [[[2.0, 0.0], [-1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [-1.0, 0.0]]],
)
def test_min_norm_examples_against_grid(g):
    g = np.array(g)
    _, d = moo.min_norm_point(g)
    assert abs(np.linalg.norm(d) - grid_min_norm_k2(g)) < 1e-4


def test_min_norm_grid_frozen_values():
    # grid oracle output, computed once and frozen
    assert grid_min_norm_k2(np.array([[2.0, 0.0], [-1.0, 0.0]])) == pytest.approx(0.0, abs=1e-5)
    assert grid_min_norm_k2(np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(np.sqrt(0.5), abs=1e-9)


def test_min_norm_random_k2_matches_grid():
    rng = np.random.default_rng(11)
    for _ in range(200):
        g = rng.standard_normal((2, int(rng.integers(2, 9))))
        alpha, d = moo.min_norm_point(g)
        assert moo.is_simplex(alpha)
        assert abs(np.linalg.norm(d) - grid_min_norm_k2(g)) < 1e-4


def test_min_norm_never_beaten_by_random_simplex_weights():
    rng = np.random.default_rng(12)
    for _ in range(100):
        k = int(rng.integers(3, 5))
        g = rng.standard_normal((k, int(rng.integers(2, 9))))
        alpha, d = moo.min_norm_point(g)
        beta = rng.dirichlet(np.ones(k), size=10_000)
        assert np.linalg.norm(d) <= np.linalg.norm(beta @ g, axis=1).min() + 1e-8
        assert np.linalg.norm(d) <= np.linalg.norm(g, axis=1).min() + 1e-8
        np.testing.assert_allclose(d, alpha @ g, atol=1e-12)


def test_min_norm_zero_iff_stationary():
    rng = np.random.default_rng(13)
    for _ in range(50):
        k, p = int(rng.integers(2, 5)), int(rng.integers(2, 9))
        g = rng.standard_normal((k, p))
        w = rng.dirichlet(np.ones(k))
        stationary = g - w @ g  # w is an exact zero combination
        _, d = moo.min_norm_point(stationary)
        assert np.linalg.norm(d) < 1e-7

        u = rng.standard_normal(p)
        u /= np.linalg.norm(u)
        # every row has a positive component along u, so no combination vanishes
        noise = rng.standard_normal((k, p))
        noise -= np.outer(noise @ u, u)
        descent = u + 0.5 * noise
        _, d = moo.min_norm_point(descent)
        assert np.linalg.norm(d) >= 1.0 - 1e-9


def test_min_norm_rejects_bad_input():
    with pytest.raises(NumericError):
        moo.min_norm_point([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(NumericError):
        moo.min_norm_point([[1.0, np.inf]])
    with pytest.raises(DimensionError):
        moo.min_norm_point([1.0, 2.0])
    with pytest.raises(ValueError):
        moo.min_norm_point([[1.0, 0.0]], tol=0.0)


def test_min_norm_duplicate_and_zero_rows():
    alpha, d = moo.min_norm_point([[1.0, 2.0], [1.0, 2.0]])
    assert moo.is_simplex(alpha)
    np.testing.assert_allclose(d, [1.0, 2.0])
    _, d = moo.min_norm_point([[1.0, 2.0], [0.0, 0.0], [3.0, -1.0]])
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# weight rules
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 4, 8])
def test_avg_weights(k):
    np.testing.assert_array_equal(moo.avg_weights(k), np.full(k, 1.0 / k))


@pytest.mark.parametrize("k", [0, -1, 2.5])
def test_avg_weights_rejects(k):
    with pytest.raises(ValueError):
        moo.avg_weights(k)


def test_gman_examples():
    np.testing.assert_array_equal(moo.gman_weights([0.0, 0.0], 1.0), [0.5, 0.5])
    w = moo.gman_weights([1.0, 2.0], 1e6)
    assert w[0] < 1e-12 and w[1] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        moo.gman_weights([1.0, 2.0], -0.1)


@given(loss_vectors())
def test_gman_beta_zero_is_avg_exactly(l):
    np.testing.assert_array_equal(moo.gman_weights(l, 0.0), moo.avg_weights(l.size))


@given(loss_vectors(), st.floats(0, 1e6, allow_nan=False))
def test_gman_weights_on_simplex(l, beta):
    w = moo.gman_weights(l, beta)
    assert np.all(np.isfinite(w))
    assert moo.is_simplex(w)


@pytest.mark.parametrize(
    "l, eta, expected",
    [((1.0, 1.0), 2.0, (0.5, 0.5)), ((1.0, 1.5), 2.0, (1 / 3, 2 / 3))],
)
def test_hv_weights_examples(l, eta, expected):
    np.testing.assert_allclose(moo.hv_weights(l, moo.NadirState(eta, 1.5)), expected, atol=1e-15)


def test_hv_weights_far_nadir_is_average():
    w = moo.hv_weights([1.0, 1.5], moo.NadirState(1e9, 1.5))
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-6)


def test_hv_weights_stale_nadir():
    with pytest.raises(NadirError) as info:
        moo.hv_weights([1.0, 2.0, 0.5], moo.NadirState(2.0, 1.5))
    assert info.value.index == 1
    assert isinstance(info.value, PreconditionError)
    with pytest.raises(PreconditionError):
        moo.hv_loss([3.0], moo.NadirState(2.0, 1.5))


@given(loss_vectors(min_size=2, elements=positive), st.data())
def test_hv_weights_monotone(l, data):
    k = data.draw(st.integers(0, l.size - 1))
    nadir = moo.update_nadir(l, 1.5)
    bump = data.draw(st.floats(1e-3, 0.9)) * (nadir.eta - l[k])
    raised = l.copy()
    raised[k] += bump
    assert moo.hv_weights(raised, nadir)[k] > moo.hv_weights(l, nadir)[k]


@given(loss_vectors(elements=positive), st.floats(1.01, 10))
def test_hv_weights_on_simplex(l, delta):
    assert moo.is_simplex(moo.hv_weights(l, moo.update_nadir(l, delta)))


def test_hv_loss_examples():
    assert moo.hv_loss([1.0, 1.0], moo.NadirState(2.0, 1.5)) == 0.0
    assert moo.hv_loss([0.0, 0.0], moo.NadirState(2.0, 1.5)) == pytest.approx(-2 * np.log(2), abs=1e-12)
    assert moo.hv_loss([0.0, 0.0], moo.NadirState(2.0, 1.5)) == pytest.approx(-1.3863, abs=1e-4)


def central_difference(f, x, k, h):
    up, down = x.copy(), x.copy()
    up[k] += h
    down[k] -= h
    return (f(up) - f(down)) / (2 * h)


def test_hv_loss_gradient_example():
    nadir = moo.NadirState(2.0, 1.5)
    fd = central_difference(lambda v: moo.hv_loss(v, nadir), np.array([1.0, 1.5]), 0, 1e-6)
    assert fd == pytest.approx(1.0, abs=1e-6)


def test_hv_loss_gradient_identity_random():
    rng = np.random.default_rng(21)
    for _ in range(100):
        l = rng.uniform(0.0, 3.0, size=int(rng.integers(1, 9)))
        nadir = moo.NadirState(l.max() + rng.uniform(0.05, 2.0), 1.5)
        for k in range(l.size):
            exact = 1.0 / (nadir.eta - l[k])
            fd = central_difference(lambda v: moo.hv_loss(v, nadir), l, k, 1e-5 * (nadir.eta - l[k]))
            assert abs(fd - exact) / exact < 1e-6


@pytest.mark.parametrize(
    "l, delta, eta",
    [((0.5, 0.2), 1.5, 0.75), ((1.0, 1.0, 1.0), 2.0, 2.0), ((0.693, 0.693), 1.05, 0.72765)],
)
def test_update_nadir_examples(l, delta, eta):
    state = moo.update_nadir(l, delta)
    assert state.eta == pytest.approx(eta, rel=1e-12)
    assert state.delta == delta


def test_update_nadir_errors_and_degenerate():
    for delta in (1.0, 0.5, -2.0):
        with pytest.raises(ValueError):
            moo.update_nadir([1.0], delta)
    state = moo.update_nadir([-1.0, -0.5], 1.5)
    assert state.eta == pytest.approx(-0.5 + moo.EPS_FLOOR)
    assert moo.is_simplex(moo.hv_weights([-1.0, -0.5], state))


@given(loss_vectors(elements=st.floats(-10, 10)), st.floats(1.0001, 10))
def test_update_nadir_exceeds_losses(l, delta):
    if l.max() > 0:
        assert np.all(moo.update_nadir(l, delta).eta > l)


# ---------------------------------------------------------------------------
# consolidation and residual
# ---------------------------------------------------------------------------


def test_consolidate_examples():
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    _, d = moo.consolidate(moo.AVG(), [0.3, 0.7], g)
    np.testing.assert_allclose(d, [0.5, 0.5])
    _, d = moo.consolidate(moo.MGD(), [0.3, 0.7], [[1.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_allclose(d, [0.0, 0.0], atol=1e-12)


def test_consolidate_gman_zero_equals_avg_on_random():
    rng = np.random.default_rng(31)
    for _ in range(50):
        k = int(rng.integers(1, 9))
        l, g = rng.uniform(0, 3, k), rng.standard_normal((k, 5))
        wa, da = moo.consolidate(moo.AVG(), l, g)
        wg, dg = moo.consolidate(moo.GMAN(0.0), l, g)
        np.testing.assert_array_equal(wa, wg)
        np.testing.assert_array_equal(da, dg)


def test_consolidate_hv_refreshes_nadir():
    l = np.array([0.5, 0.2])
    g = np.eye(2)
    w, d = moo.consolidate(moo.HV(1.5), l, g)
    expected = moo.hv_weights(l, moo.NadirState(0.75, 1.5))
    np.testing.assert_allclose(w, expected)
    np.testing.assert_allclose(d, expected)


def test_consolidate_shape_mismatch_and_bad_methods():
    with pytest.raises(DimensionError):
        moo.consolidate(moo.AVG(), [1.0, 2.0], np.eye(3))
    with pytest.raises(TypeError):
        moo.loss_weights(moo.MGD(), [1.0, 2.0])
    with pytest.raises(ValueError):
        moo.GMAN(-1.0)
    with pytest.raises(ValueError):
        moo.HV(1.0)


@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**32 - 1), st.sampled_from(["mgd", "avg", "gman", "hv"]))
@settings(max_examples=100, deadline=None)
def test_consolidate_returns_simplex(k, p, seed, name):
    rng = np.random.default_rng(seed)
    l, g = rng.uniform(0.01, 5, k), rng.standard_normal((k, p))
    method = {"mgd": moo.MGD(), "avg": moo.AVG(), "gman": moo.GMAN(2.0), "hv": moo.HV(1.5)}[name]
    w, d = moo.consolidate(method, l, g)
    assert moo.is_simplex(w)
    np.testing.assert_allclose(d, w @ g, atol=1e-12)


@pytest.mark.parametrize(
    "alpha, g, expected",
    [
        ((0.5, 0.5), [[1.0, 0.0], [-1.0, 0.0]], 0.0),
        ((1.0, 0.0), [[3.0, 4.0], [0.0, 0.0]], 5.0),
        ((1 / 3, 2 / 3), [[2.0, 0.0], [-1.0, 0.0]], 0.0),
    ],
)
def test_stationarity_residual_examples(alpha, g, expected):
    assert moo.stationarity_residual(alpha, g) == pytest.approx(expected, abs=1e-15)


def test_stationarity_residual_shape_mismatch():
    with pytest.raises(DimensionError):
        moo.stationarity_residual([0.5, 0.5], np.eye(3))


def test_is_simplex():
    assert moo.is_simplex([0.25, 0.75])
    assert not moo.is_simplex([0.5, 0.6])
    assert not moo.is_simplex([-0.1, 1.1])
    assert not moo.is_simplex([])


def test_nonfinite_losses_rejected():
    with pytest.raises(NumericError):
        moo.gman_weights([1.0, np.nan], 1.0)
    with pytest.raises(DimensionError):
        moo.gman_weights([], 1.0)
