import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fewshot_kd.linalg import (
    PROB_EPS,
    euclidean_distance,
    kl_divergence,
    pairwise_distances,
    singular_values,
    softmax_neg_dist,
    symmetric_kl,
)

mpmath.mp.dps = 40
finite = st.floats(-50, 50, allow_nan=False)


def mp_smooth(p):
    p = [mpmath.mpf(float(v)) for v in p]
    total = sum(p)
    p = [v / total for v in p]
    return [(v + mpmath.mpf(PROB_EPS)) / (1 + len(p) * mpmath.mpf(PROB_EPS)) for v in p]


def mp_kl(p, q):
    a, b = mp_smooth(p), mp_smooth(q)
    return sum(x * mpmath.log(x / y) for x, y in zip(a, b))


# --- distances ----------------------------------------------------------------


def test_distance_trivial_cases():
    assert euclidean_distance([0, 0], [0, 0]) < 1e-11
    assert euclidean_distance([3, 0], [0, 4]) == pytest.approx(5.0, abs=1e-15)


def test_distance_matches_high_precision_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.standard_normal(10), rng.standard_normal(10)
        oracle = mpmath.sqrt(sum((mpmath.mpf(x) - mpmath.mpf(y)) ** 2 for x, y in zip(a, b)) + mpmath.mpf(1e-24))
        assert abs(euclidean_distance(a, b) - float(oracle)) <= 1e-12


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        euclidean_distance([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        pairwise_distances(np.zeros((2, 3)), np.zeros((2, 4)))


@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite))
def test_distance_symmetric_and_floored(a, b):
    assert euclidean_distance(a, b) == euclidean_distance(b, a)
    assert euclidean_distance(a, b) >= 1e-12


def test_pairwise_matches_scalar_distance():
    rng = np.random.default_rng(1)
    x, c = rng.standard_normal((6, 5)), rng.standard_normal((3, 5))
    d = pairwise_distances(x, c)
    for i in range(6):
        for k in range(3):
            assert d[i, k] == pytest.approx(euclidean_distance(x[i], c[k]), rel=1e-14)


# --- softmax over negative distances -----------------------------------------


def test_softmax_uniform_cases():
    np.testing.assert_allclose(softmax_neg_dist([1, 1]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(softmax_neg_dist([3.7] * 5), [0.2] * 5, atol=1e-15)


def test_softmax_matches_oracle():
    e = mpmath.exp(-2)
    expected = [1 / (1 + e), e / (1 + e)]
    np.testing.assert_allclose(softmax_neg_dist([0, 2]), [float(v) for v in expected], atol=1e-12)
    np.testing.assert_allclose(softmax_neg_dist([0, 2]), [0.880797, 0.119203], atol=1e-6)


def test_softmax_errors():
    with pytest.raises(ValueError):
        softmax_neg_dist([])
    with pytest.raises(ValueError):
        softmax_neg_dist([1.0, np.nan])
    with pytest.raises(ValueError):
        softmax_neg_dist([1.0, 2.0], tau=0)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(0, 1e4)), st.floats(0.1, 10), st.floats(-100, 100))
@settings(max_examples=200)
def test_softmax_properties(d, tau, shift):
    p = softmax_neg_dist(d, tau)
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(p > 0) and np.all(p < 1) if len(d) > 1 else True
    np.testing.assert_allclose(softmax_neg_dist(d + shift, tau), p, atol=1e-12)


# --- KL divergences -----------------------------------------------------------


def test_kl_examples():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    # closed forms ignore the 1e-12 smoothing, which moves the value by ~1e-12
    assert kl_divergence([0.75, 0.25], [0.25, 0.75]) == pytest.approx(0.5 * np.log(3), abs=1e-9)
    assert kl_divergence([0.75, 0.25], [0.25, 0.75]) == pytest.approx(float(mp_kl([0.75, 0.25], [0.25, 0.75])), abs=1e-14)
    assert symmetric_kl([0.75, 0.25], [0.25, 0.75]) == pytest.approx(np.log(3), abs=1e-9)
    assert symmetric_kl([0.2, 0.8], [0.2, 0.8]) == 0.0


def test_kl_of_degenerate_distribution_is_finite():
    value = kl_divergence([1.0, 0.0], [0.5, 0.5])
    assert np.isfinite(value)
    assert value == pytest.approx(float(mp_kl([1.0, 0.0], [0.5, 0.5])), abs=1e-10)
    assert value == pytest.approx(np.log(2), abs=1e-9)


def test_kl_matches_arbitrary_precision_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(2, 10))
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        assert abs(kl_divergence(p, q) - float(mp_kl(p, q))) <= 1e-10
        assert abs(symmetric_kl(p, q) - float(mp_kl(p, q) + mp_kl(q, p))) <= 1e-10


def test_kl_length_mismatch():
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5], [1.0])


@given(st.integers(2, 8), st.integers(0, 10_000))
@settings(max_examples=100)
def test_kl_nonnegative_and_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    assert kl_divergence(p, q) >= 0
    assert abs(symmetric_kl(p, q) - symmetric_kl(q, p)) <= 1e-15


# --- singular values ----------------------------------------------------------


def test_identity_singular_values():
    np.testing.assert_allclose(singular_values(np.eye(3)), [1, 1, 1], atol=1e-15)


def test_rank_two_construction():
    rng = np.random.default_rng(3)
    m = np.outer(rng.standard_normal(30), rng.standard_normal(8)) + np.outer(rng.standard_normal(30), rng.standard_normal(8))
    sv = singular_values(m)
    assert np.all(sv[2:] < 1e-9 * sv[0])


def test_singular_values_match_arbitrary_precision_svd():
    rng = np.random.default_rng(4)
    for shape in [(20, 8), (8, 20), (12, 12)]:
        m = rng.standard_normal(shape)
        oracle = sorted((float(v) for v in mpmath.svd_r(mpmath.matrix(m.tolist()), compute_uv=False)), reverse=True)
        np.testing.assert_allclose(singular_values(m), oracle, rtol=1e-8)


@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 10_000))
@settings(max_examples=60)
def test_singular_value_properties(rows, cols, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((rows, cols))
    sv = singular_values(m)
    assert len(sv) == min(rows, cols)
    assert np.all(np.diff(sv) <= 0)
    frob = np.sum(m * m)
    assert abs(np.sum(sv**2) - frob) <= 1e-8 * frob
    np.testing.assert_allclose(singular_values(m[rng.permutation(rows)]), sv, rtol=1e-10, atol=1e-12)


def test_singular_values_reject_non_finite():
    with pytest.raises(ValueError):
        singular_values(np.array([[1.0, np.inf]]))
