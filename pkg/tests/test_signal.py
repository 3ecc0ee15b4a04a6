import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convsim.numerics import ShapeError
from convsim.signal import (
    PaddingError,
    PaddingSpec,
    auto_correlate_clipped,
    convolve,
    cross_correlate,
    cross_correlate_2d,
    feature_inner_product,
    identity_rhs,
    kernel_cross_correlation,
    orthogonality_gap,
    output_range,
    padded_decomposition,
    resolve_padding,
)


def test_padding_spec():
    assert resolve_padding("full", 4) == 3
    assert resolve_padding("valid", 4) == 0
    assert resolve_padding("same", 5) == 2
    assert resolve_padding(PaddingSpec.full(4), 4) == 3
    assert resolve_padding(2, 4) == 2
    with pytest.raises(PaddingError):
        resolve_padding("same", 4)
    with pytest.raises(PaddingError):
        resolve_padding(4, 4)
    with pytest.raises(PaddingError):
        resolve_padding(-1, 4)
    with pytest.raises(PaddingError):
        resolve_padding(PaddingSpec.full(3), 4)
    with pytest.raises(PaddingError):
        resolve_padding("circular", 3)


def test_cross_correlate_examples():
    a, b = 2.0, -5.0
    assert np.array_equal(cross_correlate([a, b], [1, 0], "full"), [0, a, b])
    assert np.array_equal(cross_correlate([1, 2, 3, 4], [1, 1], "valid"), [3, 5, 7])
    x = np.arange(5.0)
    assert np.array_equal(cross_correlate(x, [1.0], 0), x)


def test_convolve_examples(rng):
    assert np.array_equal(convolve([1, 2], [1, 0], "full"), [1, 2, 0])
    x = rng.normal(size=9)
    assert np.array_equal(convolve(x, [1.0], "full"), x)
    k = rng.normal(size=4)
    for p in range(4):
        assert np.allclose(convolve(x, k, p), cross_correlate(x, k[::-1], p))


def test_cross_correlate_matches_index_rule(rng):
    # (X ⊛ K)[i] = sum_n K[n] X[i+n-N+1] for i in [N-1-P, M-1+P]
    x, k = rng.normal(size=7), rng.normal(size=3)
    for p in range(3):
        out = cross_correlate(x, k, p)
        for j, i in enumerate(output_range(7, 3, p)):
            ref = sum(k[n] * (x[i + n - 2] if 0 <= i + n - 2 < 7 else 0.0) for n in range(3))
            assert out[j] == pytest.approx(ref, abs=1e-14)


@given(st.integers(1, 30), st.integers(1, 12), st.data())
@settings(max_examples=100, deadline=None)
def test_output_length_contract(m, n, data):
    p = data.draw(st.integers(0, n - 1))
    if m + 2 * p < n:
        with pytest.raises(PaddingError):
            cross_correlate(np.ones(m), np.ones(n), p)
        return
    out = cross_correlate(np.ones(m), np.ones(n), p)
    assert out.shape == (m + 2 * p - n + 1,)
    assert len(output_range(m, n, p)) == out.size


def test_autocorr_examples(rng):
    ac = auto_correlate_clipped([1, 1], 2)
    assert list(ac.lags) == [-1, 0, 1]
    assert np.array_equal(ac.values, [1, 2, 1])
    x = rng.normal(size=20)
    ac = auto_correlate_clipped(x, 6)
    assert ac.at(0) == pytest.approx(x @ x)
    assert np.allclose(ac.values, ac.values[::-1])
    for lag in ac.lags:
        ref = sum(x[i + lag] * x[i] for i in range(20) if 0 <= i + lag < 20)
        assert ac.at(lag) == pytest.approx(ref)
    with pytest.raises(ValueError):
        auto_correlate_clipped(x, 0)


def test_kernel_xcorr_lag_layout():
    # lags (-1, 0, 1)
    assert np.array_equal(kernel_cross_correlation([1, 0], [0, 1]), [0, 0, 1])
    assert np.array_equal(kernel_cross_correlation([1, 1], [1, -1]), [1, 0, -1])


def test_feature_inner_product_examples(rng):
    x, k = rng.normal(size=10), rng.normal(size=3)
    assert feature_inner_product(x, k, np.zeros(3)) == 0
    f = cross_correlate(x, k, "full")
    assert feature_inner_product(x, k, k) == pytest.approx(f @ f)
    with pytest.raises(ShapeError):
        feature_inner_product(x, k, np.ones(4))


def test_identity_hand_case():
    x, k1, k2 = [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]
    assert identity_rhs(x, k1, k2) == 1.0
    assert feature_inner_product(x, k1, k2, "full") == 1.0
    assert identity_rhs(np.zeros(5), [1.0, 2.0], [3.0, 4.0]) == 0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_identity_random(seed):
    r = np.random.default_rng(seed)
    m, n = int(r.integers(8, 65)), int(r.integers(1, 17))
    x, k1, k2 = r.uniform(-1, 1, m), r.uniform(-1, 1, n), r.uniform(-1, 1, n)
    lhs = feature_inner_product(x, k1, k2, "full")
    assert abs(lhs - identity_rhs(x, k1, k2)) <= 1e-10 * max(1.0, abs(lhs))
    conv = feature_inner_product(x, k1, k2, "full", mode="convolve")
    # reversing both kernels reverses their cross-correlation, and the autocorrelation is symmetric
    assert abs(conv - lhs) <= 1e-10 * max(1.0, abs(lhs))


def test_identity_batched(rng):
    x = rng.normal(size=(5, 20))
    k1, k2 = rng.normal(size=4), rng.normal(size=4)
    assert np.allclose(feature_inner_product(x, k1, k2), identity_rhs(x, k1, k2), rtol=1e-12)


@given(st.integers(0, 2**32 - 1), st.data())
@settings(max_examples=100, deadline=None)
def test_padded_decomposition(seed, data):
    r = np.random.default_rng(seed)
    m, n = int(r.integers(8, 33)), int(r.integers(1, 9))
    p = data.draw(st.integers(0, n - 1))
    x, k1, k2 = r.uniform(-1, 1, m), r.uniform(-1, 1, n), r.uniform(-1, 1, n)
    d = padded_decomposition(x, k1, k2, p)
    assert abs(d.residual) <= 1e-10 * max(1.0, abs(d.lhs))
    if p == n - 1:
        assert d.A == 0.0 and d.B == 0.0


def test_valid_padding_corrections_usually_small():
    r = np.random.default_rng(0)
    small = 0
    for _ in range(200):
        x, k1, k2 = r.uniform(-1, 1, 64), r.uniform(-1, 1, 3), r.uniform(-1, 1, 3)
        d = padded_decomposition(x, k1, k2, 0)
        small += abs(d.A) + abs(d.B) < 0.5 * abs(d.full_term)
    assert small > 100


def test_orthogonality_gap(rng):
    for _ in range(20):
        x, k1, k2 = rng.normal(size=30), rng.normal(size=5), rng.normal(size=5)
        lhs = feature_inner_product(x, k1, k2)
        assert lhs == pytest.approx((x @ x) * (k1 @ k2) + orthogonality_gap(x, k1, k2), rel=1e-10, abs=1e-10)
    x = rng.normal(size=30)
    k1, k2 = np.array([1.0, 1.0]), np.array([1.0, -1.0])
    assert k1 @ k2 == 0
    assert orthogonality_gap(x, k1, k2) != 0
    assert orthogonality_gap(x, k1, k2) == pytest.approx(feature_inner_product(x, k1, k2))
    impulse = np.zeros(10)
    impulse[0] = 1
    assert orthogonality_gap(impulse, k1, k2) == 0


def test_cross_correlate_2d(rng):
    a = rng.normal(size=(5, 6))
    assert np.array_equal(cross_correlate_2d(a, np.ones((1, 1)), 0), a)
    assert np.array_equal(cross_correlate_2d(np.ones((3, 3)), np.ones((3, 3)), "valid"), [[9.0]])
    u, v = rng.normal(size=3), rng.normal(size=2)
    for pad in ("full", "valid", (1, 0)):
        ph, pw = pad if isinstance(pad, tuple) else (pad, pad)
        rows = np.stack([cross_correlate(r, v, pw) for r in a])
        nested = np.stack([cross_correlate(c, u, ph) for c in rows.T]).T
        assert np.allclose(cross_correlate_2d(a, np.outer(u, v), pad), nested)
