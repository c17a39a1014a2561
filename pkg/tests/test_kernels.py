"""Compiled kernels against the numpy fallback and independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.interpolate import CubicSpline

from selfboost import _accel, kernels

BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    previous = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


def run_both(fn, *args):
    out = {}
    for b in BACKENDS:
        previous = _accel.set_backend(b)
        try:
            out[b] = fn(*args)
        finally:
            _accel.set_backend(previous)
    return out


def scan_extrema(x):
    """Brute-force scan: first index of a flat run strictly above/below both neighbours."""
    maxima, minima = [], []
    i = 1
    n = len(x)
    while i < n - 1:
        j = i
        while j + 1 < n and x[j + 1] == x[i]:
            j += 1
        if j < n - 1:
            if x[i - 1] < x[i] and x[j + 1] < x[i]:
                maxima.append(i)
            elif x[i - 1] > x[i] and x[j + 1] > x[i]:
                minima.append(i)
        i = j + 1
    return maxima, minima


def test_set_backend_validates():
    with pytest.raises(ValueError):
        _accel.set_backend("fortran")


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(0, 40), elements=st.integers(-3, 3).map(float)))
def test_extrema_match_scan(x):
    # small integer alphabet makes plateaus common
    expected = scan_extrema(x)
    for b, (imax, imin) in run_both(kernels.local_extrema, x).items():
        assert imax.tolist() == expected[0], b
        assert imin.tolist() == expected[1], b


@settings(max_examples=100, deadline=None)
@given(
    knots=st.lists(st.floats(-10, 10), min_size=2, max_size=12),
    gaps=st.lists(st.integers(1, 7), min_size=11, max_size=11),
    start=st.integers(-6, 0),
)
def test_spline_matches_scipy(knots, gaps, start):
    kx = start + np.concatenate([[0], np.cumsum(gaps[: len(knots) - 1])]).astype(float)
    ky = np.array(knots)
    n_out = int(max(1, kx[-1] + 3))
    t = np.arange(n_out, dtype=float)
    oracle = CubicSpline(kx, ky, bc_type="natural", extrapolate=True)(t)
    for b, got in run_both(kernels.natural_spline, kx, ky, n_out).items():
        scale = max(1.0, float(np.max(np.abs(oracle))))
        assert np.max(np.abs(got - oracle)) <= 1e-9 * scale, b


def test_spline_passes_through_knots(backend):
    kx = np.array([0.0, 3.0, 4.0, 9.0])
    ky = np.array([1.0, -2.0, 0.5, 3.0])
    out = kernels.natural_spline(kx, ky, 10)
    assert np.allclose(out[[0, 3, 4, 9]], ky, atol=1e-13)


def conv_oracle(x, w, b):
    B, L, C = x.shape
    F, K, _ = w.shape
    out = np.zeros((B, L - K + 1, F))
    for bi in range(B):
        for t in range(L - K + 1):
            for f in range(F):
                s = b[f]
                for k in range(K):
                    for c in range(C):
                        s += w[f, k, c] * x[bi, t + k, c]
                out[bi, t, f] = s
    return out


def test_conv_forward_and_backward_agree():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 9, 3))
    w = rng.standard_normal((5, 3, 3))
    b = rng.standard_normal(5)
    g = rng.standard_normal((4, 7, 5))
    oracle = conv_oracle(x, w, b)
    fwd = run_both(kernels.conv1d_forward, x, w, b)
    bwd = run_both(kernels.conv1d_backward, x, w, g)
    for name in BACKENDS:
        assert np.allclose(fwd[name], oracle, atol=1e-12)
    # backward is linear in g, so the loop and matmul versions must agree to rounding
    for a, c in zip(bwd["numpy"], bwd[BACKENDS[-1]]):
        assert np.allclose(a, c, atol=1e-12)
    # dw by direct summation
    dw = np.zeros_like(w)
    for f in range(5):
        for k in range(3):
            for c in range(3):
                dw[f, k, c] = np.sum(g[:, :, f] * x[:, k:k + 7, c])
    assert np.allclose(bwd["numpy"][1], dw, atol=1e-12)
    assert np.allclose(bwd["numpy"][2], g.sum(axis=(0, 1)), atol=1e-12)


def test_gru_backends_agree():
    rng = np.random.default_rng(4)
    H, I = 4, 3
    params = tuple(rng.standard_normal(s) * 0.5 for s in [(H, I)] * 3 + [(H, H)] * 3 + [(H,)] * 3)
    x = rng.standard_normal((2, 6, I))
    h0 = rng.standard_normal((2, H)) * 0.1
    g = rng.standard_normal((2, 6, H))

    def both(_):
        out, cache = kernels.gru_forward(x, h0, params)
        return out, kernels.gru_backward(cache, g)

    res = run_both(both, None)
    ref_out, (ref_dx, ref_dh0, ref_grads) = res["numpy"]
    for name in BACKENDS:
        out, (dx, dh0, grads) = res[name]
        assert np.allclose(out, ref_out, atol=1e-13)
        assert np.allclose(dx, ref_dx, atol=1e-13)
        assert np.allclose(dh0, ref_dh0, atol=1e-13)
        for a, c in zip(grads, ref_grads):
            assert np.allclose(a, c, atol=1e-13)


def test_sigmoid_is_stable():
    a = np.array([-1e4, -30.0, 0.0, 30.0, 1e4])
    s = kernels.sigmoid(a)
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5
    assert np.allclose(s[1:4], 1.0 / (1.0 + np.exp(-a[1:4])), rtol=1e-14)
