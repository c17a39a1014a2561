"""Hot numeric kernels with a numba path and a pure-numpy path.

Each public function dispatches on :func:`selfboost._accel.use_numba`. The two
paths compute the same quantities; they may differ in the last few ulps
where summation order differs, but each path is deterministic on its own.
"""

import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# Extrema


def _extrema_loop(x):
    n = x.shape[0]
    maxima = np.empty(n, dtype=np.int64)
    minima = np.empty(n, dtype=np.int64)
    n_max = 0
    n_min = 0
    for i in range(1, n - 1):
        if x[i] > x[i - 1]:
            j = i
            while j + 1 < n and x[j + 1] == x[i]:
                j += 1
            if j + 1 < n and x[j + 1] < x[i]:
                maxima[n_max] = i
                n_max += 1
        elif x[i] < x[i - 1]:
            j = i
            while j + 1 < n and x[j + 1] == x[i]:
                j += 1
            if j + 1 < n and x[j + 1] > x[i]:
                minima[n_min] = i
                n_min += 1
    return maxima[:n_max].copy(), minima[:n_min].copy()


_extrema_numba = njit(_extrema_loop)


def _extrema_numpy(x):
    d = np.diff(x)
    nz = np.flatnonzero(d)
    if nz.size < 2:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy()
    s = np.sign(d[nz])
    # a rise followed (after any flat run) by a fall marks a maximum at the
    # first sample of the run
    rise_fall = (s[:-1] > 0) & (s[1:] < 0)
    fall_rise = (s[:-1] < 0) & (s[1:] > 0)
    maxima = (nz[:-1][rise_fall] + 1).astype(np.int64)
    minima = (nz[:-1][fall_rise] + 1).astype(np.int64)
    return maxima, minima


def local_extrema(x):
    """Indices of interior maxima and minima of a 1-D float64 array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy()
    if _accel.use_numba():
        return _extrema_numba(x)
    return _extrema_numpy(x)


# ---------------------------------------------------------------------------
# Natural cubic spline


def _spline_second_derivatives(kx, ky):
    m = kx.shape[0]
    M = np.zeros(m)
    if m < 3:
        return M
    n = m - 2
    sub = np.empty(n)
    diag = np.empty(n)
    sup = np.empty(n)
    rhs = np.empty(n)
    for i in range(1, m - 1):
        h0 = kx[i] - kx[i - 1]
        h1 = kx[i + 1] - kx[i]
        sub[i - 1] = h0
        diag[i - 1] = 2.0 * (h0 + h1)
        sup[i - 1] = h1
        rhs[i - 1] = 6.0 * ((ky[i + 1] - ky[i]) / h1 - (ky[i] - ky[i - 1]) / h0)
    # Thomas algorithm; the system is strictly diagonally dominant
    for i in range(1, n):
        w = sub[i] / diag[i - 1]
        diag[i] -= w * sup[i - 1]
        rhs[i] -= w * rhs[i - 1]
    M[n] = rhs[n - 1] / diag[n - 1]
    for i in range(n - 2, -1, -1):
        M[i + 1] = (rhs[i] - sup[i] * M[i + 2]) / diag[i]
    return M


def _spline_eval_loop(kx, ky, M, n_out):
    m = kx.shape[0]
    out = np.empty(n_out)
    seg = 0
    for t in range(n_out):
        tt = float(t)
        while seg < m - 2 and tt > kx[seg + 1]:
            seg += 1
        x0 = kx[seg]
        x1 = kx[seg + 1]
        h = x1 - x0
        a = x1 - tt
        b = tt - x0
        out[t] = (M[seg] * a * a * a + M[seg + 1] * b * b * b) / (6.0 * h) + (
            ky[seg] / h - M[seg] * h / 6.0
        ) * a + (ky[seg + 1] / h - M[seg + 1] * h / 6.0) * b
    return out


def _spline_numba_impl(kx, ky, n_out):
    M = _spline_second_derivatives_nb(kx, ky)
    return _spline_eval_nb(kx, ky, M, n_out)


_spline_second_derivatives_nb = njit(_spline_second_derivatives)
_spline_eval_nb = njit(_spline_eval_loop)
_spline_numba = njit(_spline_numba_impl)


def _spline_numpy(kx, ky, n_out):
    M = _spline_second_derivatives(kx, ky)
    t = np.arange(n_out, dtype=np.float64)
    seg = np.clip(np.searchsorted(kx, t, side="left") - 1, 0, kx.shape[0] - 2)
    x0 = kx[seg]
    x1 = kx[seg + 1]
    h = x1 - x0
    a = x1 - t
    b = t - x0
    return (M[seg] * a * a * a + M[seg + 1] * b * b * b) / (6.0 * h) + (
        ky[seg] / h - M[seg] * h / 6.0
    ) * a + (ky[seg + 1] / h - M[seg + 1] * h / 6.0) * b


def natural_spline(knot_x, knot_y, n_out):
    """Evaluate the natural cubic spline through the knots at 0..n_out-1.

    ``knot_x`` must be strictly increasing with at least two entries. Points
    outside the knot span are evaluated on the nearest end segment.
    """
    kx = np.ascontiguousarray(knot_x, dtype=np.float64)
    ky = np.ascontiguousarray(knot_y, dtype=np.float64)
    if _accel.use_numba():
        return _spline_numba(kx, ky, int(n_out))
    return _spline_numpy(kx, ky, int(n_out))


# ---------------------------------------------------------------------------
# 1-D convolution (valid padding, stride 1)
#   x: [B, L, C]  w: [F, K, C]  b: [F]  ->  pre-activation [B, L-K+1, F]


def _conv_fwd_loop(x, w, b):
    B, L, C = x.shape
    F, K, _ = w.shape
    Lo = L - K + 1
    out = np.empty((B, Lo, F))
    for bi in range(B):
        for t in range(Lo):
            for f in range(F):
                acc = b[f]
                for k in range(K):
                    for c in range(C):
                        acc += w[f, k, c] * x[bi, t + k, c]
                out[bi, t, f] = acc
    return out


def _conv_bwd_loop(x, w, g):
    B, L, C = x.shape
    F, K, _ = w.shape
    Lo = g.shape[1]
    dx = np.zeros((B, L, C))
    dw = np.zeros((F, K, C))
    db = np.zeros(F)
    for bi in range(B):
        for t in range(Lo):
            for f in range(F):
                gv = g[bi, t, f]
                if gv == 0.0:
                    continue
                db[f] += gv
                for k in range(K):
                    for c in range(C):
                        dw[f, k, c] += gv * x[bi, t + k, c]
                        dx[bi, t + k, c] += gv * w[f, k, c]
    return dx, dw, db


_conv_fwd_numba = njit(_conv_fwd_loop)
_conv_bwd_numba = njit(_conv_bwd_loop)


def _windows(x, K):
    # [B, Lo, K, C] view, flattened to [B*Lo, K*C]
    B, L, C = x.shape
    Lo = L - K + 1
    win = np.lib.stride_tricks.sliding_window_view(x, K, axis=1)  # [B, Lo, C, K]
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * Lo, K * C)


def _conv_fwd_numpy(x, w, b):
    B, L, C = x.shape
    F, K, _ = w.shape
    Lo = L - K + 1
    out = _windows(x, K) @ w.reshape(F, K * C).T + b
    return out.reshape(B, Lo, F)


def _conv_bwd_numpy(x, w, g):
    B, L, C = x.shape
    F, K, _ = w.shape
    Lo = g.shape[1]
    g2 = g.reshape(B * Lo, F)
    dw = (g2.T @ _windows(x, K)).reshape(F, K, C)
    db = g2.sum(axis=0)
    dx = np.zeros((B, L, C))
    for k in range(K):
        dx[:, k:k + Lo, :] += g @ w[:, k, :]
    return dx, dw, db


def conv1d_forward(x, w, b):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _accel.use_numba():
        return _conv_fwd_numba(x, np.ascontiguousarray(w), np.ascontiguousarray(b))
    return _conv_fwd_numpy(x, w, b)


def conv1d_backward(x, w, grad_pre):
    """Gradients (dx, dw, db) of the pre-activation conv output."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    g = np.ascontiguousarray(grad_pre, dtype=np.float64)
    if _accel.use_numba():
        return _conv_bwd_numba(x, np.ascontiguousarray(w), g)
    return _conv_bwd_numpy(x, w, g)


# ---------------------------------------------------------------------------
# GRU over a sequence, time-major inside the kernels.
#   z = sig(Wz x + Uz h + bz); r = sig(Wr x + Ur h + br)
#   c = tanh(W x + U (r*h) + bh); h' = (1 - z) h + z c


def _gru_fwd(xs, h0, Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh):
    T = xs.shape[0]
    B = xs.shape[1]
    H = h0.shape[1]
    hs = np.empty((T + 1, B, H))
    zs = np.empty((T, B, H))
    rs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    hs[0] = h0
    WzT = np.ascontiguousarray(Wz.T)
    WrT = np.ascontiguousarray(Wr.T)
    WhT = np.ascontiguousarray(Wh.T)
    UzT = np.ascontiguousarray(Uz.T)
    UrT = np.ascontiguousarray(Ur.T)
    UhT = np.ascontiguousarray(Uh.T)
    for t in range(T):
        x = xs[t]
        hp = hs[t]
        z = 0.5 * (1.0 + np.tanh(0.5 * (np.dot(x, WzT) + np.dot(hp, UzT) + bz)))
        r = 0.5 * (1.0 + np.tanh(0.5 * (np.dot(x, WrT) + np.dot(hp, UrT) + br)))
        c = np.tanh(np.dot(x, WhT) + np.dot(r * hp, UhT) + bh)
        zs[t] = z
        rs[t] = r
        cs[t] = c
        hs[t + 1] = (1.0 - z) * hp + z * c
    return hs, zs, rs, cs


def _gru_bwd(xs, hs, zs, rs, cs, dH, Wz, Wr, Wh, Uz, Ur, Uh):
    T = xs.shape[0]
    B = xs.shape[1]
    I = xs.shape[2]
    H = hs.shape[2]
    dxs = np.empty((T, B, I))
    dWz = np.zeros((H, I))
    dWr = np.zeros((H, I))
    dWh = np.zeros((H, I))
    dUz = np.zeros((H, H))
    dUr = np.zeros((H, H))
    dUh = np.zeros((H, H))
    dbz = np.zeros(H)
    dbr = np.zeros(H)
    dbh = np.zeros(H)
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        x = xs[t]
        hp = hs[t]
        z = zs[t]
        r = rs[t]
        c = cs[t]
        dh = dH[t] + dh_next
        dc = dh * z
        dz = dh * (c - hp)
        dhp = dh * (1.0 - z)
        da_h = dc * (1.0 - c * c)
        rh = r * hp
        dWh += np.dot(da_h.T, x)
        dUh += np.dot(da_h.T, rh)
        dbh += da_h.sum(axis=0)
        drh = np.dot(da_h, Uh)
        dr = drh * hp
        dhp += drh * r
        da_z = dz * z * (1.0 - z)
        dWz += np.dot(da_z.T, x)
        dUz += np.dot(da_z.T, hp)
        dbz += da_z.sum(axis=0)
        dhp += np.dot(da_z, Uz)
        da_r = dr * r * (1.0 - r)
        dWr += np.dot(da_r.T, x)
        dUr += np.dot(da_r.T, hp)
        dbr += da_r.sum(axis=0)
        dhp += np.dot(da_r, Ur)
        dxs[t] = np.dot(da_z, Wz) + np.dot(da_r, Wr) + np.dot(da_h, Wh)
        dh_next = dhp
    return dxs, dh_next, dWz, dWr, dWh, dUz, dUr, dUh, dbz, dbr, dbh


_gru_fwd_py = _gru_fwd
_gru_bwd_py = _gru_bwd
_gru_fwd_numba = njit(_gru_fwd)
_gru_bwd_numba = njit(_gru_bwd)


def sigmoid(a):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def gru_forward(x, h0, params):
    """Run a GRU over ``x`` [B, T, I] from ``h0`` [B, H].

    ``params`` is (Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh). Returns the hidden
    sequence [B, T, H] and a cache for :func:`gru_backward`.
    """
    xs = np.ascontiguousarray(np.transpose(x, (1, 0, 2)), dtype=np.float64)
    h0 = np.ascontiguousarray(h0, dtype=np.float64)
    ps = tuple(np.ascontiguousarray(p) for p in params)
    fwd = _gru_fwd_numba if _accel.use_numba() else _gru_fwd_py
    hs, zs, rs, cs = fwd(xs, h0, *ps)
    out = np.ascontiguousarray(np.transpose(hs[1:], (1, 0, 2)))
    return out, (xs, hs, zs, rs, cs, ps)


def gru_backward(cache, grad_out):
    """Return (dx [B, T, I], dh0 [B, H], param grads in ``params`` order)."""
    xs, hs, zs, rs, cs, ps = cache
    dH = np.ascontiguousarray(np.transpose(grad_out, (1, 0, 2)), dtype=np.float64)
    bwd = _gru_bwd_numba if _accel.use_numba() else _gru_bwd_py
    dxs, dh0, *grads = bwd(xs, hs, zs, rs, cs, dH, *ps[:6])
    return np.transpose(dxs, (1, 0, 2)), dh0, tuple(grads)
