"""Compiled kernels: 4-D multilinear table lookup, im2col and separable filters.

Grid layout is C-order ``(v, i, g, s)`` so the s axis is fastest.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True, inline="always")
def _axis(x, inv_t, gmax):
    a = min(max(x * inv_t, 0.0), float(gmax))
    k = min(int(a), gmax - 1)  # a >= 0, so int() is floor
    return k, a - k


@nb.njit(cache=True, nogil=True, boundscheck=False)
def lookup_kernel(grid, v, i, g, s, inv_t, out):
    # nested 1-D interpolation (s, then g, i, v): same value as the
    # 16-corner weighted sum, fewer multiplies, exact at grid nodes
    n_pts = grid.shape[0]
    gmax = n_pts - 1
    flat = grid.ravel()
    s0 = n_pts * n_pts * n_pts
    s1 = n_pts * n_pts
    s2 = n_pts
    for p in range(v.shape[0]):
        k, fv = _axis(v[p], inv_t, gmax)
        l, fi = _axis(i[p], inv_t, gmax)
        m, fg = _axis(g[p], inv_t, gmax)
        n, fs = _axis(s[p], inv_t, gmax)
        b = k * s0 + l * s1 + m * s2 + n
        acc_v = 0.0
        for h in range(2):
            acc_i = 0.0
            for q in range(2):
                c = b + h * s0 + q * s1
                e0 = (1.0 - fs) * flat[c] + fs * flat[c + 1]
                e1 = (1.0 - fs) * flat[c + s2] + fs * flat[c + s2 + 1]
                e = (1.0 - fg) * e0 + fg * e1
                acc_i += (fi if q else 1.0 - fi) * e
            acc_v += (fv if h else 1.0 - fv) * acc_i
        out[p] = acc_v


@nb.njit(cache=True, nogil=True)
def lookup_backward_kernel(grid, v, i, g, s, inv_t, upstream, grad_grid, d_coord):
    """Accumulate entry gradients into ``grad_grid`` (serial, fixed order)
    and write d(output)/d(s coordinate) per pixel into ``d_coord``."""
    n_pts = grid.shape[0]
    gmax = n_pts - 1
    flat = grid.ravel()
    gflat = grad_grid.ravel()
    s0 = n_pts * n_pts * n_pts
    s1 = n_pts * n_pts
    s2 = n_pts
    for p in range(v.shape[0]):
        k, fv = _axis(v[p], inv_t, gmax)
        l, fi = _axis(i[p], inv_t, gmax)
        m, fg = _axis(g[p], inv_t, gmax)
        n, fs = _axis(s[p], inv_t, gmax)
        base = k * s0 + l * s1 + m * s2 + n
        u = upstream[p]
        dd = 0.0
        for h in range(2):
            wv = fv if h else 1.0 - fv
            for q in range(2):
                wi = fi if q else 1.0 - fi
                wvi = wv * wi
                for r in range(2):
                    wg = fg if r else 1.0 - fg
                    wvig = wvi * wg
                    idx = base + h * s0 + q * s1 + r * s2
                    gflat[idx] += u * wvig * (1.0 - fs)
                    gflat[idx + 1] += u * wvig * fs
                    dd += wvig * (flat[idx + 1] - flat[idx])
        d_coord[p] = u * dd


# -- 3x3 same-padding convolution as im2col + matrix product ---------------
# column order of a patch row is (ky, kx, channel)


@nb.njit(cache=True, nogil=True)
def im2col3x3(x, cols):
    n, h, w, c = x.shape
    for a in range(n):
        for y in range(h):
            for xx in range(w):
                r = (a * h + y) * w + xx
                for i in range(3):
                    yy = y + i - 1
                    for j in range(3):
                        xj = xx + j - 1
                        base = (i * 3 + j) * c
                        if yy < 0 or yy >= h or xj < 0 or xj >= w:
                            for ci in range(c):
                                cols[r, base + ci] = 0.0
                        else:
                            for ci in range(c):
                                cols[r, base + ci] = x[a, yy, xj, ci]


@nb.njit(cache=True, nogil=True)
def col2im3x3(dcols, dx):
    """Adjoint of :func:`im2col3x3`: scatter-add patch rows back into ``dx``."""
    n, h, w, c = dx.shape
    for a in range(n):
        for y in range(h):
            for xx in range(w):
                r = (a * h + y) * w + xx
                for i in range(3):
                    yy = y + i - 1
                    if yy < 0 or yy >= h:
                        continue
                    for j in range(3):
                        xj = xx + j - 1
                        if xj < 0 or xj >= w:
                            continue
                        base = (i * 3 + j) * c
                        for ci in range(c):
                            dx[a, yy, xj, ci] += dcols[r, base + ci]


# -- separable 'valid' correlation over the last two axes --------------------


@nb.njit(cache=True, nogil=True)
def sep_valid(x, k, out):
    n, hh, ww = x.shape
    m = k.shape[0]
    ho, wo = hh - m + 1, ww - m + 1
    tmp = np.empty((hh, wo))
    for a in range(n):
        for i in range(hh):
            for j in range(wo):
                tmp[i, j] = 0.0
            for t in range(m):
                kt = k[t]
                for j in range(wo):
                    tmp[i, j] += kt * x[a, i, j + t]
        for i in range(ho):
            for j in range(wo):
                out[a, i, j] = 0.0
            for t in range(m):
                kt = k[t]
                for j in range(wo):
                    out[a, i, j] += kt * tmp[i + t, j]


# -- table regularizers -------------------------------------------------------


@nb.njit(cache=True, nogil=True)
def grid_regularizers(flat, dims, tol, g_tv, g_m):
    """Sum of squared forward differences and of decreases over every axis of a
    C-ordered array; accumulates both gradients and returns (tv, mono, violations)."""
    tv = 0.0
    mono = 0.0
    viol = 0
    stride = flat.shape[0]
    for ax in range(dims.shape[0]):
        n_ax = dims[ax]
        stride //= n_ax
        outer = flat.shape[0] // (n_ax * stride)
        for o in range(outer):
            for k in range(n_ax - 1):
                base = (o * n_ax + k) * stride
                for j in range(stride):
                    p = base + j
                    q = p + stride
                    d = flat[q] - flat[p]
                    tv += d * d
                    g_tv[q] += 2.0 * d
                    g_tv[p] -= 2.0 * d
                    if d < 0.0:
                        mono -= d
                        g_m[p] += 1.0
                        g_m[q] -= 1.0
                        if -d > tol:
                            viol += 1
    return tv, mono, viol
