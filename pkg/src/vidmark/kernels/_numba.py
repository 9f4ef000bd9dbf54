"""Numba-compiled hot kernels.

Same contracts as ``_numpy``. All parallel loops assign disjoint output
slabs per thread (gather style, no atomics), so results are bitwise
reproducible run to run; the restricted fastmath flags permit fixed-tree
vectorized reductions without changing that.
"""
from __future__ import annotations

import warnings

import numpy as np

# harmless TBB version probe on some hosts; numba picks another layer
warnings.filterwarnings("ignore", message=".*TBB.*")

from numba import njit, prange  # noqa: E402

_FM = {"reassoc", "contract", "nsz"}


@njit(parallel=True, cache=True, fastmath=_FM)
def _conv3d_fwd(xp, w, out, st, sh, sw):
    B, Ci, Tp, Hp, Wp = xp.shape
    Co = w.shape[0]
    KT, KH, KW = w.shape[2], w.shape[3], w.shape[4]
    To, Ho, Wo = out.shape[2], out.shape[3], out.shape[4]
    for p in prange(B * Co):
        b = p // Co
        co = p % Co
        for t in range(To):
            for h in range(Ho):
                row = out[b, co, t, h]
                for i in range(Wo):
                    row[i] = 0.0
                for ci in range(Ci):
                    for kt in range(KT):
                        for kh in range(KH):
                            xrow = xp[b, ci, t * st + kt, h * sh + kh]
                            for kw in range(KW):
                                wv = w[co, ci, kt, kh, kw]
                                if sw == 1:
                                    for i in range(Wo):
                                        row[i] += wv * xrow[i + kw]
                                else:
                                    for i in range(Wo):
                                        row[i] += wv * xrow[i * sw + kw]


def conv3d_forward(xp, w, stride):
    st, sh, sw = stride
    B, Ci, Tp, Hp, Wp = xp.shape
    Co, _, KT, KH, KW = w.shape
    To = (Tp - KT) // st + 1
    Ho = (Hp - KH) // sh + 1
    Wo = (Wp - KW) // sw + 1
    out = np.empty((B, Co, To, Ho, Wo), dtype=xp.dtype)
    _conv3d_fwd(xp, w, out, st, sh, sw)
    return out


@njit(parallel=True, cache=True, fastmath=_FM)
def _conv3d_bwd_input(g, w, gxp, st, sh, sw):
    B, Co, To, Ho, Wo = g.shape
    Ci = w.shape[1]
    KT, KH, KW = w.shape[2], w.shape[3], w.shape[4]
    for p in prange(B * Ci):
        b = p // Ci
        ci = p % Ci
        slab = gxp[b, ci]
        for co in range(Co):
            for kt in range(KT):
                for kh in range(KH):
                    for kw in range(KW):
                        wv = w[co, ci, kt, kh, kw]
                        for to in range(To):
                            ti = to * st + kt
                            for ho in range(Ho):
                                grow = g[b, co, to, ho]
                                xrow = slab[ti, ho * sh + kh]
                                if sw == 1:
                                    for wo in range(Wo):
                                        xrow[wo + kw] += wv * grow[wo]
                                else:
                                    for wo in range(Wo):
                                        xrow[wo * sw + kw] += wv * grow[wo]


def conv3d_backward_input(g, w, xp_shape, stride):
    gxp = np.zeros(xp_shape, dtype=g.dtype)
    _conv3d_bwd_input(g, w, gxp, *stride)
    return gxp


@njit(parallel=True, cache=True, fastmath=_FM)
def _conv3d_bwd_weight(g, xp, gw, st, sh, sw):
    B, Co, To, Ho, Wo = g.shape
    Ci = gw.shape[1]
    KT, KH, KW = gw.shape[2], gw.shape[3], gw.shape[4]
    for co in prange(Co):
        acc = np.zeros((Ci, KT, KH, KW), dtype=g.dtype)
        for b in range(B):
            for to in range(To):
                for ho in range(Ho):
                    grow = g[b, co, to, ho]
                    for ci in range(Ci):
                        for kt in range(KT):
                            plane = xp[b, ci, to * st + kt]
                            for kh in range(KH):
                                xrow = plane[ho * sh + kh]
                                for kw in range(KW):
                                    s = 0.0
                                    if sw == 1:
                                        for wo in range(Wo):
                                            s += grow[wo] * xrow[wo + kw]
                                    else:
                                        for wo in range(Wo):
                                            s += grow[wo] * xrow[wo * sw + kw]
                                    acc[ci, kt, kh, kw] += s
        gw[co] = acc


def conv3d_backward_weight(g, xp, w_shape, stride):
    gw = np.empty(w_shape, dtype=g.dtype)
    _conv3d_bwd_weight(g, xp, gw, *stride)
    return gw


@njit(parallel=True, cache=True, fastmath=_FM)
def _resize3d_fwd(x, t0, t1, ft, h0, h1, fh, w0, w1, fw, out):
    B, C = x.shape[0], x.shape[1]
    To, Ho, Wo = out.shape[2], out.shape[3], out.shape[4]
    for p in prange(B * C):
        b = p // C
        c = p % C
        for t in range(To):
            a0, a1, fa = t0[t], t1[t], ft[t]
            for h in range(Ho):
                b0, b1, fb = h0[h], h1[h], fh[h]
                for wi in range(Wo):
                    c0, c1, fc = w0[wi], w1[wi], fw[wi]
                    v00 = x[b, c, a0, b0, c0] * (1 - fc) + x[b, c, a0, b0, c1] * fc
                    v01 = x[b, c, a0, b1, c0] * (1 - fc) + x[b, c, a0, b1, c1] * fc
                    v10 = x[b, c, a1, b0, c0] * (1 - fc) + x[b, c, a1, b0, c1] * fc
                    v11 = x[b, c, a1, b1, c0] * (1 - fc) + x[b, c, a1, b1, c1] * fc
                    v0 = v00 * (1 - fb) + v01 * fb
                    v1 = v10 * (1 - fb) + v11 * fb
                    out[b, c, t, h, wi] = v0 * (1 - fa) + v1 * fa


def resize3d_forward(x, t0, t1, ft, h0, h1, fh, w0, w1, fw):
    out = np.empty(x.shape[:2] + (len(t0), len(h0), len(w0)), dtype=x.dtype)
    _resize3d_fwd(x, t0, t1, ft.astype(x.dtype), h0, h1, fh.astype(x.dtype),
                  w0, w1, fw.astype(x.dtype), out)
    return out


@njit(cache=True)
def _resize3d_bwd(g, t0, t1, ft, h0, h1, fh, w0, w1, fw, gx):
    B, C = g.shape[0], g.shape[1]
    To, Ho, Wo = g.shape[2], g.shape[3], g.shape[4]
    for b in range(B):
        for c in range(C):
            for t in range(To):
                a0, a1, fa = t0[t], t1[t], ft[t]
                for h in range(Ho):
                    b0, b1, fb = h0[h], h1[h], fh[h]
                    for wi in range(Wo):
                        c0, c1, fc = w0[wi], w1[wi], fw[wi]
                        gv = g[b, c, t, h, wi]
                        gx[b, c, a0, b0, c0] += gv * (1 - fa) * (1 - fb) * (1 - fc)
                        gx[b, c, a0, b0, c1] += gv * (1 - fa) * (1 - fb) * fc
                        gx[b, c, a0, b1, c0] += gv * (1 - fa) * fb * (1 - fc)
                        gx[b, c, a0, b1, c1] += gv * (1 - fa) * fb * fc
                        gx[b, c, a1, b0, c0] += gv * fa * (1 - fb) * (1 - fc)
                        gx[b, c, a1, b0, c1] += gv * fa * (1 - fb) * fc
                        gx[b, c, a1, b1, c0] += gv * fa * fb * (1 - fc)
                        gx[b, c, a1, b1, c1] += gv * fa * fb * fc


def resize3d_backward(g, t0, t1, ft, h0, h1, fh, w0, w1, fw, in_shape):
    gx = np.zeros(in_shape, dtype=g.dtype)
    _resize3d_bwd(g, t0, t1, ft.astype(g.dtype), h0, h1, fh.astype(g.dtype),
                  w0, w1, fw.astype(g.dtype), gx)
    return gx


@njit(parallel=True, cache=True, fastmath=_FM)
def _warp_fwd(x, my, mx, out):
    B, C, T, H, W = x.shape
    for p in prange(B * C * T):
        b = p // (C * T)
        rem = p % (C * T)
        c = rem // T
        t = rem % T
        for i in range(my.shape[0]):
            for j in range(my.shape[1]):
                sy = my[i, j]
                sx = mx[i, j]
                y0 = int(np.floor(sy))
                x0 = int(np.floor(sx))
                fy = sy - y0
                fx = sx - x0
                acc = 0.0
                for dy in range(2):
                    yy = y0 + dy
                    if yy < 0 or yy >= H:
                        continue
                    wy = fy if dy == 1 else 1.0 - fy
                    for dx in range(2):
                        xx = x0 + dx
                        if xx < 0 or xx >= W:
                            continue
                        wx = fx if dx == 1 else 1.0 - fx
                        acc += wy * wx * x[b, c, t, yy, xx]
                out[b, c, t, i, j] = acc


def warp_forward(x, my, mx):
    out = np.empty(x.shape[:3] + my.shape, dtype=x.dtype)
    _warp_fwd(x, my.astype(x.dtype), mx.astype(x.dtype), out)
    return out


@njit(cache=True)
def _warp_bwd(g, my, mx, gx):
    B, C, T, H, W = gx.shape
    for b in range(B):
        for c in range(C):
            for t in range(T):
                for i in range(my.shape[0]):
                    for j in range(my.shape[1]):
                        sy = my[i, j]
                        sx = mx[i, j]
                        y0 = int(np.floor(sy))
                        x0 = int(np.floor(sx))
                        fy = sy - y0
                        fx = sx - x0
                        gv = g[b, c, t, i, j]
                        for dy in range(2):
                            yy = y0 + dy
                            if yy < 0 or yy >= H:
                                continue
                            wy = fy if dy == 1 else 1.0 - fy
                            for dx in range(2):
                                xx = x0 + dx
                                if xx < 0 or xx >= W:
                                    continue
                                wx = fx if dx == 1 else 1.0 - fx
                                gx[b, c, t, yy, xx] += wy * wx * gv


def warp_backward(g, my, mx):
    gx = np.zeros_like(g)
    _warp_bwd(g, my.astype(g.dtype), mx.astype(g.dtype), gx)
    return gx


@njit(parallel=True, cache=True, fastmath=_FM)
def _median(x, k, out):
    B, C, T, H, W = x.shape
    r = k // 2
    n = k * k
    for p in prange(B * C * T):
        b = p // (C * T)
        rem = p % (C * T)
        c = rem // T
        t = rem % T
        buf = np.empty(n, dtype=x.dtype)
        for i in range(H):
            for j in range(W):
                idx = 0
                for di in range(-r, r + 1):
                    ii = min(max(i + di, 0), H - 1)
                    for dj in range(-r, r + 1):
                        jj = min(max(j + dj, 0), W - 1)
                        buf[idx] = x[b, c, t, ii, jj]
                        idx += 1
                # insertion sort; windows are tiny (k <= 5)
                for a in range(1, n):
                    key = buf[a]
                    m = a - 1
                    while m >= 0 and buf[m] > key:
                        buf[m + 1] = buf[m]
                        m -= 1
                    buf[m + 1] = key
                out[b, c, t, i, j] = buf[n // 2]


def median_filter(x, k):
    out = np.empty_like(x)
    _median(x, k, out)
    return out
