"""Pure-numpy reference implementations of the hot kernels.

Every function here has a numba twin in ``_numba`` with identical
semantics; the dispatcher in ``__init__`` picks one at import time
(override with VIDMARK_BACKEND). Convolution inputs arrive pre-padded,
strides are (st, sh, sw), layouts are channel-first (B, C, T, H, W).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv3d_forward(xp: np.ndarray, w: np.ndarray, stride) -> np.ndarray:
    st, sh, sw = stride
    B, Ci, Tp, Hp, Wp = xp.shape
    Co, _, KT, KH, KW = w.shape
    To = (Tp - KT) // st + 1
    Ho = (Hp - KH) // sh + 1
    Wo = (Wp - KW) // sw + 1
    acc = np.zeros((Co, B, To, Ho, Wo), dtype=xp.dtype)
    for kt in range(KT):
        for kh in range(KH):
            for kw in range(KW):
                xs = xp[:, :, kt:kt + st * To:st, kh:kh + sh * Ho:sh, kw:kw + sw * Wo:sw]
                acc += np.tensordot(w[:, :, kt, kh, kw], xs, axes=(1, 1))
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3, 4))


def conv3d_backward_input(g: np.ndarray, w: np.ndarray, xp_shape, stride) -> np.ndarray:
    st, sh, sw = stride
    _, _, KT, KH, KW = w.shape
    B, Co, To, Ho, Wo = g.shape
    gxp = np.zeros(xp_shape, dtype=g.dtype)
    for kt in range(KT):
        for kh in range(KH):
            for kw in range(KW):
                contrib = np.tensordot(w[:, :, kt, kh, kw], g, axes=(0, 1))
                gxp[:, :, kt:kt + st * To:st, kh:kh + sh * Ho:sh, kw:kw + sw * Wo:sw] += (
                    contrib.transpose(1, 0, 2, 3, 4))
    return gxp


def conv3d_backward_weight(g: np.ndarray, xp: np.ndarray, w_shape, stride) -> np.ndarray:
    st, sh, sw = stride
    Co, Ci, KT, KH, KW = w_shape
    B, _, To, Ho, Wo = g.shape
    gw = np.empty(w_shape, dtype=g.dtype)
    for kt in range(KT):
        for kh in range(KH):
            for kw in range(KW):
                xs = xp[:, :, kt:kt + st * To:st, kh:kh + sh * Ho:sh, kw:kw + sw * Wo:sw]
                gw[:, :, kt, kh, kw] = np.tensordot(g, xs, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw


def resize3d_forward(x, t0, t1, ft, h0, h1, fh, w0, w1, fw) -> np.ndarray:
    # Gather the 8 trilinear corners via fancy indexing; weights from the
    # per-axis index tables computed in __init__.
    ft_ = ft[:, None, None]
    fh_ = fh[None, :, None]
    fw_ = fw[None, None, :]
    out = np.zeros(x.shape[:2] + (len(t0), len(h0), len(w0)), dtype=x.dtype)
    for ti, wt in ((t0, 1.0 - ft_), (t1, ft_)):
        for hi, wh in ((h0, 1.0 - fh_), (h1, fh_)):
            for wi, ww in ((w0, 1.0 - fw_), (w1, fw_)):
                out += (wt * wh * ww).astype(x.dtype) * x[
                    :, :, ti[:, None, None], hi[None, :, None], wi[None, None, :]]
    return out


def resize3d_backward(g, t0, t1, ft, h0, h1, fh, w0, w1, fw, in_shape) -> np.ndarray:
    gx = np.zeros(in_shape, dtype=g.dtype)
    ft_ = ft[:, None, None]
    fh_ = fh[None, :, None]
    fw_ = fw[None, None, :]
    for ti, wt in ((t0, 1.0 - ft_), (t1, ft_)):
        for hi, wh in ((h0, 1.0 - fh_), (h1, fh_)):
            for wi, ww in ((w0, 1.0 - fw_), (w1, fw_)):
                np.add.at(
                    gx,
                    (slice(None), slice(None), ti[:, None, None], hi[None, :, None],
                     wi[None, None, :]),
                    (wt * wh * ww).astype(g.dtype) * g)
    return gx


def warp_forward(x: np.ndarray, my: np.ndarray, mx: np.ndarray) -> np.ndarray:
    # Per-frame bilinear sampling at (my, mx); zero outside the frame.
    B, C, T, H, W = x.shape
    y0 = np.floor(my).astype(np.int64)
    x0 = np.floor(mx).astype(np.int64)
    fy = (my - y0).astype(x.dtype)
    fx = (mx - x0).astype(x.dtype)
    out = np.zeros_like(x)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            wgt = np.where(dy, fy, 1 - fy) * np.where(dx, fx, 1 - fx)
            wgt = (wgt * valid).astype(x.dtype)
            yc = np.clip(yy, 0, H - 1)
            xc = np.clip(xx, 0, W - 1)
            out += wgt * x[:, :, :, yc, xc]
    return out


def warp_backward(g: np.ndarray, my: np.ndarray, mx: np.ndarray) -> np.ndarray:
    B, C, T, H, W = g.shape
    y0 = np.floor(my).astype(np.int64)
    x0 = np.floor(mx).astype(np.int64)
    fy = (my - y0).astype(g.dtype)
    fx = (mx - x0).astype(g.dtype)
    gx = np.zeros_like(g)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            wgt = np.where(dy, fy, 1 - fy) * np.where(dx, fx, 1 - fx)
            wgt = (wgt * valid).astype(g.dtype)
            yc = np.clip(yy, 0, H - 1)
            xc = np.clip(xx, 0, W - 1)
            np.add.at(gx, (slice(None), slice(None), slice(None), yc, xc), wgt * g)
    return gx


def median_filter(x: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (r, r), (r, r)), mode="edge")
    win = sliding_window_view(xp, (k, k), axis=(3, 4))
    return np.median(win, axis=(-2, -1)).astype(x.dtype)
