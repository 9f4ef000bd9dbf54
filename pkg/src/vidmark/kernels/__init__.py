"""Backend dispatch for the numeric hot kernels.

Two interchangeable implementations exist: ``_numba`` (JIT-compiled,
default when numba imports cleanly) and ``_numpy`` (pure numpy). Select
one with the VIDMARK_BACKEND environment variable (``auto`` | ``numba``
| ``numpy``) or at runtime via :func:`set_backend`. ``vidmark bench``
reports throughput for both.
"""
from __future__ import annotations

import os

import numpy as np

_FUNCTIONS = (
    "conv3d_forward",
    "conv3d_backward_input",
    "conv3d_backward_weight",
    "resize3d_forward",
    "resize3d_backward",
    "warp_forward",
    "warp_backward",
    "median_filter",
)

_impl = None
_name = "unset"


def available_backends() -> tuple[str, ...]:
    try:
        import numba  # noqa: F401
        return ("numba", "numpy")
    except ImportError:
        return ("numpy",)


def set_backend(name: str) -> str:
    """Switch kernel implementations. Returns the active backend name."""
    global _impl, _name
    if name == "auto":
        name = "numba" if "numba" in available_backends() else "numpy"
    if name == "numba":
        from . import _numba as impl
    elif name == "numpy":
        from . import _numpy as impl
    else:
        raise ValueError(f"unknown kernel backend: {name!r}")
    _impl = impl
    _name = name
    return _name


def active_backend() -> str:
    return _name


set_backend(os.environ.get("VIDMARK_BACKEND", "auto"))


def conv3d_forward(xp, w, stride):
    return _impl.conv3d_forward(xp, w, stride)


def conv3d_backward_input(g, w, xp_shape, stride):
    return _impl.conv3d_backward_input(g, w, xp_shape, stride)


def conv3d_backward_weight(g, xp, w_shape, stride):
    return _impl.conv3d_backward_weight(g, xp, w_shape, stride)


def linear_axis_tables(n_in: int, n_out: int):
    """Half-pixel (align_corners=False) source indices and fractions."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    return lo, hi, frac


def resize3d_forward(x, out_sizes, tables=None):
    if tables is None:
        tables = resize_tables(x.shape[2:], out_sizes)
    return _impl.resize3d_forward(x, *tables)


def resize3d_backward(g, in_shape, tables):
    return _impl.resize3d_backward(g, *tables, in_shape)


def resize_tables(in_sizes, out_sizes):
    t0, t1, ft = linear_axis_tables(in_sizes[0], out_sizes[0])
    h0, h1, fh = linear_axis_tables(in_sizes[1], out_sizes[1])
    w0, w1, fw = linear_axis_tables(in_sizes[2], out_sizes[2])
    return (t0, t1, ft, h0, h1, fh, w0, w1, fw)


def warp_forward(x, my, mx):
    return _impl.warp_forward(x, my, mx)


def warp_backward(g, my, mx):
    return _impl.warp_backward(g, my, mx)


def median_filter(x, k):
    return _impl.median_filter(x, k)
