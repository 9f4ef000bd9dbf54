"""The attack pool: valuemetric, geometric, frame-level, compression.

Every attack runs on the autodiff graph so the trainer can backprop
through it (straight-through where declared); the public `apply` wraps
a single clip grad-free and also returns the induced transform on
ground-truth masks so localization targets stay aligned with the
attacked clip.
"""
from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from typing import Callable

import cv2
import numpy as np

from . import kernels
from .autodiff import (Tensor, add, clip as ad_clip, concat, div, getitem,
                       linear_selfadjoint, mul, no_grad, sandwich, sin,
                       straight_through, sub, take_frames, warp_bilinear)
from .mapping import chw_to_clip, clip_to_chw

CATEGORIES = ("valuemetric", "geometric", "frame-level", "compression")


class CodecUnavailable(RuntimeError):
    """No external H.264 tool is configured or discoverable."""


@dataclass(frozen=True)
class DistortionSpec:
    name: str
    category: str
    params: dict = field(default_factory=dict)
    differentiable: bool = True

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")


def training_pool() -> list[DistortionSpec]:
    return [
        DistortionSpec("gaussian_blur", "valuemetric", {"kernel": 1, "sigma": 5.0}),
        DistortionSpec("gaussian_noise", "valuemetric", {"sigma": 0.1}),
        DistortionSpec("median_filter", "valuemetric", {"kernel": 5}),
        DistortionSpec("salt_pepper", "valuemetric", {"ratio": 0.1}),
        DistortionSpec("rotation", "geometric", {"max_angle": 90.0}),
        DistortionSpec("perspective", "geometric", {"scale_min": 0.1, "scale_max": 0.5}),
        DistortionSpec("hflip", "geometric", {}),
        DistortionSpec("frame_shuffle", "frame-level", {}),
        DistortionSpec("frame_replace", "frame-level", {}),
        DistortionSpec("frame_drop", "frame-level", {}),
        DistortionSpec("frame_insert", "frame-level", {}),
        DistortionSpec("compression_surrogate", "compression",
                       {"intra_min": 1.5, "intra_max": 5.0,
                        "inter_min": 5.0, "inter_max": 8.0}),
    ]


def evaluation_pool() -> list[DistortionSpec]:
    return [
        DistortionSpec("jpeg", "valuemetric", {"quality": 60}, differentiable=False),
        DistortionSpec("gaussian_blur", "valuemetric", {"kernel": 1, "sigma": 3.0}),
        DistortionSpec("gaussian_noise", "valuemetric", {"sigma": 0.05}),
        DistortionSpec("median_filter", "valuemetric", {"kernel": 3}),
        DistortionSpec("salt_pepper", "valuemetric", {"ratio": 0.05}),
        DistortionSpec("rotation", "geometric", {"max_angle": 30.0}),
        DistortionSpec("perspective", "geometric", {"scale_min": 0.1, "scale_max": 0.3}),
        DistortionSpec("hflip", "geometric", {}),
        DistortionSpec("frame_shuffle", "frame-level", {}),
        DistortionSpec("frame_replace", "frame-level", {}),
        DistortionSpec("frame_drop", "frame-level", {}),
        DistortionSpec("frame_insert", "frame-level", {}),
        DistortionSpec("h264_crf20", "compression", {"crf": 20}, differentiable=False),
        DistortionSpec("h264_crf25", "compression", {"crf": 25}, differentiable=False),
    ]


def with_overrides(pool: list[DistortionSpec], overrides: dict | None) -> list[DistortionSpec]:
    """New pool with "<preset>.<param>" keys replacing preset parameters.

    Keys naming presets absent from this pool are ignored (they may
    belong to the other phase); config parsing validates the union.
    """
    if not overrides:
        return pool
    out = []
    for spec in pool:
        params = dict(spec.params)
        for key, val in overrides.items():
            name, _, pname = key.partition(".")
            if name == spec.name and pname in params:
                params[pname] = val
        out.append(DistortionSpec(spec.name, spec.category, params, spec.differentiable))
    return out


def sample_pool(phase: str, seed=None, rng=None,
                categories: tuple[str, ...] | None = None,
                overrides: dict | None = None) -> DistortionSpec:
    """Uniform draw from the phase's pool, optionally category-gated."""
    if phase == "training":
        pool = training_pool()
    elif phase == "evaluation":
        pool = evaluation_pool()
    else:
        raise ValueError(f"unknown phase {phase!r}")
    pool = with_overrides(pool, overrides)
    if categories is not None:
        pool = [s for s in pool if s.category in categories]
        if not pool:
            raise ValueError("no presets left after category filter")
    if rng is None:
        rng = np.random.default_rng(seed)
    return pool[int(rng.integers(0, len(pool)))]


@dataclass
class AttackOutcome:
    """Attacked clip plus the induced map on ground-truth masks.

    mask_transform acts on payload-layout masks (T, H, W) or
    (T, H, W, C). frame_map gives, per output position, the source
    frame index or None for foreign (all-white) frames.
    """

    clip: np.ndarray
    mask_transform: Callable[[np.ndarray], np.ndarray]
    frame_map: tuple | None
    spec: DistortionSpec
    drawn: dict


def _identity_mask(mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask).copy()


def _clip01(x: Tensor) -> Tensor:
    return ad_clip(x, 0.0, 1.0)


# ---------------------------------------------------------------- valuemetric

def _gauss_kernel1d(kernel: int, sigma: float) -> np.ndarray:
    r = kernel // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _blur_fn(k1d: np.ndarray):
    r = len(k1d) // 2

    def run(x: np.ndarray) -> np.ndarray:
        H, W = x.shape[-2:]
        kv = k1d.astype(x.dtype)
        xp = np.pad(x, ((0, 0),) * 3 + ((r, r), (0, 0)))
        y = sum(kv[m] * xp[..., m:m + H, :] for m in range(len(kv)))
        yp = np.pad(y, ((0, 0),) * 4 + ((r, r),))
        return sum(kv[m] * yp[..., m:m + W] for m in range(len(kv)))

    return run


def _gaussian_blur_t(x: Tensor, kernel: int, sigma: float, rng) -> Tensor:
    if kernel <= 1:
        return x  # single-tap kernel is the identity
    if kernel % 2 == 0:
        raise ValueError("blur kernel must be odd")
    return linear_selfadjoint(x, _blur_fn(_gauss_kernel1d(kernel, sigma)))


def _gaussian_noise_t(x: Tensor, sigma: float, rng) -> Tensor:
    noise = rng.normal(0.0, sigma, size=x.shape[2:]).astype(x.dtype)
    return _clip01(add(x, noise))


def _median_t(x: Tensor, kernel: int, rng) -> Tensor:
    if kernel % 2 == 0:
        raise ValueError("median kernel must be odd")
    # not differentiable: forward filters, gradient passes straight through
    return straight_through(x, kernels.median_filter(x.data, kernel))


def _salt_pepper_t(x: Tensor, ratio: float, rng) -> Tensor:
    T, H, W = x.shape[2:]
    sel = (rng.random((T, H, W)) < ratio)
    vals = (rng.random((T, H, W)) < 0.5).astype(x.dtype)
    keep = (~sel).astype(x.dtype)[None, None]
    paint = (vals * sel)[None, None].astype(x.dtype)
    return add(mul(x, keep), paint)


def _jpeg_t(x: Tensor, quality: int, rng) -> Tensor:
    out = np.empty_like(x.data)
    flags = [int(cv2.IMWRITE_JPEG_QUALITY), int(quality)]
    for b in range(x.shape[0]):
        clip = chw_to_clip(x.data[b])
        for t in range(clip.shape[0]):
            bgr = np.clip(np.rint(clip[t][..., ::-1] * 255.0), 0, 255).astype(np.uint8)
            ok, buf = cv2.imencode(".jpg", bgr, flags)
            if not ok:
                raise RuntimeError("JPEG encoding failed")
            dec = cv2.imdecode(buf, cv2.IMREAD_COLOR)
            clip[t] = dec[..., ::-1].astype(clip.dtype) / 255.0
        out[b] = clip_to_chw(clip)
    return straight_through(x, out)


# ------------------------------------------------------------------ geometric

def _rotation_grid(angle_deg: float, H: int, W: int):
    rad = np.deg2rad(angle_deg)
    c, s = np.cos(rad), np.sin(rad)
    ci, cj = (H - 1) / 2.0, (W - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64),
                         np.arange(H, dtype=np.float64))
    dy, dx = ii - ci, jj - cj
    my = ci + c * dy - s * dx
    mx = cj + s * dy + c * dx
    return my, mx


def _perspective_grid(rng, scale_min: float, scale_max: float, H: int, W: int):
    d = float(rng.uniform(scale_min, scale_max))
    hw, hh = d * W / 2.0, d * H / 2.0
    u = rng.uniform(0.0, 1.0, size=8)
    src = np.array([[0, 0], [W - 1, 0], [W - 1, H - 1], [0, H - 1]], dtype=np.float64)
    dst = np.array([
        [u[0] * hw, u[1] * hh],
        [W - 1 - u[2] * hw, u[3] * hh],
        [W - 1 - u[4] * hw, H - 1 - u[5] * hh],
        [u[6] * hw, H - 1 - u[7] * hh],
    ])
    # homography P with src = P(dst), solved from the 4 corner pairs
    A = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        xd, yd = dst[i]
        xs, ys = src[i]
        A[2 * i] = [xd, yd, 1, 0, 0, 0, -xs * xd, -xs * yd]
        A[2 * i + 1] = [0, 0, 0, xd, yd, 1, -ys * xd, -ys * yd]
        b[2 * i] = xs
        b[2 * i + 1] = ys
    p = np.linalg.solve(A, b)
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64),
                         np.arange(H, dtype=np.float64))
    denom = p[6] * jj + p[7] * ii + 1.0
    mx = (p[0] * jj + p[1] * ii + p[2]) / denom
    my = (p[3] * jj + p[4] * ii + p[5]) / denom
    return my, mx, d


def _warp_mask_nearest(mask: np.ndarray, my: np.ndarray, mx: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    H, W = mask.shape[1:3]
    yi = np.rint(my).astype(np.int64)
    xi = np.rint(mx).astype(np.int64)
    valid = (yi >= 0) & (yi < H) & (xi >= 0) & (xi < W)
    yc = np.clip(yi, 0, H - 1)
    xc = np.clip(xi, 0, W - 1)
    gathered = mask[:, yc, xc]
    v = valid if mask.ndim == 3 else valid[..., None]
    return (gathered * v).astype(mask.dtype)


def _warp_attack(x: Tensor, my: np.ndarray, mx: np.ndarray):
    return warp_bilinear(x, my, mx), lambda m: _warp_mask_nearest(m, my, mx)


# ---------------------------------------------------------------- frame-level

def _white_frames(x: Tensor, n: int) -> Tensor:
    B, C, _, H, W = x.shape
    return Tensor(np.ones((B, C, n, H, W), dtype=x.dtype))


def _frame_mask_apply(mask: np.ndarray, frame_map: tuple) -> np.ndarray:
    mask = np.asarray(mask)
    out = np.zeros((len(frame_map),) + mask.shape[1:], dtype=mask.dtype)
    for pos, src in enumerate(frame_map):
        if src is not None:
            out[pos] = mask[src]
    return out


def _frame_attack(x: Tensor, frame_map: tuple) -> Tensor:
    """Assemble the output clip from source frames and white padding."""
    T = x.shape[2]
    parts = []
    run: list[int] = []
    for src in frame_map:
        if src is None:
            if run:
                parts.append(take_frames(x, run))
                run = []
            parts.append(_white_frames(x, 1))
        else:
            run.append(src)
    if run:
        parts.append(take_frames(x, run))
    if len(parts) == 1:
        return parts[0]
    return concat(parts, axis=2)


# ---------------------------------------------------------------- compression

def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


_DCT8 = _dct_matrix(8)
_INTRA_STEP = 1.0 / 100.0   # coefficient-domain quant step per unit strength
_INTER_STEP = 1.0 / 200.0   # residual-domain quant step per unit strength


def _softround(v: Tensor, step: float) -> Tensor:
    u = div(v, step)
    return mul(sub(u, div(sin(mul(u, 2.0 * np.pi)), 2.0 * np.pi)), step)


def _blockify(x: Tensor):
    B, C, T, H, W = x.shape
    if H % 8 or W % 8:
        raise ValueError("compression surrogate needs H and W divisible by 8")
    z = x.reshape((B, C, T, H // 8, 8, W // 8, 8))
    return z.transpose((0, 1, 2, 3, 5, 4, 6))  # (..., Hb, Wb, 8, 8)


def _unblockify(z: Tensor, shape):
    B, C, T, H, W = shape
    return z.transpose((0, 1, 2, 3, 5, 4, 6)).reshape((B, C, T, H, W))


def compression_surrogate_t(x: Tensor, intra: float, inter: float) -> Tensor:
    """Differentiable stand-in for intra/inter video coding.

    Per-frame 8x8 block-DCT coefficients are soft-quantized with a step
    proportional to `intra`; frames after the first are reconstructed
    from soft-quantized residuals against the running reconstruction
    with a step proportional to `inter`.
    """
    dct = _DCT8.astype(np.float64 if x.dtype == np.float64 else np.float32)
    coef = sandwich(_blockify(x), dct)
    rec = sandwich(_softround(coef, intra * _INTRA_STEP), dct.T)
    intra_frames = _unblockify(rec, x.shape)
    T = x.shape[2]
    if T == 1:
        return _clip01(intra_frames)
    prev = getitem(intra_frames, (slice(None), slice(None), slice(0, 1)))
    outs = [prev]
    for t in range(1, T):
        cur = getitem(intra_frames, (slice(None), slice(None), slice(t, t + 1)))
        resid = sub(cur, prev)
        prev = add(prev, _softround(resid, inter * _INTER_STEP))
        outs.append(prev)
    return _clip01(concat(outs, axis=2))


def compression_surrogate(clip: np.ndarray, intra: float, inter: float) -> np.ndarray:
    """Numpy wrapper over a single (T, H, W, 3) clip."""
    if not 1.5 <= intra <= 5.0:
        raise ValueError(f"intra strength {intra} outside [1.5, 5]")
    if not 5.0 <= inter <= 8.0:
        raise ValueError(f"inter strength {inter} outside [5, 8]")
    with no_grad():
        x = Tensor(clip_to_chw(np.asarray(clip, dtype=np.float32))[None])
        y = compression_surrogate_t(x, intra, inter)
    return chw_to_clip(y.data[0])


# --------------------------------------------------------------- codec bridge

def codec_tool() -> str | None:
    """Path of the external encoder, from VIDMARK_CODEC or PATH."""
    override = os.environ.get("VIDMARK_CODEC")
    if override:
        found = shutil.which(override) or (override if os.path.isfile(override) else None)
        return found
    return shutil.which("ffmpeg")


def h264_roundtrip(clip: np.ndarray, crf: int, tool: str | None = None,
                   fps: int = 8) -> np.ndarray:
    """Encode/decode through the external tool; raises CodecUnavailable."""
    tool = tool or codec_tool()
    if tool is None:
        raise CodecUnavailable(
            "no H.264 tool found; set VIDMARK_CODEC to an ffmpeg-compatible binary")
    clip = np.asarray(clip)
    T = clip.shape[0]
    with tempfile.TemporaryDirectory(prefix="vidmark_codec_") as td:
        for t in range(T):
            bgr = np.clip(np.rint(clip[t][..., ::-1] * 255.0), 0, 255).astype(np.uint8)
            cv2.imwrite(os.path.join(td, f"in_{t:04d}.png"), bgr)
        video = os.path.join(td, "clip.mp4")
        enc = [tool, "-y", "-loglevel", "error", "-framerate", str(fps),
               "-i", os.path.join(td, "in_%04d.png"),
               "-c:v", "libx264", "-crf", str(crf), "-pix_fmt", "yuv420p", video]
        dec = [tool, "-y", "-loglevel", "error", "-i", video,
               os.path.join(td, "out_%04d.png")]
        for cmd in (enc, dec):
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise CodecUnavailable(
                    f"codec tool failed ({' '.join(cmd[:1])}): {proc.stderr.strip()[:500]}")
        out = np.empty_like(clip)
        for t in range(T):
            frame = cv2.imread(os.path.join(td, f"out_{t + 1:04d}.png"), cv2.IMREAD_COLOR)
            if frame is None:
                raise CodecUnavailable(f"codec tool produced no frame {t + 1}")
            out[t] = frame[..., ::-1].astype(clip.dtype) / 255.0
    return out


# ------------------------------------------------------------------- dispatch

def apply_t(spec: DistortionSpec, x: Tensor, rng):
    """Graph-level attack on a batch. Returns (y, mask_transform,
    frame_map, drawn params)."""
    p = spec.params
    T, H, W = x.shape[2:]
    name = spec.name
    if name == "gaussian_blur":
        return (_gaussian_blur_t(x, p["kernel"], p["sigma"], rng),
                _identity_mask, None, dict(p))
    if name == "gaussian_noise":
        return _gaussian_noise_t(x, p["sigma"], rng), _identity_mask, None, dict(p)
    if name == "median_filter":
        return _median_t(x, p["kernel"], rng), _identity_mask, None, dict(p)
    if name == "salt_pepper":
        return _salt_pepper_t(x, p["ratio"], rng), _identity_mask, None, dict(p)
    if name == "jpeg":
        return _jpeg_t(x, p["quality"], rng), _identity_mask, None, dict(p)
    if name == "rotation":
        angle = float(rng.uniform(-p["max_angle"], p["max_angle"]))
        my, mx = _rotation_grid(angle, H, W)
        y, mt = _warp_attack(x, my, mx)
        return y, mt, None, {"angle": angle}
    if name == "perspective":
        my, mx, d = _perspective_grid(rng, p["scale_min"], p["scale_max"], H, W)
        y, mt = _warp_attack(x, my, mx)
        return y, mt, None, {"scale": d}
    if name == "hflip":
        y = getitem(x, (Ellipsis, slice(None, None, -1)))
        return y, lambda m: np.ascontiguousarray(np.asarray(m)[:, :, ::-1]), None, {}
    if name == "frame_shuffle":
        perm = tuple(int(v) for v in rng.permutation(T))
        y = take_frames(x, perm)
        return (y, lambda m, fm=perm: _frame_mask_apply(m, fm), perm, {"perm": perm})
    if name == "frame_replace":
        i = int(rng.integers(0, T))
        fm = tuple(None if t == i else t for t in range(T))
        return (_frame_attack(x, fm), lambda m, fm=fm: _frame_mask_apply(m, fm),
                fm, {"index": i})
    if name == "frame_drop":
        i = int(rng.integers(0, T))
        fm = tuple(t for t in range(T) if t != i) + (None,)
        return (_frame_attack(x, fm), lambda m, fm=fm: _frame_mask_apply(m, fm),
                fm, {"index": i})
    if name == "frame_insert":
        i = int(rng.integers(0, T))
        fm = tuple(range(i)) + (None,) + tuple(range(i, T - 1))
        return (_frame_attack(x, fm), lambda m, fm=fm: _frame_mask_apply(m, fm),
                fm, {"index": i})
    if name == "compression_surrogate":
        intra = float(rng.uniform(p["intra_min"], p["intra_max"]))
        inter = float(rng.uniform(p["inter_min"], p["inter_max"]))
        return (compression_surrogate_t(x, intra, inter), _identity_mask, None,
                {"intra": intra, "inter": inter})
    if name.startswith("h264"):
        out = np.stack([clip_to_chw(h264_roundtrip(chw_to_clip(x.data[b]), p["crf"]))
                        for b in range(x.shape[0])])
        return straight_through(x, out.astype(x.dtype)), _identity_mask, None, dict(p)
    raise ValueError(f"unknown distortion {name!r}")


def apply(spec: DistortionSpec, clip: np.ndarray, seed: int = 0) -> AttackOutcome:
    """Attack one (T, H, W, 3) clip in [0, 1], deterministically in seed."""
    clip = np.asarray(clip, dtype=np.float32)
    if clip.min() < 0.0 or clip.max() > 1.0:
        raise ValueError("clip values must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    with no_grad():
        x = Tensor(clip_to_chw(clip)[None])
        y, mt, fm, drawn = apply_t(spec, x, rng)
    return AttackOutcome(chw_to_clip(y.data[0]), mt, fm, spec, drawn)
