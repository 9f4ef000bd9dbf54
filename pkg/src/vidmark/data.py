"""Clip sources and clip file I/O.

Clips are (T, H, W, 3) float32 in [0, 1]. They load from either a DIMT
tensor file or a directory of lossless per-frame images in lexicographic
(= temporal) order. The synthetic source generates smooth moving content
deterministically from a seed, standing in for real footage at desk
scale.
"""
from __future__ import annotations

import os

import cv2
import numpy as np

from . import kernels
from .tensorfile import read_tensor, write_tensor

_FRAME_EXTS = (".png", ".bmp", ".ppm")


def synthesize_clip(T: int, H: int, W: int, seed: int = 0) -> np.ndarray:
    """Smooth low-frequency background drifting under a moving bright blob."""
    rng = np.random.default_rng(seed)
    hc, wc = max(2, H // 8), max(2, W // 8)
    coarse = rng.random((1, 3, 1, hc, wc))
    field = kernels.resize3d_forward(coarse, (1, H, W))[0, :, 0]  # (3, H, W)
    vy, vx = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
    cy, cx = rng.uniform(0, H), rng.uniform(0, W)
    by, bx = rng.uniform(-2, 2), rng.uniform(-2, 2)
    rad = rng.uniform(H / 8, H / 4)
    yy, xx = np.mgrid[0:H, 0:W]
    clip = np.empty((T, H, W, 3), dtype=np.float32)
    for t in range(T):
        frame = np.stack([np.roll(field[c], (vy * t, vx * t), axis=(0, 1))
                          for c in range(3)], axis=-1)
        blob = np.exp(-(((yy - cy - by * t) ** 2 + (xx - cx - bx * t) ** 2)
                        / (2 * rad * rad)))
        frame = frame + 0.5 * blob[..., None]
        clip[t] = frame
    lo, hi = clip.min(), clip.max()
    clip = 0.1 + 0.8 * (clip - lo) / max(hi - lo, 1e-9)
    return clip.astype(np.float32)


class SyntheticSource:
    """Fixed roster of synthetic clips, cycled batch by batch.

    n_clips == batch_size makes every batch identical (the desk overfit
    configuration).
    """

    def __init__(self, T: int, H: int, W: int, n_clips: int, seed: int = 0):
        self.clips = [synthesize_clip(T, H, W, seed=(seed, i)) for i in range(n_clips)]

    def batch(self, step: int, batch_size: int) -> np.ndarray:
        n = len(self.clips)
        idx = [(step * batch_size + i) % n for i in range(batch_size)]
        return np.stack([self.clips[i] for i in idx])


class DirectorySource:
    """Cycles clips found under a directory (DIMT files or frame dirs)."""

    def __init__(self, root: str):
        entries = sorted(os.listdir(root))
        paths = []
        for e in entries:
            full = os.path.join(root, e)
            if os.path.isdir(full) or e.endswith(".dimt"):
                paths.append(full)
        if not paths:
            raise ValueError(f"no clips found under {root}")
        self.clips = [load_clip(p) for p in paths]

    def batch(self, step: int, batch_size: int) -> np.ndarray:
        n = len(self.clips)
        idx = [(step * batch_size + i) % n for i in range(batch_size)]
        return np.stack([self.clips[i] for i in idx])


def load_clip(path: str) -> np.ndarray:
    """Read a clip from a DIMT file or a directory of frame images."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path)
                       if os.path.splitext(n)[1].lower() in _FRAME_EXTS)
        if not names:
            raise ValueError(f"no frame images in {path}")
        frames = []
        for n in names:
            bgr = cv2.imread(os.path.join(path, n), cv2.IMREAD_COLOR)
            if bgr is None:
                raise ValueError(f"unreadable frame image {n}")
            frames.append(bgr[..., ::-1].astype(np.float32) / 255.0)
        return np.stack(frames)
    arr = read_tensor(path)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"clip tensor must be (T, H, W, 3), got {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return np.clip(arr.astype(np.float32), 0.0, 1.0)


def save_clip(path: str, clip: np.ndarray, as_frames: bool = False) -> None:
    clip = np.asarray(clip, dtype=np.float32)
    if as_frames:
        os.makedirs(path, exist_ok=True)
        for t in range(clip.shape[0]):
            bgr = np.clip(np.rint(clip[t][..., ::-1] * 255.0), 0, 255).astype(np.uint8)
            cv2.imwrite(os.path.join(path, f"frame_{t:04d}.png"), bgr)
        return
    write_tensor(path, clip)
