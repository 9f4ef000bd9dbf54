"""Embedding/extraction regimes and network input construction.

A regime picks the payload dimensionality at both ends: (3,3) same-
dimensional, (1,3)/(2,3) structure-expanding, (3,2) frame-decoupled.
The network input is always a channel-wise concat of the host clip, the
translated message features, and (when a mask payload participates) the
mask channels, in that fixed order.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Tensor, as_tensor, concat
from .payload import ensure_binary

REGIMES = ((3, 3), (1, 3), (2, 3), (3, 2))


@dataclass(frozen=True)
class MappingConfig:
    """Regime selector plus every shape the pipeline needs.

    d_e/d_d: embedding/extraction payload dimensions. The 1D message is
    carried in every regime; d_d refers to the structured payload.
    """

    d_e: int = 3
    d_d: int = 3
    L: int = 16
    T: int = 4
    H: int = 32
    W: int = 32
    C_tp: int = 1
    C_p: int = 1

    def __post_init__(self):
        if (self.d_e, self.d_d) not in REGIMES:
            raise ValueError(f"unsupported regime M{{{self.d_e},{self.d_d}}}; "
                             f"supported: {['M{%d,%d}' % r for r in REGIMES]}")
        if self.H < 8 or self.W < 8:
            raise ValueError("H and W must be at least 8")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.C_tp < 1 or self.C_p < 1:
            raise ValueError("channel counts must be >= 1")
        if self.C_p > 1 and (self.d_e, self.d_d) not in ((3, 3), (3, 2)):
            raise ValueError("multi-channel masks require M{3,3} or M{3,2}")

    @property
    def regime(self) -> str:
        return f"M{{{self.d_e},{self.d_d}}}"

    @property
    def uses_mask(self) -> bool:
        return self.d_e >= 2

    @property
    def c_in(self) -> int:
        return 3 + self.C_tp + (self.C_p if self.uses_mask else 0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OutputContract:
    """Shapes the extraction side must produce for a config."""

    message_length: int
    mask_shape: tuple  # (T, H, W, C_p)
    frame_wise: bool   # True: T independent per-frame 2D predictions


def output_contract(cfg: MappingConfig) -> OutputContract:
    return OutputContract(
        message_length=cfg.L,
        mask_shape=(cfg.T, cfg.H, cfg.W, cfg.C_p),
        frame_wise=(cfg.d_d == 2),
    )


def clip_to_chw(clip: np.ndarray) -> np.ndarray:
    """(T, H, W, 3) -> (3, T, H, W) float32-contiguous."""
    return np.ascontiguousarray(np.moveaxis(clip, -1, 0))


def chw_to_clip(x: np.ndarray) -> np.ndarray:
    """(3, T, H, W) -> (T, H, W, 3)."""
    return np.ascontiguousarray(np.moveaxis(x, 0, -1))


def mask_to_chw(mask: np.ndarray, cfg: MappingConfig) -> np.ndarray:
    """Payload-layout mask -> (C_p, T, H, W), replicating 2D masks in time.

    Accepts (H, W), (H, W, C), (T, H, W) or (T, H, W, C).
    """
    mask = np.asarray(mask)
    if cfg.d_e == 2:
        if mask.shape[:2] != (cfg.H, cfg.W):
            raise ValueError(f"2D mask shape {mask.shape} does not match "
                             f"{(cfg.H, cfg.W)}")
        if mask.ndim == 2:
            mask = mask[..., None]
        mask = np.broadcast_to(mask[None], (cfg.T,) + mask.shape)
    else:
        if mask.ndim == 3:
            mask = mask[..., None]
        if mask.shape != (cfg.T, cfg.H, cfg.W, cfg.C_p):
            raise ValueError(f"3D mask shape {mask.shape} does not match "
                             f"{(cfg.T, cfg.H, cfg.W, cfg.C_p)}")
    return np.ascontiguousarray(np.moveaxis(mask, -1, 0))


def build_input(cfg: MappingConfig, clip, msg_features, mask=None) -> Tensor:
    """Concat(host, message features[, mask]) along channels.

    Batched (B, C, T, H, W) tensors throughout; `clip` and `mask` may be
    numpy arrays in the same layout. Raises ValueError when a mask is
    supplied for M{1,3}, missing for d_e >= 2, or any shape disagrees.
    """
    clip = as_tensor(clip)
    msg_features = as_tensor(msg_features)
    B = clip.shape[0]
    expect = (B, 3, cfg.T, cfg.H, cfg.W)
    if clip.shape != expect:
        raise ValueError(f"clip shape {clip.shape} does not match {expect}")
    if msg_features.shape != (B, cfg.C_tp, cfg.T, cfg.H, cfg.W):
        raise ValueError(f"message features shape {msg_features.shape} does not "
                         f"match {(B, cfg.C_tp, cfg.T, cfg.H, cfg.W)}")
    if not cfg.uses_mask:
        if mask is not None:
            raise ValueError(f"{cfg.regime} takes no mask payload")
        return concat([clip, msg_features], axis=1)
    if mask is None:
        raise ValueError(f"{cfg.regime} requires a mask payload")
    mask = as_tensor(mask)
    if mask.shape != (B, cfg.C_p, cfg.T, cfg.H, cfg.W):
        raise ValueError(f"mask shape {mask.shape} does not match "
                         f"{(B, cfg.C_p, cfg.T, cfg.H, cfg.W)}")
    return concat([clip, msg_features, mask], axis=1)


def build_input_single(cfg: MappingConfig, clip: np.ndarray,
                       msg_features: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Unbatched convenience wrapper over payload-layout arrays.

    clip: (T, H, W, 3); mask in any payload layout accepted by
    mask_to_chw. Returns (C_in, T, H, W).
    """
    clip_chw = clip_to_chw(np.asarray(clip, dtype=np.float32))
    feats = np.asarray(msg_features, dtype=np.float32)
    mask_chw = None
    if mask is not None:
        if not cfg.uses_mask:
            raise ValueError(f"{cfg.regime} takes no mask payload")
        mask_chw = mask_to_chw(ensure_binary(mask), cfg).astype(np.float32)[None]
    out = build_input(cfg, clip_chw[None], feats[None], mask_chw)
    return out.data[0]
