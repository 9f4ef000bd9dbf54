"""Model bundle and the four pipeline stages.

embed:   T_in -> encoder -> V_enc, then V_wm = V_orig + mu * JND * (V_enc - V_orig)
fuse:    V_fuse = V_wm (.) M + V_orig (.) (1 - M)
decode:  masked clip -> L probabilities
predict: attacked clip -> mask estimate (3D or frame-wise head per regime)

Graph-level functions (suffix _t, batched channel-first Tensors) are
used by the trainer; the plain functions take payload-layout numpy
arrays and run grad-free.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, clip as ad_clip, mul, no_grad, sub
from .mapping import (MappingConfig, build_input, chw_to_clip, clip_to_chw,
                      mask_to_chw)
from .nn import Decoder, Encoder, MaskPredictor, MessageTranslator
from .payload import ensure_binary


@dataclass
class ModelBundle:
    """Every trainable sub-graph plus the JND scale, built from one config."""

    cfg: MappingConfig
    translator: MessageTranslator
    encoder: Encoder
    decoder: Decoder
    mask_predictor_2d: MaskPredictor
    mask_predictor_3d: MaskPredictor
    jnd_mu: float = 1.0
    dtype: np.dtype = np.float32

    def named_params(self):
        parts = (("translator", self.translator), ("encoder", self.encoder),
                 ("decoder", self.decoder), ("mask2d", self.mask_predictor_2d),
                 ("mask3d", self.mask_predictor_3d))
        for prefix, module in parts:
            yield from module.named_params(prefix + ".")

    def param_tensors(self):
        return [p for _, p in self.named_params()]

    @property
    def mask_predictor(self) -> MaskPredictor:
        return self.mask_predictor_2d if self.cfg.d_d == 2 else self.mask_predictor_3d


def create_bundle(cfg: MappingConfig, seed: int = 0, dtype=np.float32,
                  jnd_mu: float = 1.0) -> ModelBundle:
    rng = np.random.default_rng(seed)
    return ModelBundle(
        cfg=cfg,
        translator=MessageTranslator(cfg.L, cfg.T, cfg.H, cfg.W, cfg.C_tp, rng, dtype),
        encoder=Encoder(cfg.c_in, rng, dtype),
        decoder=Decoder(cfg.L, rng, dtype),
        mask_predictor_2d=MaskPredictor(cfg.C_p, spatial_only=True, rng=rng, dtype=dtype),
        mask_predictor_3d=MaskPredictor(cfg.C_p, spatial_only=False, rng=rng, dtype=dtype),
        jnd_mu=jnd_mu,
        dtype=np.dtype(dtype),
    )


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def _correlate2d_same(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    out = np.zeros_like(img)
    H, W = img.shape
    pad = np.pad(img, 1, mode="edge")  # flat frames stay gradient-free
    for i in range(3):
        for j in range(3):
            out += k[i, j] * pad[i:i + H, j:j + W]
    return out


def jnd_map(clip: np.ndarray) -> np.ndarray:
    """Luminance-contrast sensitivity per cell, (T, H, W) in [0, 1].

    Normalized Sobel gradient magnitude of the channel-mean frame,
    min-max scaled per frame. Flat frames map to zero everywhere.
    """
    clip = np.asarray(clip, dtype=np.float64)
    T = clip.shape[0]
    out = np.empty(clip.shape[:3], dtype=np.float64)
    for t in range(T):
        lum = clip[t].mean(axis=-1)
        gx = _correlate2d_same(lum, _SOBEL_X)
        gy = _correlate2d_same(lum, _SOBEL_Y)
        mag = np.sqrt(gx * gx + gy * gy)
        lo, hi = mag.min(), mag.max()
        out[t] = (mag - lo) / (hi - lo) if hi > lo else 0.0
    return out


def embed_t(bundle: ModelBundle, clip_t: Tensor, msgs_t: Tensor,
            mask_chw: np.ndarray | None, use_jnd: bool,
            jnd: np.ndarray | None = None) -> Tensor:
    """Graph embed on batched tensors; clip_t (B,3,T,H,W), msgs_t (B,L)."""
    cfg = bundle.cfg
    if bundle.jnd_mu == 0.0:
        return clip_t  # modulation term vanishes; host passes through bitwise
    feats = bundle.translator(msgs_t)
    tin = build_input(cfg, clip_t, feats, mask_chw)
    v_enc = bundle.encoder(tin)
    delta = sub(v_enc, clip_t)
    if jnd is None and use_jnd:
        maps = np.stack([jnd_map(chw_to_clip(c)) for c in clip_t.data])
        jnd = maps[:, None]  # (B,1,T,H,W) broadcasts over color channels
    if jnd is not None:
        delta = mul(delta, jnd.astype(clip_t.dtype))
    if bundle.jnd_mu != 1.0:
        delta = mul(delta, bundle.jnd_mu)
    return ad_clip(add(clip_t, delta), 0.0, 1.0)


def fusion_mask(mask_chw: np.ndarray | None, shape) -> np.ndarray:
    """Single-channel fuse mask: OR over code channels; all-ones if absent."""
    if mask_chw is None:
        return np.ones(shape, dtype=np.float32)
    return mask_chw.max(axis=-4, keepdims=True).astype(np.float32)


def fuse_t(wm_t: Tensor, orig_t: Tensor, fmask: np.ndarray) -> Tensor:
    return add(mul(wm_t, fmask), mul(orig_t, 1.0 - fmask))


def _check_finite(arr: np.ndarray, what: str):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {what}")


def embed(bundle: ModelBundle, cfg: MappingConfig, clip: np.ndarray,
          msg: np.ndarray, mask: np.ndarray | None = None,
          use_jnd: bool = True, jnd: np.ndarray | None = None) -> np.ndarray:
    """Watermark a (T, H, W, 3) clip. Returns V_wm of the same shape.

    `jnd` overrides the computed sensitivity map (ablation hook); pass
    use_jnd=False for the constant-1 map used before JND activation.
    """
    if clip.shape != (cfg.T, cfg.H, cfg.W, 3):
        raise ValueError(f"clip shape {clip.shape} does not match config "
                         f"{(cfg.T, cfg.H, cfg.W, 3)}")
    msg = ensure_binary(np.asarray(msg), "message")
    if msg.shape != (cfg.L,):
        raise ValueError(f"message length {msg.shape} does not match L={cfg.L}")
    mask_chw = None
    if mask is not None:
        mask_chw = mask_to_chw(ensure_binary(mask), cfg).astype(bundle.dtype)[None]
    elif cfg.uses_mask:
        raise ValueError(f"{cfg.regime} requires a mask payload")
    with no_grad():
        clip_t = Tensor(clip_to_chw(clip.astype(bundle.dtype))[None])
        msgs_t = Tensor(msg.astype(bundle.dtype)[None])
        jnd_b = None if jnd is None else np.asarray(jnd)[None, None]
        out = embed_t(bundle, clip_t, msgs_t, mask_chw, use_jnd, jnd_b).data
    _check_finite(out, "watermarked clip")
    return chw_to_clip(out[0])


def fuse(wm: np.ndarray, orig: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Convex per-cell selection: mask 1 keeps the watermarked clip.

    mask: (T, H, W) binary, or (T, H, W, C) whose channel-OR is used.
    """
    wm = np.asarray(wm)
    orig = np.asarray(orig)
    if wm.shape != orig.shape:
        raise ValueError(f"clip shapes differ: {wm.shape} vs {orig.shape}")
    mask = ensure_binary(mask)
    if mask.ndim == 4:
        mask = mask.max(axis=-1)
    if mask.shape != wm.shape[:3]:
        raise ValueError(f"mask shape {mask.shape} does not match clip {wm.shape[:3]}")
    m = mask[..., None].astype(wm.dtype)
    return wm * m + orig * (1 - m)


def decode(bundle: ModelBundle, cfg: MappingConfig, masked_clip: np.ndarray) -> np.ndarray:
    """Masked clip -> (L,) message probabilities in [0, 1]."""
    masked_clip = np.asarray(masked_clip)
    if masked_clip.shape != (cfg.T, cfg.H, cfg.W, 3):
        raise ValueError(f"clip shape {masked_clip.shape} does not match config")
    with no_grad():
        x = Tensor(clip_to_chw(masked_clip.astype(bundle.dtype))[None])
        probs = bundle.decoder(x).data[0]
    _check_finite(probs, "decoded message")
    return probs


def predict_mask(bundle: ModelBundle, cfg: MappingConfig,
                 attacked_clip: np.ndarray) -> np.ndarray:
    """Attacked clip -> (T, H, W, C_p) mask estimate in [0, 1].

    For M{3,2} each frame is predicted independently by the shared
    frame-wise head and the results are stacked.
    """
    attacked_clip = np.asarray(attacked_clip)
    if attacked_clip.shape != (cfg.T, cfg.H, cfg.W, 3):
        raise ValueError(f"clip shape {attacked_clip.shape} does not match config")
    with no_grad():
        x = Tensor(clip_to_chw(attacked_clip.astype(bundle.dtype))[None])
        est = bundle.mask_predictor(x).data[0]
    _check_finite(est, "mask estimate")
    return np.moveaxis(est, 0, -1)


def hard_bits(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(probs) >= threshold).astype(np.uint8)
