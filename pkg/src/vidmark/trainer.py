"""Training loop: embed -> fuse -> attack -> masked extract + predict.

Losses follow the composite objective
    l_total = beta_enc * l_enc + beta_dec(step) * (l_msg + alpha * l_mask)
with MSE everywhere, AdamW updates under a warmup+cosine schedule, and a
curriculum that starts with full masks, then all mask kinds, then the
distortion pool. Per-step randomness derives from (seed, step) so a
resumed run reproduces the original stream bitwise.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import distort as D
from .autodiff import Tensor, add, mse, mul
from .checkpoint import load_checkpoint, save_checkpoint
from .mapping import MappingConfig, clip_to_chw
from .model import ModelBundle, create_bundle, decode, embed, embed_t, fuse, fuse_t
from .payload import MASK_KINDS, sample_regime_payload

PHASES = ("full-mask", "all-masks", "distortions")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and curriculum settings. Defaults are the full-scale
    reference schedule (200k steps); see desk_defaults() and
    overfit_defaults() for the scaled-down variants this package runs."""

    steps: int = 200_000
    lr: float = 2e-4
    warmup_steps: int = 2000
    batch_size: int = 8
    beta_enc: float = 1.0
    beta_dec_init: float = 20.0
    beta_dec_final: float = 0.2
    beta_dec_decay_steps: int = 10_000
    alpha: float = 0.5
    jnd_start_step: int = 10_000
    mu: float = 1.0
    s1: int = 1000
    s2: int = 2000
    weight_decay: float = 1e-2
    seed: int = 0
    delta_max: int = 2
    mask_kinds: tuple = MASK_KINDS
    distortions: bool = True
    distort_categories: tuple | None = None
    distort_overrides: tuple = ()
    checkpoint_every: int = 0
    stop_bit_acc: float | None = None
    stop_check_every: int = 25
    stop_patience: int = 3

    def __post_init__(self):
        # full-length schedules satisfy s1 < s2 < steps; short runs and
        # 0-step (initial-checkpoint) configs simply end in an earlier phase
        if not 0 <= self.s1 < self.s2:
            raise ValueError("curriculum thresholds must satisfy 0 <= s1 < s2")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        for name in ("lr", "beta_enc", "beta_dec_init", "beta_dec_final",
                     "alpha", "mu", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        bad = [k for k in self.mask_kinds if k not in MASK_KINDS]
        if bad:
            raise ValueError(f"unknown mask kinds {bad}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mask_kinds"] = list(self.mask_kinds)
        return d


def desk_defaults(**overrides) -> TrainConfig:
    """Reference schedule rescaled to desk size (3000 steps, 32x32x4).

    The learning rate rises to 1e-3: the full-scale 2e-4 presumes a 200k
    step budget and does not move these small models within 3000 steps.
    """
    base = dict(steps=3000, lr=1e-3, warmup_steps=60, batch_size=4, s1=100,
                s2=200, beta_dec_decay_steps=1000, jnd_start_step=1000)
    base.update(overrides)
    return TrainConfig(**base)


def overfit_defaults(**overrides) -> TrainConfig:
    """Clean-overfit surrogate: full masks only, no distortions, no JND,
    early stop once the training batch decodes perfectly."""
    base = dict(mask_kinds=("full",), distortions=False, jnd_start_step=10 ** 9,
                stop_bit_acc=1.0)
    base.update(overrides)
    return desk_defaults(**base)


@dataclass
class LossReport:
    step: int
    l_enc: float
    l_msg: float
    l_mask: float
    l_dec: float
    l_total: float
    lr: float
    beta_dec: float
    phase: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "LossReport":
        return LossReport(**json.loads(line))


def beta_dec_at(tcfg: TrainConfig, step: int) -> float:
    frac = min(1.0, step / tcfg.beta_dec_decay_steps)
    return tcfg.beta_dec_init + (tcfg.beta_dec_final - tcfg.beta_dec_init) * frac


def lr_at(tcfg: TrainConfig, step: int) -> float:
    if step < tcfg.warmup_steps:
        return tcfg.lr * step / tcfg.warmup_steps
    span = max(1, tcfg.steps - tcfg.warmup_steps)
    progress = (step - tcfg.warmup_steps) / span
    return tcfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


def curriculum_mask(tcfg: TrainConfig, step: int, rng) -> tuple[str, bool]:
    """Mask kind for this draw plus whether distortions are enabled."""
    if step < tcfg.s1:
        return "full", False
    kind = tcfg.mask_kinds[int(rng.integers(0, len(tcfg.mask_kinds)))]
    if step < tcfg.s2:
        return kind, False
    return kind, tcfg.distortions


def phase_name(tcfg: TrainConfig, step: int) -> str:
    if step < tcfg.s1:
        return PHASES[0]
    if step < tcfg.s2:
        return PHASES[1]
    return PHASES[2]


class AdamW:
    """Decoupled weight decay, bias-corrected moments."""

    def __init__(self, named_params, weight_decay: float = 1e-2,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.named = list(named_params)
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}

    def zero_grad(self):
        for _, p in self.named:
            p.grad = None

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, p in self.named:
            g = p.grad
            if g is None:
                continue
            m = self.m[n]
            v = self.v[n]
            m += (1.0 - self.b1) * (g - m)
            v += (1.0 - self.b2) * (g * g - v)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= lr * (update + self.wd * p.data)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict):
        self.t = state["t"]
        for n, _ in self.named:
            self.m[n][...] = state["m"][n]
            self.v[n][...] = state["v"][n]


@dataclass
class Batch:
    clips: np.ndarray          # (B, T, H, W, 3)
    msgs: np.ndarray           # (B, L) uint8
    gt3d: np.ndarray           # (B, T, H, W) or (B, T, H, W, C)
    payload_chw: np.ndarray | None  # (B, C_p, T, H, W) float32 for build_input
    distortions_on: bool


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng((seed, step))


def make_batch(cfg: MappingConfig, tcfg: TrainConfig, source, step: int) -> Batch:
    rng = step_rng(tcfg.seed, step)
    clips = source.batch(step, tcfg.batch_size)
    B = clips.shape[0]
    msgs = rng.integers(0, 2, size=(B, cfg.L), dtype=np.uint8)
    gts = []
    stacked = []
    distortions_on = False
    for _ in range(B):
        kind, distortions_on = curriculum_mask(tcfg, step, rng)
        payload = sample_regime_payload(kind, cfg.d_e, cfg.T, cfg.H, cfg.W,
                                        cfg.C_p, rng, tcfg.delta_max)
        if payload is None:  # M{1,3}: global embedding, all-ones target
            gts.append(np.ones((cfg.T, cfg.H, cfg.W), dtype=np.uint8))
            continue
        seq = payload
        if cfg.d_e == 2:
            seq = np.broadcast_to(payload, (cfg.T,) + payload.shape).copy()
        gts.append(seq)
        per_cell = seq[..., None] if seq.ndim == 3 else seq
        stacked.append(np.moveaxis(per_cell, -1, 0))
    payload_chw = np.stack(stacked).astype(np.float32) if cfg.uses_mask else None
    return Batch(clips, msgs, np.stack(gts), payload_chw, distortions_on)


def _gt_to_chw(gt: np.ndarray) -> np.ndarray:
    """(B, T, H, W[, C]) -> (B, C, T, H, W) float32."""
    if gt.ndim == 4:
        gt = gt[..., None]
    return np.ascontiguousarray(np.moveaxis(gt, -1, 1)).astype(np.float32)


def loss_parts(vwm, vorig, wpd, msgs, mpd, masks, alpha: float) -> dict:
    """Plain-numpy loss recomputation (the report oracle)."""
    l_enc = float(((vwm - vorig) ** 2).mean())
    l_msg = float(((wpd - msgs) ** 2).mean())
    l_mask = float(((mpd - masks) ** 2).mean())
    return {"l_enc": l_enc, "l_msg": l_msg, "l_mask": l_mask,
            "l_dec": l_msg + alpha * l_mask}


def train_step(bundle: ModelBundle, cfg: MappingConfig, tcfg: TrainConfig,
               opt: AdamW, batch: Batch, step: int,
               out_dir: str | None = None) -> LossReport:
    rng = step_rng(tcfg.seed, step).spawn(1)[0]
    clip_t = Tensor(np.stack([clip_to_chw(c) for c in batch.clips]).astype(bundle.dtype))
    msgs_f = batch.msgs.astype(bundle.dtype)
    msgs_t = Tensor(msgs_f)
    use_jnd = step >= tcfg.jnd_start_step

    vwm = embed_t(bundle, clip_t, msgs_t, batch.payload_chw, use_jnd)
    l_enc = mse(vwm, clip_t)

    fmask = _gt_to_chw(batch.gt3d).max(axis=1, keepdims=True)
    vfuse = fuse_t(vwm, clip_t, fmask)

    if batch.distortions_on:
        spec = D.sample_pool("training", rng=rng,
                             categories=tcfg.distort_categories,
                             overrides=dict(tcfg.distort_overrides))
        attacked, mask_transform, _, _ = D.apply_t(spec, vfuse, rng)
        tgt3d = np.stack([mask_transform(m) for m in batch.gt3d])
    else:
        attacked, tgt3d = vfuse, batch.gt3d
    tgt_chw = _gt_to_chw(tgt3d)
    tfmask = tgt_chw.max(axis=1, keepdims=True)

    vmask_in = mul(attacked, tfmask)
    wpd = bundle.decoder(vmask_in)
    mpd = bundle.mask_predictor(attacked)

    l_msg = mse(wpd, msgs_f)
    l_mask = mse(mpd, tgt_chw)
    l_dec = add(l_msg, mul(l_mask, tcfg.alpha))
    bd = beta_dec_at(tcfg, step)
    l_total = add(mul(l_enc, tcfg.beta_enc), mul(l_dec, bd))

    report = LossReport(
        step=step, l_enc=l_enc.item(), l_msg=l_msg.item(), l_mask=l_mask.item(),
        l_dec=l_dec.item(), l_total=l_total.item(), lr=lr_at(tcfg, step),
        beta_dec=bd, phase=phase_name(tcfg, step))
    if not math.isfinite(report.l_total):
        _dump_divergence(bundle, report, out_dir)
        raise TrainingDiverged(f"non-finite loss at step {step}: {report}")

    opt.zero_grad()
    l_total.backward()
    opt.step(lr_at(tcfg, step))
    return report


def _dump_divergence(bundle: ModelBundle, report: LossReport, out_dir: str | None):
    if out_dir is None:
        return
    stats = {name: {"norm": float(np.linalg.norm(p.data)),
                    "max": float(np.abs(p.data).max())}
             for name, p in bundle.named_params()}
    path = os.path.join(out_dir, f"divergence_step{report.step}.json")
    with open(path, "w") as f:
        json.dump({"report": asdict(report), "params": stats}, f, indent=1)


def clean_bit_accuracy(bundle: ModelBundle, cfg: MappingConfig, clips: np.ndarray,
                       seed: int = 7, use_jnd: bool = False) -> float:
    """Embed fresh seeded messages on the clips, decode clean, score bits."""
    total = 0.0
    for i, clip in enumerate(clips):
        rng = np.random.default_rng((seed, i))
        msg = rng.integers(0, 2, size=cfg.L, dtype=np.uint8)
        payload = None
        if cfg.uses_mask:
            payload = sample_regime_payload("full", cfg.d_e, cfg.T, cfg.H, cfg.W,
                                            cfg.C_p, rng)
        wm = embed(bundle, cfg, clip, msg, payload, use_jnd=use_jnd)
        fmask = np.ones((cfg.T, cfg.H, cfg.W), dtype=np.uint8)
        fused = fuse(wm, clip, fmask)
        probs = decode(bundle, cfg, fused)
        total += float(((probs >= 0.5).astype(np.uint8) == msg).mean())
    return total / len(clips)


@dataclass
class TrainResult:
    checkpoint: str
    reports: list
    final_bit_acc: float
    steps_run: int
    stopped_early: bool


def fit(cfg: MappingConfig, tcfg: TrainConfig, source, out_dir: str,
        resume: str | None = None, log_name: str = "train_log.ndjson") -> TrainResult:
    """Run the optimizer loop; returns the final checkpoint path.

    Checkpoints land in out_dir every `checkpoint_every` steps plus at
    the end. `resume` continues from a saved checkpoint bitwise.
    """
    os.makedirs(out_dir, exist_ok=True)
    start = 0
    if resume is not None:
        bundle, manifest, opt_state = load_checkpoint(resume)
        start = manifest["step"]
        opt = AdamW(list(bundle.named_params()), tcfg.weight_decay)
        if opt_state is not None:
            opt.load_state(opt_state)
    else:
        bundle = create_bundle(cfg, seed=tcfg.seed, jnd_mu=tcfg.mu)
        opt = AdamW(list(bundle.named_params()), tcfg.weight_decay)

    log_path = os.path.join(out_dir, log_name)
    log_mode = "a" if resume is not None and os.path.exists(log_path) else "w"
    reports: list[LossReport] = []
    stopped = False
    hits = 0
    step = start
    with open(log_path, log_mode) as log:
        for step in range(start, tcfg.steps):
            batch = make_batch(cfg, tcfg, source, step)
            report = train_step(bundle, cfg, tcfg, opt, batch, step, out_dir)
            reports.append(report)
            log.write(report.to_json() + "\n")
            if tcfg.checkpoint_every and (step + 1) % tcfg.checkpoint_every == 0:
                _save(out_dir, f"ckpt_step{step + 1:06d}.zip", bundle, tcfg, opt, step + 1)
            if (tcfg.stop_bit_acc is not None
                    and (step + 1) % tcfg.stop_check_every == 0):
                acc = clean_bit_accuracy(bundle, cfg, source.batch(step, tcfg.batch_size),
                                         use_jnd=step >= tcfg.jnd_start_step)
                hits = hits + 1 if acc >= tcfg.stop_bit_acc else 0
                if hits >= tcfg.stop_patience:
                    stopped = True
                    step += 1
                    break
        else:
            step = tcfg.steps
    final = _save(out_dir, "ckpt_final.zip", bundle, tcfg, opt, step)
    final_acc = clean_bit_accuracy(bundle, cfg, source.batch(0, tcfg.batch_size),
                                   use_jnd=(step - 1) >= tcfg.jnd_start_step and step > 0)
    return TrainResult(final, reports, final_acc, step, stopped)


def _save(out_dir: str, name: str, bundle: ModelBundle, tcfg: TrainConfig,
          opt: AdamW, step: int) -> str:
    path = os.path.join(out_dir, name)
    save_checkpoint(path, bundle, step, phase_name(tcfg, max(0, step - 1)),
                    train_cfg=tcfg.to_dict(), opt_state=opt.state())
    return path
