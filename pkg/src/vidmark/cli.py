"""Command-line surface.

Subcommands: train, embed, extract, localize, order, eval, plot, bench.
Exit codes: 0 success, 1 runtime failure, 2 usage/config error. The
H.264 bridge is resolved via the VIDMARK_CODEC environment variable;
kernel backend via VIDMARK_BACKEND.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import kernels
from .checkpoint import load_checkpoint
from .config import ConfigError, load_config
from .data import DirectorySource, SyntheticSource, load_clip
from .distort import CodecUnavailable
from .metrics import evaluate, iou as iou_metric, psnr as psnr_metric, recover_order
from .model import decode, embed, fuse, hard_bits, predict_mask
from .payload import bits_to_hex, build_codebook, ensure_binary, hex_to_bits
from .tensorfile import read_tensor, write_tensor
from .trainer import TrainingDiverged, fit


def _load_bundle(path):
    bundle, manifest, _ = load_checkpoint(path)
    return bundle, manifest


def _jnd_active(manifest, mode: str) -> bool:
    if mode == "on":
        return True
    if mode == "off":
        return False
    train = manifest.get("train") or {}
    return manifest.get("step", 0) >= train.get("jnd_start_step", 0)


def _fusion_mask_from(payload_mask, cfg):
    if payload_mask is None:
        return np.ones((cfg.T, cfg.H, cfg.W), dtype=np.uint8)
    m = np.asarray(payload_mask)
    if cfg.d_e == 2:
        m = np.broadcast_to(m, (cfg.T,) + m.shape)
    if m.ndim == 4:
        m = m.max(axis=-1)
    return m.astype(np.uint8)


def cmd_train(args) -> int:
    run = load_config(args.config)
    tcfg = dataclasses.replace(run.train, checkpoint_every=run.io.checkpoint_every)
    if run.io.data == "synthetic":
        source = SyntheticSource(run.mapping.T, run.mapping.H, run.mapping.W,
                                 run.io.n_clips, seed=tcfg.seed)
    else:
        source = DirectorySource(run.io.data)
    result = fit(run.mapping, tcfg, source, run.io.out_dir, resume=args.resume)
    print(f"checkpoint: {result.checkpoint}")
    print(f"steps_run: {result.steps_run} (early stop: {result.stopped_early})")
    print(f"clean_train_bit_accuracy: {result.final_bit_acc:.6f}")
    return 0


def _read_mask(path):
    mask = read_tensor(path)
    return ensure_binary(mask.astype(np.uint8))


def cmd_embed(args) -> int:
    bundle, manifest = _load_bundle(args.checkpoint)
    cfg = bundle.cfg
    clip = load_clip(args.clip)
    if clip.shape != (cfg.T, cfg.H, cfg.W, 3):
        raise ValueError(f"clip shape {clip.shape} does not match checkpoint "
                         f"config {(cfg.T, cfg.H, cfg.W, 3)}")
    msg = hex_to_bits(args.message, cfg.L)
    payload_mask = _read_mask(args.mask) if args.mask else None
    if cfg.uses_mask and payload_mask is None:
        raise ValueError(f"{cfg.regime} requires --mask")
    wm = embed(bundle, cfg, clip, msg, payload_mask,
               use_jnd=_jnd_active(manifest, args.jnd))
    fused = fuse(wm, clip, _fusion_mask_from(payload_mask, cfg))
    write_tensor(args.out, fused.astype(np.float32))
    print(f"psnr_db: {psnr_metric(fused, clip):.4f}")
    print(f"out: {args.out}")
    return 0


def cmd_extract(args) -> int:
    bundle, _ = _load_bundle(args.checkpoint)
    cfg = bundle.cfg
    clip = load_clip(args.clip)
    est = predict_mask(bundle, cfg, clip)
    dec_mask = (est.max(axis=-1) >= 0.5).astype(np.float32)
    if args.use_truth_mask:
        dec_mask = _fusion_mask_from(_read_mask(args.use_truth_mask), cfg).astype(np.float32)
    probs = decode(bundle, cfg, clip * dec_mask[..., None])
    bits = hard_bits(probs)
    print(f"message: {bits_to_hex(bits)}")
    print(f"bits: {cfg.L}")
    if args.out_mask:
        write_tensor(args.out_mask, (est >= 0.5).astype(np.uint8))
        print(f"mask: {args.out_mask}")
    return 0


def cmd_localize(args) -> int:
    bundle, _ = _load_bundle(args.checkpoint)
    cfg = bundle.cfg
    clip = load_clip(args.clip)
    est = predict_mask(bundle, cfg, clip)
    write_tensor(args.out_mask, (est >= 0.5).astype(np.uint8))
    print(f"mask: {args.out_mask}")
    if args.truth:
        truth = _read_mask(args.truth)
        if truth.ndim == 3:
            score = iou_metric(est.max(axis=-1), truth)
        else:
            score = iou_metric(est, truth)
        print(f"iou: {score:.6f}")
    return 0


def cmd_order(args) -> int:
    bundle, _ = _load_bundle(args.checkpoint)
    cfg = bundle.cfg
    if cfg.C_p < 2:
        raise ValueError("temporal order recovery needs a multi-channel "
                         f"checkpoint (C_p > 1), got C_p={cfg.C_p}")
    clip = load_clip(args.clip)
    est = predict_mask(bundle, cfg, clip)
    codebook = build_codebook(cfg.T, cfg.C_p)
    order = recover_order(est, codebook)
    print(json.dumps({"position_to_frame": order}))
    return 0


def cmd_eval(args) -> int:
    bundle, manifest = _load_bundle(args.checkpoint)
    cfg = bundle.cfg
    source = DirectorySource(args.dataset)
    note = (f"desk-scale config T={cfg.T} H={cfg.H} W={cfg.W} L={cfg.L}; "
            f"checkpoint step {manifest.get('step')}")
    report = evaluate(bundle, cfg, source.clips, phase=args.preset, seed=args.seed,
                      use_predicted_mask=not args.truth_mask,
                      use_jnd=_jnd_active(manifest, args.jnd), config_note=note)
    os.makedirs(args.out, exist_ok=True)
    text_path = os.path.join(args.out, "report.txt")
    with open(text_path, "w") as f:
        f.write(report.to_text())
    with open(os.path.join(args.out, "report.csv"), "w") as f:
        f.write("\n".join(report.to_csv_rows()) + "\n")
    with open(os.path.join(args.out, "bins.csv"), "w") as f:
        f.write("\n".join(report.bins_csv_rows()) + "\n")
    sys.stdout.write(report.to_text())
    print(f"written: {args.out}/report.txt report.csv bins.csv")
    return 0


def _read_csv(path) -> list[dict]:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(args.out, exist_ok=True)
    rows = _read_csv(args.report)
    names = [r["distortion"] for r in rows]
    accs = [float(r["bit_acc"]) for r in rows]
    ious = [float(r["iou"]) for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(12, 4))
    for ax, vals, label in ((axes[0], accs, "bit accuracy"), (axes[1], ious, "IoU")):
        ax.bar(range(len(names)), vals)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(label)
    fig.tight_layout()
    fig.savefig(os.path.join(args.out, "distortions.png"), dpi=120)
    with open(os.path.join(args.out, "chart_distortions.csv"), "w") as f:
        f.write("distortion,bit_acc,iou\n")
        for n, a, i in zip(names, accs, ious):
            f.write(f"{n},{a:.6f},{i:.6f}\n")

    if args.bins and os.path.exists(args.bins):
        brows = _read_csv(args.bins)
        xs = [int(r["bin"]) * 10 + 5 for r in brows]
        fig2, ax2 = plt.subplots(figsize=(6, 4))
        ax2.plot(xs, [float(r["bit_acc"]) for r in brows], marker="o", label="bit accuracy")
        ax2.plot(xs, [float(r["iou"]) for r in brows], marker="s", label="IoU")
        ax2.set_xlabel("mask ratio (%)")
        ax2.set_ylim(0, 1.05)
        ax2.legend()
        fig2.tight_layout()
        fig2.savefig(os.path.join(args.out, "mask_ratio.png"), dpi=120)
        with open(os.path.join(args.out, "chart_mask_ratio.csv"), "w") as f:
            f.write("bin,bit_acc,iou\n")
            for r in brows:
                f.write(f"{r['bin']},{float(r['bit_acc']):.6f},{float(r['iou']):.6f}\n")
    print(f"charts written under {args.out}")
    return 0


def cmd_bench(args) -> int:
    bundle, manifest = _load_bundle(args.checkpoint)
    cfg = bundle.cfg
    source = SyntheticSource(cfg.T, cfg.H, cfg.W, args.clips, seed=1)
    rng = np.random.default_rng(0)
    backends = [kernels.active_backend()]
    if args.backends:
        backends = list(kernels.available_backends())
    print(f"config: {cfg.regime} T={cfg.T} H={cfg.H} W={cfg.W} L={cfg.L}")
    print("backend    embed_fps    extract_fps")
    for backend in backends:
        kernels.set_backend(backend)
        msg = rng.integers(0, 2, cfg.L, dtype=np.uint8)
        mask = np.ones((cfg.T, cfg.H, cfg.W), dtype=np.uint8) if cfg.uses_mask else None
        wm = embed(bundle, cfg, source.clips[0], msg, mask, use_jnd=False)  # warm
        t0 = time.perf_counter()
        for clip in source.clips:
            wm = embed(bundle, cfg, clip, msg, mask, use_jnd=False)
        embed_fps = args.clips * cfg.T / (time.perf_counter() - t0)
        decode(bundle, cfg, wm)
        predict_mask(bundle, cfg, wm)
        t0 = time.perf_counter()
        for clip in source.clips:
            predict_mask(bundle, cfg, clip)
            decode(bundle, cfg, clip)
        extract_fps = args.clips * cfg.T / (time.perf_counter() - t0)
        print(f"{backend:10s} {embed_fps:10.2f}   {extract_fps:10.2f}")
    kernels.set_backend(os.environ.get("VIDMARK_BACKEND", "auto"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidmark",
                                description="multi-dimensional video watermarking")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("config")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="watermark a clip")
    e.add_argument("checkpoint")
    e.add_argument("clip")
    e.add_argument("message", help="payload bits as hex (length from checkpoint)")
    e.add_argument("--mask", default=None, help="payload mask tensor (DIMT)")
    e.add_argument("--out", required=True)
    e.add_argument("--jnd", choices=("auto", "on", "off"), default="auto")
    e.set_defaults(func=cmd_embed)

    x = sub.add_parser("extract", help="recover the message from a clip")
    x.add_argument("checkpoint")
    x.add_argument("clip")
    x.add_argument("--out-mask", default=None)
    x.add_argument("--use-truth-mask", default=None,
                   help="decode from this ground-truth mask instead of the prediction")
    x.set_defaults(func=cmd_extract)

    lo = sub.add_parser("localize", help="predict the embedded region")
    lo.add_argument("checkpoint")
    lo.add_argument("clip")
    lo.add_argument("--out-mask", required=True)
    lo.add_argument("--truth", default=None, help="ground-truth mask for IoU")
    lo.set_defaults(func=cmd_localize)

    o = sub.add_parser("order", help="recover temporal frame order")
    o.add_argument("checkpoint")
    o.add_argument("clip")
    o.set_defaults(func=cmd_order)

    ev = sub.add_parser("eval", help="run the evaluation distortion pool")
    ev.add_argument("checkpoint")
    ev.add_argument("dataset", help="directory of clips")
    ev.add_argument("--out", required=True)
    ev.add_argument("--preset", default="evaluation", choices=("evaluation",))
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--truth-mask", action="store_true",
                    help="decode from ground-truth masks (ablation)")
    ev.add_argument("--jnd", choices=("auto", "on", "off"), default="auto")
    ev.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="charts from eval report CSVs")
    pl.add_argument("report", help="report.csv from eval")
    pl.add_argument("--bins", default=None, help="bins.csv from eval")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    b = sub.add_parser("bench", help="embed/extract throughput")
    b.add_argument("checkpoint")
    b.add_argument("--clips", type=int, default=8)
    b.add_argument("--backends", action="store_true",
                   help="compare numba and numpy kernel backends")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingDiverged, CodecUnavailable, RuntimeError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
