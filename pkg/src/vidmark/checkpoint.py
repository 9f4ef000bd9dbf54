"""Checkpoint archive: a stored (uncompressed) zip holding one DIMT
tensor per parameter (plus optimizer moments as opt.m.*/opt.v.*), the
mapping config, the step counter, and the curriculum phase. Reload
reproduces forward passes bitwise for float32 bundles.
"""
from __future__ import annotations

import json
import zipfile

import numpy as np

from .mapping import MappingConfig
from .model import ModelBundle, create_bundle
from .tensorfile import tensor_from_bytes, tensor_to_bytes

FORMAT = "vidmark-checkpoint"
VERSION = 1


def save_checkpoint(path, bundle: ModelBundle, step: int, phase: str,
                    train_cfg: dict | None = None, opt_state: dict | None = None) -> None:
    names = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as z:
        for name, p in bundle.named_params():
            names.append(name)
            z.writestr(f"tensors/{name}.dimt", tensor_to_bytes(p.data))
        opt_meta = None
        if opt_state is not None:
            opt_meta = {"t": opt_state["t"]}
            for name, arr in opt_state["m"].items():
                z.writestr(f"tensors/opt.m.{name}.dimt", tensor_to_bytes(arr))
            for name, arr in opt_state["v"].items():
                z.writestr(f"tensors/opt.v.{name}.dimt", tensor_to_bytes(arr))
        manifest = {
            "format": FORMAT,
            "version": VERSION,
            "mapping": bundle.cfg.to_dict(),
            "jnd_mu": bundle.jnd_mu,
            "step": int(step),
            "phase": phase,
            "train": train_cfg,
            "tensors": names,
            "opt": opt_meta,
        }
        z.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(path, dtype=np.float32):
    """Returns (bundle, manifest dict, opt_state or None)."""
    with zipfile.ZipFile(path, "r") as z:
        manifest = json.loads(z.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path} is not a {FORMAT} archive")
        cfg = MappingConfig(**manifest["mapping"])
        bundle = create_bundle(cfg, seed=0, dtype=dtype, jnd_mu=manifest["jnd_mu"])
        stored = set(manifest["tensors"])
        for name, p in bundle.named_params():
            if name not in stored:
                raise ValueError(f"checkpoint is missing tensor {name}")
            arr = tensor_from_bytes(z.read(f"tensors/{name}.dimt"))
            if arr.shape != p.data.shape:
                raise ValueError(f"tensor {name} has shape {arr.shape}, "
                                 f"expected {p.data.shape}")
            p.data = arr.astype(dtype)
        opt_state = None
        if manifest.get("opt") is not None:
            m, v = {}, {}
            for name, _ in bundle.named_params():
                m[name] = tensor_from_bytes(z.read(f"tensors/opt.m.{name}.dimt")).astype(dtype)
                v[name] = tensor_from_bytes(z.read(f"tensors/opt.v.{name}.dimt")).astype(dtype)
            opt_state = {"t": manifest["opt"]["t"], "m": m, "v": v}
    return bundle, manifest, opt_state
