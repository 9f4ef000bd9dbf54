"""Run configuration: flat sectioned key=value text, strictly validated.

Unknown sections or keys are rejected with their line number so typos
fail fast. Values parse per a fixed schema; `#` starts a comment.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import distort as D
from .mapping import MappingConfig
from .payload import MASK_KINDS
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(v: str) -> bool:
    lv = v.lower()
    if lv in ("true", "1", "yes", "on"):
        return True
    if lv in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_tuple(v: str) -> tuple:
    return tuple(s.strip() for s in v.split(",") if s.strip())


_MAPPING_SCHEMA = {
    "d_e": int, "d_d": int, "L": int, "T": int, "H": int, "W": int,
    "C_tp": int, "C_p": int,
}
_TRAIN_SCHEMA = {
    "steps": int, "lr": float, "warmup_steps": int, "batch_size": int,
    "beta_enc": float, "beta_dec_init": float, "beta_dec_final": float,
    "beta_dec_decay_steps": int, "alpha": float, "jnd_start_step": int,
    "mu": float, "s1": int, "s2": int, "weight_decay": float, "seed": int,
    "delta_max": int, "mask_kinds": _parse_tuple, "distortions": _parse_bool,
    "stop_bit_acc": float, "stop_check_every": int, "stop_patience": int,
}
_IO_SCHEMA = {
    "out_dir": str, "checkpoint_every": int, "data": str, "n_clips": int,
    "eval_seed": int,
}


@dataclass
class IOConfig:
    out_dir: str = "runs/out"
    checkpoint_every: int = 0
    data: str = "synthetic"
    n_clips: int = 8
    eval_seed: int = 0


@dataclass
class RunConfig:
    mapping: MappingConfig = field(default_factory=MappingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    io: IOConfig = field(default_factory=IOConfig)
    distort_categories: tuple | None = None
    distort_overrides: tuple = ()


def _known_override_keys() -> dict:
    keys = {}
    for spec in D.training_pool() + D.evaluation_pool():
        for pname, pval in spec.params.items():
            keys[f"{spec.name}.{pname}"] = type(pval)
    return keys


def parse_config_text(text: str, path: str = "<config>") -> RunConfig:
    sections: dict[str, dict] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in ("mapping", "train", "distort", "io"):
                raise ConfigError(f"{path}:{lineno}: unknown section [{name}]")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside any section")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in current:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        current[key] = (value, lineno)

    def take(section: str, schema: dict) -> dict:
        out = {}
        for key, (value, lineno) in sections.get(section, {}).items():
            if key not in schema:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} "
                                  f"in section [{section}]")
            try:
                out[key] = schema[key](value)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from None
        return out

    mapping_kw = take("mapping", _MAPPING_SCHEMA)
    train_kw = take("train", _TRAIN_SCHEMA)
    io_kw = take("io", _IO_SCHEMA)

    categories = None
    overrides = []
    known = _known_override_keys()
    for key, (value, lineno) in sections.get("distort", {}).items():
        if key == "categories":
            categories = _parse_tuple(value)
            bad = [c for c in categories if c not in D.CATEGORIES]
            if bad:
                raise ConfigError(f"{path}:{lineno}: unknown categories {bad}")
            continue
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown distortion override {key!r}")
        try:
            overrides.append((key, known[key](value)))
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from None

    try:
        mapping = MappingConfig(**mapping_kw)
        if "mask_kinds" in train_kw:
            bad = [k for k in train_kw["mask_kinds"] if k not in MASK_KINDS]
            if bad:
                raise ConfigError(f"{path}: unknown mask kinds {bad}")
        train = TrainConfig(**train_kw, distort_categories=categories,
                            distort_overrides=tuple(overrides))
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None
    io = IOConfig(**io_kw)
    return RunConfig(mapping, train, io, categories, tuple(overrides))


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text, path)
