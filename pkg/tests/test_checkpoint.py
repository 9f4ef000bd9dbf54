import zipfile

import numpy as np
import pytest

from vidmark.checkpoint import load_checkpoint, save_checkpoint
from vidmark.data import synthesize_clip
from vidmark.mapping import MappingConfig
from vidmark.model import create_bundle, decode, predict_mask
from vidmark.trainer import AdamW


@pytest.fixture
def bundle():
    return create_bundle(MappingConfig(L=4, T=2, H=8, W=8), seed=7)


def test_roundtrip_bitwise(tmp_path, bundle):
    p = tmp_path / "ck.zip"
    save_checkpoint(p, bundle, step=42, phase="all-masks")
    back, manifest, opt = load_checkpoint(p)
    assert manifest["step"] == 42
    assert manifest["phase"] == "all-masks"
    assert opt is None
    for (n1, a), (n2, b) in zip(bundle.named_params(), back.named_params()):
        assert n1 == n2
        assert a.data.tobytes() == b.data.tobytes()


def test_forward_outputs_bitwise_after_reload(tmp_path, bundle):
    clip = synthesize_clip(2, 8, 8, seed=3)
    cfg = bundle.cfg
    before = decode(bundle, cfg, clip)
    mask_before = predict_mask(bundle, cfg, clip)
    p = tmp_path / "ck.zip"
    save_checkpoint(p, bundle, 0, "full-mask")
    back, _, _ = load_checkpoint(p)
    assert np.array_equal(decode(back, cfg, clip), before)
    assert np.array_equal(predict_mask(back, cfg, clip), mask_before)


def test_optimizer_state_roundtrip(tmp_path, bundle):
    opt = AdamW(list(bundle.named_params()), 1e-2)
    for _, p in bundle.named_params():
        p.grad = np.ones_like(p.data)
    opt.step(1e-3)
    path = tmp_path / "ck.zip"
    save_checkpoint(path, bundle, 1, "full-mask", opt_state=opt.state())
    _, manifest, state = load_checkpoint(path)
    assert state["t"] == 1
    for name, _ in bundle.named_params():
        assert np.array_equal(state["m"][name], opt.m[name])
        assert np.array_equal(state["v"][name], opt.v[name])


def test_mapping_config_restored(tmp_path):
    cfg = MappingConfig(d_e=3, d_d=2, L=6, T=2, H=8, W=16, C_p=3)
    b = create_bundle(cfg, seed=0)
    p = tmp_path / "ck.zip"
    save_checkpoint(p, b, 0, "full-mask", train_cfg={"steps": 9})
    back, manifest, _ = load_checkpoint(p)
    assert back.cfg == cfg
    assert manifest["train"] == {"steps": 9}


def test_missing_tensor_rejected(tmp_path, bundle):
    p = tmp_path / "ck.zip"
    save_checkpoint(p, bundle, 0, "full-mask")
    import json
    with zipfile.ZipFile(p) as z:
        manifest = json.loads(z.read("manifest.json"))
        entries = {n: z.read(n) for n in z.namelist()}
    victim = f"tensors/{manifest['tensors'][0]}.dimt"
    manifest["tensors"] = manifest["tensors"][1:]
    del entries[victim]
    entries["manifest.json"] = json.dumps(manifest).encode()
    with zipfile.ZipFile(p, "w") as z:
        for n, blob in entries.items():
            z.writestr(n, blob)
    with pytest.raises(ValueError, match="missing tensor"):
        load_checkpoint(p)


def test_non_checkpoint_rejected(tmp_path):
    p = tmp_path / "bogus.zip"
    with zipfile.ZipFile(p, "w") as z:
        z.writestr("manifest.json", "{}")
    with pytest.raises(ValueError):
        load_checkpoint(p)
