import json
import os

import numpy as np
import pytest

from vidmark.checkpoint import save_checkpoint
from vidmark.cli import main
from vidmark.data import load_clip, save_clip, synthesize_clip
from vidmark.mapping import MappingConfig
from vidmark.model import create_bundle
from vidmark.payload import bits_to_hex, sample_message
from vidmark.tensorfile import read_tensor, write_tensor

CFG_TEXT = """
[mapping]
L = 4
T = 2
H = 8
W = 8

[train]
steps = {steps}
lr = 1e-3
warmup_steps = 2
batch_size = 2
s1 = 3
s2 = 6
beta_dec_decay_steps = 10
jnd_start_step = 1000
seed = 0
delta_max = 1

[io]
out_dir = {out}
data = synthetic
n_clips = 2
"""


@pytest.fixture
def ckpt(tmp_path):
    cfg = MappingConfig(L=4, T=2, H=8, W=8)
    bundle = create_bundle(cfg, seed=3)
    path = tmp_path / "ck.zip"
    save_checkpoint(path, bundle, step=0, phase="full-mask",
                    train_cfg={"jnd_start_step": 1000})
    return str(path)


@pytest.fixture
def clip_file(tmp_path):
    clip = synthesize_clip(2, 8, 8, seed=5)
    p = tmp_path / "clip.dimt"
    save_clip(str(p), clip)
    return str(p)


def write_cfg(tmp_path, steps):
    p = tmp_path / "run.cfg"
    p.write_text(CFG_TEXT.format(steps=steps, out=tmp_path / "run"))
    return str(p)


class TestTrain:
    def test_short_run_produces_artifacts(self, tmp_path, capsys):
        rc = main(["train", write_cfg(tmp_path, 4)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "clean_train_bit_accuracy" in out
        assert (tmp_path / "run" / "ckpt_final.zip").exists()
        assert (tmp_path / "run" / "train_log.ndjson").exists()

    def test_zero_steps_initial_checkpoint_only(self, tmp_path):
        rc = main(["train", write_cfg(tmp_path, 0)])
        assert rc == 0
        files = os.listdir(tmp_path / "run")
        assert "ckpt_final.zip" in files

    def test_missing_config_exit_2(self, capsys):
        assert main(["train", "/nope/missing.cfg"]) == 2

    def test_bad_config_exit_2(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[mapping]\nwat = 1\n")
        assert main(["train", str(p)]) == 2


class TestEmbedExtract:
    def test_embed_writes_fused_and_psnr(self, ckpt, clip_file, tmp_path, capsys):
        msg = bits_to_hex(sample_message(4, 9))
        out = tmp_path / "wm.dimt"
        mask = np.ones((2, 8, 8), dtype=np.uint8)
        write_tensor(tmp_path / "mask.dimt", mask)
        rc = main(["embed", ckpt, clip_file, msg, "--mask",
                   str(tmp_path / "mask.dimt"), "--out", str(out)])
        assert rc == 0
        assert "psnr_db:" in capsys.readouterr().out
        assert read_tensor(out).shape == (2, 8, 8, 3)

    def test_embed_missing_mask_exit_2(self, ckpt, clip_file, tmp_path):
        assert main(["embed", ckpt, clip_file, "f", "--out",
                     str(tmp_path / "x.dimt")]) == 2

    def test_bad_hex_exit_2(self, ckpt, clip_file, tmp_path):
        assert main(["embed", ckpt, clip_file, "zz", "--out",
                     str(tmp_path / "x.dimt")]) == 2

    def test_mu_zero_checkpoint_embeds_identity(self, tmp_path, clip_file):
        cfg = MappingConfig(L=4, T=2, H=8, W=8)
        bundle = create_bundle(cfg, seed=3, jnd_mu=0.0)
        ck = tmp_path / "mu0.zip"
        save_checkpoint(ck, bundle, 0, "full-mask")
        mask = np.ones((2, 8, 8), dtype=np.uint8)
        write_tensor(tmp_path / "m.dimt", mask)
        out = tmp_path / "out.dimt"
        rc = main(["embed", str(ck), clip_file, "a", "--mask",
                   str(tmp_path / "m.dimt"), "--out", str(out)])
        assert rc == 0
        assert np.array_equal(read_tensor(out), load_clip(clip_file))

    def test_extract_prints_hex_and_mask(self, ckpt, clip_file, tmp_path, capsys):
        rc = main(["extract", ckpt, clip_file, "--out-mask",
                   str(tmp_path / "est.dimt")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "message:" in out and "bits: 4" in out
        est = read_tensor(tmp_path / "est.dimt")
        assert est.shape == (2, 8, 8, 1)
        assert est.dtype == np.uint8


class TestLocalizeOrder:
    def test_localize_reports_iou(self, ckpt, clip_file, tmp_path, capsys):
        truth = np.ones((2, 8, 8), dtype=np.uint8)
        write_tensor(tmp_path / "truth.dimt", truth)
        rc = main(["localize", ckpt, clip_file, "--out-mask",
                   str(tmp_path / "m.dimt"), "--truth", str(tmp_path / "truth.dimt")])
        assert rc == 0
        assert "iou:" in capsys.readouterr().out

    def test_order_requires_multichannel(self, ckpt, clip_file):
        assert main(["order", ckpt, clip_file]) == 2

    def test_order_outputs_permutation(self, tmp_path, clip_file, capsys):
        cfg = MappingConfig(L=4, T=2, H=8, W=8, C_p=2)
        bundle = create_bundle(cfg, seed=1)
        ck = tmp_path / "mc.zip"
        save_checkpoint(ck, bundle, 0, "full-mask")
        rc = main(["order", str(ck), clip_file])
        assert rc == 0
        data = json.loads(capsys.readouterr().out)
        assert len(data["position_to_frame"]) == 2


class TestEvalPlotBench:
    @pytest.fixture
    def dataset(self, tmp_path):
        d = tmp_path / "ds"
        d.mkdir()
        for i in range(2):
            save_clip(str(d / f"clip{i}.dimt"), synthesize_clip(2, 8, 8, seed=i))
        return str(d)

    def test_eval_emits_all_categories(self, ckpt, dataset, tmp_path, capsys,
                                       monkeypatch):
        monkeypatch.delenv("VIDMARK_CODEC", raising=False)
        monkeypatch.setattr("shutil.which", lambda n: None)
        out = tmp_path / "report"
        rc = main(["eval", ckpt, dataset, "--out", str(out), "--seed", "1"])
        assert rc == 0
        text = (out / "report.txt").read_text()
        for cat in ("valuemetric", "geometric", "frame-level", "compression"):
            assert cat in text
        assert "unavailable" in text  # no codec in the sandbox
        rows = (out / "report.csv").read_text().splitlines()
        assert rows[0].startswith("distortion,")
        assert len(rows) > 10

    def test_eval_deterministic(self, ckpt, dataset, tmp_path, monkeypatch):
        monkeypatch.delenv("VIDMARK_CODEC", raising=False)
        monkeypatch.setattr("shutil.which", lambda n: None)
        outs = []
        for d in ("r1", "r2"):
            main(["eval", ckpt, dataset, "--out", str(tmp_path / d), "--seed", "7"])
            outs.append((tmp_path / d / "report.csv").read_text())
        assert outs[0] == outs[1]

    def test_plot_reproduces_numbers(self, tmp_path):
        report = tmp_path / "report.csv"
        report.write_text(
            "distortion,category,available,bit_acc,iou,miou\n"
            "clean,clean,1,0.990000,0.950000,nan\n"
            "gaussian_noise,valuemetric,1,0.875000,0.812500,nan\n")
        bins = tmp_path / "bins.csv"
        bins.write_text("bin,count,bit_acc,iou\n3,2,0.750000,0.500000\n")
        out = tmp_path / "charts"
        rc = main(["plot", str(report), "--bins", str(bins), "--out", str(out)])
        assert rc == 0
        chart = (out / "chart_distortions.csv").read_text().splitlines()
        assert "clean,0.990000,0.950000" in chart
        assert "gaussian_noise,0.875000,0.812500" in chart
        bchart = (out / "chart_mask_ratio.csv").read_text().splitlines()
        assert "3,0.750000,0.500000" in bchart
        assert (out / "distortions.png").exists()
        assert (out / "mask_ratio.png").exists()

    def test_bench_reports_positive_fps(self, ckpt, capsys):
        rc = main(["bench", ckpt, "--clips", "2", "--backends"])
        assert rc == 0
        out = capsys.readouterr().out
        lines = [ln for ln in out.splitlines()
                 if ln.startswith(("numba", "numpy"))]
        assert lines, out
        for ln in lines:
            name, embed_fps, extract_fps = ln.split()
            assert float(embed_fps) > 0 and float(extract_fps) > 0
