import numpy as np
import pytest

from vidmark.data import (DirectorySource, SyntheticSource, load_clip,
                          save_clip, synthesize_clip)


def test_synthetic_clip_contract():
    clip = synthesize_clip(4, 16, 16, seed=0)
    assert clip.shape == (4, 16, 16, 3)
    assert clip.dtype == np.float32
    assert clip.min() >= 0.0 and clip.max() <= 1.0
    assert np.array_equal(clip, synthesize_clip(4, 16, 16, seed=0))
    assert not np.array_equal(clip, synthesize_clip(4, 16, 16, seed=1))


def test_synthetic_clip_has_motion():
    clip = synthesize_clip(4, 16, 16, seed=2)
    assert not np.array_equal(clip[0], clip[1])


def test_source_cycles_fixed_roster():
    src = SyntheticSource(2, 8, 8, n_clips=2, seed=1)
    b0 = src.batch(0, 2)
    b1 = src.batch(1, 2)
    assert b0.shape == (2, 2, 8, 8, 3)
    assert np.array_equal(b0, b1)  # n_clips == batch_size: overfit batches


def test_source_cycles_larger_roster():
    src = SyntheticSource(2, 8, 8, n_clips=3, seed=1)
    b0 = src.batch(0, 2)
    b1 = src.batch(1, 2)
    assert not np.array_equal(b0, b1)
    assert np.array_equal(src.batch(0, 2), b0)


def test_clip_roundtrip_dimt(tmp_path):
    clip = synthesize_clip(2, 8, 8, seed=3)
    p = tmp_path / "c.dimt"
    save_clip(str(p), clip)
    assert np.array_equal(load_clip(str(p)), clip)


def test_clip_roundtrip_frame_dir(tmp_path):
    clip = synthesize_clip(3, 8, 8, seed=4)
    d = tmp_path / "frames"
    save_clip(str(d), clip, as_frames=True)
    back = load_clip(str(d))
    assert back.shape == clip.shape
    assert np.abs(back - clip).max() <= 1.0 / 255.0  # 8-bit quantization only


def test_directory_source(tmp_path):
    for i in range(2):
        save_clip(str(tmp_path / f"c{i}.dimt"), synthesize_clip(2, 8, 8, seed=i))
    src = DirectorySource(str(tmp_path))
    assert len(src.clips) == 2
    assert src.batch(0, 2).shape == (2, 2, 8, 8, 3)


def test_directory_source_empty(tmp_path):
    with pytest.raises(ValueError):
        DirectorySource(str(tmp_path))


def test_load_clip_rejects_bad_shape(tmp_path):
    from vidmark.tensorfile import write_tensor
    write_tensor(tmp_path / "bad.dimt", np.zeros((4, 4), np.float32))
    with pytest.raises(ValueError):
        load_clip(str(tmp_path / "bad.dimt"))
