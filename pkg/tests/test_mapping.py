import numpy as np
import pytest

from vidmark.mapping import (MappingConfig, build_input, build_input_single,
                             clip_to_chw, chw_to_clip, mask_to_chw,
                             output_contract)

REGIME_CASES = [
    ((3, 3), 1, 5),   # (d_e, d_d), C_p, expected C_in with C_tp=1
    ((1, 3), 1, 4),
    ((2, 3), 1, 5),
    ((3, 2), 1, 5),
    ((3, 3), 4, 8),
    ((3, 2), 4, 8),
]


class TestMappingConfig:
    @pytest.mark.parametrize("regime,c_p,c_in", REGIME_CASES)
    def test_channel_arithmetic(self, regime, c_p, c_in):
        cfg = MappingConfig(d_e=regime[0], d_d=regime[1], C_p=c_p, T=2, H=8, W=8, L=4)
        assert cfg.c_in == c_in

    @pytest.mark.parametrize("bad", [(1, 1), (2, 2), (1, 2), (2, 1), (3, 1)])
    def test_unsupported_regimes(self, bad):
        with pytest.raises(ValueError):
            MappingConfig(d_e=bad[0], d_d=bad[1])

    def test_multichannel_needs_3d_embedding(self):
        with pytest.raises(ValueError):
            MappingConfig(d_e=2, d_d=3, C_p=4)

    def test_size_floor(self):
        with pytest.raises(ValueError):
            MappingConfig(H=4, W=32)


class TestBuildInput:
    def setup_method(self):
        self.rng = np.random.default_rng(1)

    def _pieces(self, cfg):
        clip = self.rng.random((1, 3, cfg.T, cfg.H, cfg.W)).astype(np.float32)
        feats = self.rng.random((1, cfg.C_tp, cfg.T, cfg.H, cfg.W)).astype(np.float32)
        mask = (self.rng.random((1, cfg.C_p, cfg.T, cfg.H, cfg.W)) < 0.5).astype(np.float32)
        return clip, feats, mask

    def test_m13_channel_count(self):
        cfg = MappingConfig(d_e=1, d_d=3, T=2, H=8, W=8, C_tp=1, L=4)
        clip, feats, _ = self._pieces(cfg)
        out = build_input(cfg, clip, feats)
        assert out.shape == (1, 4, 2, 8, 8)

    def test_m33_host_channels_preserved(self):
        cfg = MappingConfig(T=2, H=8, W=8, L=4)
        clip, feats, mask = self._pieces(cfg)
        out = build_input(cfg, clip, feats, mask)
        assert out.shape[1] == 5
        assert np.array_equal(out.data[:, :3], clip)
        assert np.array_equal(out.data[:, 3:4], feats)
        assert np.array_equal(out.data[:, 4:], mask)

    def test_m23_mask_constant_in_time(self):
        cfg = MappingConfig(d_e=2, d_d=3, T=3, H=8, W=8, L=4)
        m2 = (np.random.default_rng(2).random((8, 8)) < 0.5).astype(np.uint8)
        chw = mask_to_chw(m2, cfg)
        assert chw.shape == (1, 3, 8, 8)
        for t in range(3):
            assert np.array_equal(chw[0, t], m2)
        clip, feats, _ = self._pieces(cfg)
        out = build_input(cfg, clip, feats, chw[None].astype(np.float32))
        for t in range(1, 3):
            assert np.array_equal(out.data[0, 4, t], out.data[0, 4, 0])

    def test_mask_for_m13_rejected(self):
        cfg = MappingConfig(d_e=1, d_d=3, T=2, H=8, W=8, L=4)
        clip, feats, mask = self._pieces(cfg)
        with pytest.raises(ValueError):
            build_input(cfg, clip, feats, np.zeros((1, 1, 2, 8, 8), np.float32))

    def test_missing_mask_rejected(self):
        cfg = MappingConfig(T=2, H=8, W=8, L=4)
        clip, feats, _ = self._pieces(cfg)
        with pytest.raises(ValueError):
            build_input(cfg, clip, feats)

    def test_shape_mismatch_rejected(self):
        cfg = MappingConfig(T=2, H=8, W=8, L=4)
        clip, feats, mask = self._pieces(cfg)
        with pytest.raises(ValueError):
            build_input(cfg, clip[:, :, :1], feats, mask)

    def test_injective_per_operand(self):
        # perturbing one input element changes exactly one output element
        cfg = MappingConfig(T=2, H=8, W=8, L=4)
        clip, feats, mask = self._pieces(cfg)
        base = build_input(cfg, clip, feats, mask).data
        clip2 = clip.copy()
        clip2[0, 1, 1, 2, 3] += 0.25
        d = build_input(cfg, clip2, feats, mask).data != base
        assert d.sum() == 1
        feats2 = feats.copy()
        feats2[0, 0, 0, 4, 5] += 0.25
        d = build_input(cfg, clip, feats2, mask).data != base
        assert d.sum() == 1
        mask2 = mask.copy()
        mask2[0, 0, 1, 6, 7] = 1 - mask2[0, 0, 1, 6, 7]
        d = build_input(cfg, clip, feats, mask2).data != base
        assert d.sum() == 1


class TestOutputContract:
    def test_frame_wise_for_32(self):
        oc = output_contract(MappingConfig(d_e=3, d_d=2, T=8, H=8, W=8, L=4))
        assert oc.frame_wise
        assert oc.mask_shape == (8, 8, 8, 1)

    def test_volume_for_13(self):
        oc = output_contract(MappingConfig(d_e=1, d_d=3, T=4, H=8, W=8, L=4))
        assert not oc.frame_wise
        assert oc.mask_shape == (4, 8, 8, 1)

    def test_message_length_always(self):
        for de, dd in ((3, 3), (1, 3), (2, 3), (3, 2)):
            oc = output_contract(MappingConfig(d_e=de, d_d=dd, T=2, H=8, W=8, L=9))
            assert oc.message_length == 9


class TestLayout:
    def test_roundtrip(self, rng):
        clip = rng.random((3, 8, 8, 3)).astype(np.float32)
        assert np.array_equal(chw_to_clip(clip_to_chw(clip)), clip)

    def test_build_input_single(self, rng):
        cfg = MappingConfig(T=2, H=8, W=8, L=4)
        clip = rng.random((2, 8, 8, 3)).astype(np.float32)
        feats = rng.random((1, 2, 8, 8)).astype(np.float32)
        mask = np.ones((2, 8, 8), dtype=np.uint8)
        out = build_input_single(cfg, clip, feats, mask)
        assert out.shape == (5, 2, 8, 8)
