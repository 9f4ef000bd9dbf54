import numpy as np
import pytest

from vidmark.payload import (CapacityError, bits_to_hex, build_codebook,
                             encode_multichannel, generate_mask,
                             generate_mask_sequence, hex_to_bits,
                             mask_area_ratio, sample_message,
                             sample_regime_payload, shift_mask)


def shift_oracle(mask, dx, dy):
    """Naive per-cell loop shift."""
    out = np.zeros_like(mask)
    H, W = mask.shape[:2]
    for y in range(H):
        for x in range(W):
            if mask[y, x].any() if mask.ndim == 3 else mask[y, x]:
                ny, nx = y + dy, x + dx
                if 0 <= ny < H and 0 <= nx < W:
                    out[ny, nx] = mask[y, x]
    return out


def connected_components(mask):
    """BFS component count + cells of each component."""
    H, W = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y in range(H):
        for x in range(W):
            if mask[y, x] and not seen[y, x]:
                stack, cells = [(y, x)], []
                seen[y, x] = True
                while stack:
                    cy, cx = stack.pop()
                    cells.append((cy, cx))
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < H and 0 <= nx < W and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
                comps.append(cells)
    return comps


class TestSampleMessage:
    def test_single_bit(self):
        assert sample_message(1, 3)[0] in (0, 1)

    def test_deterministic(self):
        assert np.array_equal(sample_message(64, 11), sample_message(64, 11))

    def test_fair_coin_mean(self):
        # binomial bound: P(mean outside [0.2, 0.8]) < 1e-6 for L=64
        m = sample_message(64, 5).mean()
        assert 0.2 <= m <= 0.8

    def test_invalid_length(self):
        with pytest.raises(ValueError):
            sample_message(0, 0)


class TestHexCodec:
    def test_roundtrip(self):
        for L in (1, 4, 7, 16, 64):
            bits = sample_message(L, L)
            assert np.array_equal(hex_to_bits(bits_to_hex(bits), L), bits)

    def test_known_value(self):
        assert bits_to_hex(np.array([1, 0, 1, 0], dtype=np.uint8)) == "a"

    def test_bad_length(self):
        with pytest.raises(ValueError):
            hex_to_bits("ff", 16)


class TestGenerateMask:
    def test_full_is_all_ones(self):
        assert (generate_mask("full", 8, 8) == 1).all()

    def test_rectangular_single_filled_bbox(self):
        # oracle: exactly one connected component whose area fills its bbox
        for seed in range(20):
            m = generate_mask("rectangular", 16, 16, seed)
            comps = connected_components(m)
            assert len(comps) == 1
            ys = [c[0] for c in comps[0]]
            xs = [c[1] for c in comps[0]]
            bbox_area = (max(ys) - min(ys) + 1) * (max(xs) - min(xs) + 1)
            assert len(comps[0]) == bbox_area
            assert int(m.sum()) == bbox_area

    def test_irregular_nonempty_not_full(self):
        for seed in range(20):
            m = generate_mask("irregular", 16, 16, seed)
            assert 0 < int(m.sum()) < 16 * 16

    def test_segmented_connected(self):
        for seed in range(10):
            m = generate_mask("segmented", 16, 16, seed)
            comps = connected_components(m)
            assert len(comps) == 1
            assert m.sum() > 0

    def test_too_small_raises(self):
        with pytest.raises(ValueError):
            generate_mask("full", 4, 4)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_mask("oval", 16, 16)

    def test_area_ratio_bounds(self):
        for kind in ("full", "rectangular", "irregular", "segmented"):
            r = mask_area_ratio(generate_mask(kind, 16, 16, 3))
            assert 0 < r <= 1
        assert mask_area_ratio(generate_mask("full", 8, 8)) == 1.0


class TestShiftMask:
    def test_zero_shift_identity(self, rng):
        m = (rng.random((6, 7)) < 0.4).astype(np.uint8)
        assert np.array_equal(shift_mask(m, 0, 0), m)

    def test_single_pixel(self):
        m = np.zeros((4, 4), dtype=np.uint8)
        m[1, 1] = 1
        out = shift_mask(m, 1, 0)
        expect = np.zeros((4, 4), dtype=np.uint8)
        expect[1, 2] = 1
        assert np.array_equal(out, expect)

    def test_everything_out_of_bounds(self):
        m = np.ones((4, 4), dtype=np.uint8)
        assert shift_mask(m, 4, 0).sum() == 0

    def test_matches_loop_oracle(self, rng):
        for _ in range(100):
            H, W = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            m = (rng.random((H, W)) < 0.5).astype(np.uint8)
            dx, dy = int(rng.integers(-10, 11)), int(rng.integers(-10, 11))
            assert np.array_equal(shift_mask(m, dx, dy), shift_oracle(m, dx, dy))

    def test_inverse_on_surviving_cells(self, rng):
        m = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        dx, dy = 3, -2
        back = shift_mask(shift_mask(m, dx, dy), -dx, -dy)
        ys, xs = np.mgrid[0:8, 0:8]
        survived = ((ys + dy >= 0) & (ys + dy < 8) & (xs + dx >= 0) & (xs + dx < 8))
        assert np.array_equal(back[survived], m[survived])
        assert not back[~survived].any()

    def test_multichannel(self):
        m = np.zeros((4, 4, 2), dtype=np.uint8)
        m[1, 1] = (1, 0)
        out = shift_mask(m, 0, 1)
        assert tuple(out[2, 1]) == (1, 0)


def explain_pair(prev, cur, delta_max):
    """Exhaustive (direction, step) search: is cur a shift of prev?"""
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if (dx, dy) == (0, 0):
                continue
            for k in range(delta_max + 1):
                if np.array_equal(shift_mask(prev, k * dx, k * dy), cur):
                    return True
    return False


class TestMaskSequence:
    def test_single_frame(self):
        m = generate_mask("rectangular", 8, 8, 1)
        seq = generate_mask_sequence(m, 1, 3, 0)
        assert seq.shape == (1, 8, 8)
        assert np.array_equal(seq[0], m)

    def test_zero_delta_identical(self):
        m = generate_mask("irregular", 8, 8, 2)
        seq = generate_mask_sequence(m, 8, 0, 0)
        assert all(np.array_equal(seq[t], m) for t in range(8))

    def test_every_pair_explained(self):
        m = np.zeros((8, 8), dtype=np.uint8)
        m[3, 3] = 1
        for seed in range(10):
            seq = generate_mask_sequence(m, 8, 2, seed)
            assert seq.shape[0] == 8
            for t in range(8):
                assert seq[t].any()
            for t in range(1, 8):
                assert explain_pair(seq[t - 1], seq[t], 2)

    def test_empty_initial_raises(self):
        with pytest.raises(ValueError):
            generate_mask_sequence(np.zeros((8, 8), dtype=np.uint8), 4, 1)


class TestCodebook:
    def test_minimal(self):
        cb = build_codebook(1, 1)
        assert cb.codes.tolist() == [[1]]

    def test_binary_enumeration(self):
        # oracle: binary representation of 1..8, LSB first
        cb = build_codebook(8, 4)
        for t in range(8):
            expect = [(t + 1) >> c & 1 for c in range(4)]
            assert cb.codes[t].tolist() == expect

    def test_capacity_exceeded(self):
        with pytest.raises(CapacityError):
            build_codebook(16, 4)
        build_codebook(15, 4)  # boundary fits

    def test_distinct_nonzero(self):
        cb = build_codebook(7, 3)
        words = {tuple(c) for c in cb.codes}
        assert len(words) == 7
        assert (0, 0, 0) not in words


class TestEncodeMultichannel:
    def test_identity_code(self):
        seq = np.ones((1, 4, 4), dtype=np.uint8)
        out = encode_multichannel(seq, build_codebook(1, 1))
        assert out.shape == (1, 4, 4, 1)
        assert (out == 1).all()

    def test_two_frame_product(self):
        from vidmark.payload import FrameCodebook
        seq = np.ones((2, 4, 4), dtype=np.uint8)
        cb = FrameCodebook(np.array([[1, 0], [0, 1]], dtype=np.uint8))
        out = encode_multichannel(seq, cb)
        assert (out[0, :, :, 0] == 1).all() and (out[0, :, :, 1] == 0).all()
        assert (out[1, :, :, 0] == 0).all() and (out[1, :, :, 1] == 1).all()

    def test_inactive_cells_zero_in_all_channels(self):
        seq = np.zeros((2, 4, 4), dtype=np.uint8)
        seq[:, 1, 1] = 1
        out = encode_multichannel(seq, build_codebook(2, 2))
        assert not out[:, 0, 0].any()
        # per-frame: active cells carry exactly the frame's codeword
        cb = build_codebook(2, 2)
        for t in range(2):
            assert tuple(out[t, 1, 1]) == tuple(cb.codes[t])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            encode_multichannel(np.ones((3, 4, 4), dtype=np.uint8), build_codebook(2, 2))


class TestRegimePayload:
    def test_shapes(self, rng):
        assert sample_regime_payload("full", 1, 4, 8, 8, 1, rng) is None
        m2 = sample_regime_payload("rectangular", 2, 4, 8, 8, 1, rng)
        assert m2.shape == (8, 8)
        m3 = sample_regime_payload("irregular", 3, 4, 8, 8, 1, rng)
        assert m3.shape == (4, 8, 8)
        m4 = sample_regime_payload("full", 3, 4, 8, 8, 4, rng)
        assert m4.shape == (4, 8, 8, 4)
