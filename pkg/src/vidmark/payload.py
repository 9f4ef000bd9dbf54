"""Payload generation: messages, masks, mask sequences, frame codebooks.

Array conventions used across the package:
  binary message   uint8 (L,)
  spatial mask     uint8 (H, W) or (H, W, C) multi-channel
  mask sequence    uint8 (T, H, W) or (T, H, W, C)
All mask values are exactly 0 or 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK_KINDS = ("full", "rectangular", "irregular", "segmented")


class CapacityError(ValueError):
    """Codebook cannot hold the requested number of frames."""


def ensure_binary(arr: np.ndarray, name: str = "mask") -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1 values only)")
    return arr


def sample_message(L: int, seed: int) -> np.ndarray:
    """L fair-coin bits, deterministic under seed."""
    if L < 1:
        raise ValueError(f"message length must be >= 1, got {L}")
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=L, dtype=np.uint8)


def bits_to_hex(bits: np.ndarray) -> str:
    """Hex string of the bits, first bit = MSB of the first nibble."""
    bits = ensure_binary(np.asarray(bits, dtype=np.uint8), "message")
    n = len(bits)
    padded = np.concatenate([bits, np.zeros((-n) % 4, dtype=np.uint8)])
    nibbles = padded.reshape(-1, 4)
    weights = np.array([8, 4, 2, 1], dtype=np.uint8)
    return "".join(f"{int(v):x}" for v in nibbles @ weights)


def hex_to_bits(s: str, L: int) -> np.ndarray:
    """Inverse of bits_to_hex for an explicit bit length."""
    if len(s) != (L + 3) // 4:
        raise ValueError(f"hex string {s!r} does not hold {L} bits")
    out = np.zeros(len(s) * 4, dtype=np.uint8)
    for i, ch in enumerate(s):
        v = int(ch, 16)
        for j in range(4):
            out[4 * i + j] = (v >> (3 - j)) & 1
    if out[L:].any():
        raise ValueError("padding bits beyond the stated length must be zero")
    return out[:L]


def generate_mask(kind: str, H: int, W: int, seed: int = 0) -> np.ndarray:
    """One non-empty binary (H, W) mask of the requested kind."""
    if H < 8 or W < 8:
        raise ValueError(f"mask size must be at least 8x8, got {H}x{W}")
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}, expected one of {MASK_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "full":
        return np.ones((H, W), dtype=np.uint8)
    if kind == "rectangular":
        return _rectangular(H, W, rng)
    if kind == "irregular":
        return _irregular(H, W, rng)
    return _segmented(H, W, rng)


def _rectangular(H, W, rng) -> np.ndarray:
    h = int(rng.integers(max(1, H // 8), max(2, H // 2) + 1))
    w = int(rng.integers(max(1, W // 8), max(2, W // 2) + 1))
    y = int(rng.integers(0, H - h + 1))
    x = int(rng.integers(0, W - w + 1))
    m = np.zeros((H, W), dtype=np.uint8)
    m[y:y + h, x:x + w] = 1
    return m


def _paint_disk(m: np.ndarray, cy: float, cx: float, r: float):
    H, W = m.shape
    y0, y1 = max(0, int(cy - r)), min(H, int(cy + r) + 2)
    x0, x1 = max(0, int(cx - r)), min(W, int(cx + r) + 2)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    m[y0:y1, x0:x1] |= ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8)


def _irregular(H, W, rng) -> np.ndarray:
    # Union of 1..4 thick polyline strokes (free-form style).
    m = np.zeros((H, W), dtype=np.uint8)
    for _ in range(int(rng.integers(1, 5))):
        width = float(rng.uniform(max(1.0, H / 16), max(2.0, H / 4)))
        r = width / 2
        y, x = rng.uniform(0, H), rng.uniform(0, W)
        _paint_disk(m, y, x, r)
        for _ in range(int(rng.integers(3, 8))):
            ny, nx = rng.uniform(0, H), rng.uniform(0, W)
            steps = int(max(abs(ny - y), abs(nx - x))) + 1
            for s in range(steps + 1):
                t = s / steps
                _paint_disk(m, y + t * (ny - y), x + t * (nx - x), r)
            y, x = ny, nx
    if not m.any():  # strokes always paint, but guard the contract
        m[H // 2, W // 2] = 1
    return m


def _segmented(H, W, rng) -> np.ndarray:
    # Connected blob flood-grown from a seed cell (object-like region).
    target = int(rng.uniform(0.05, 0.5) * H * W)
    m = np.zeros((H, W), dtype=np.uint8)
    y, x = int(rng.integers(0, H)), int(rng.integers(0, W))
    m[y, x] = 1
    frontier = [(y, x)]
    count = 1
    while count < target and frontier:
        i = int(rng.integers(0, len(frontier)))
        cy, cx = frontier[i]
        neighbors = [(cy + dy, cx + dx)
                     for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1))
                     if 0 <= cy + dy < H and 0 <= cx + dx < W and not m[cy + dy, cx + dx]]
        if not neighbors:
            frontier[i] = frontier[-1]
            frontier.pop()
            continue
        ny, nx = neighbors[int(rng.integers(0, len(neighbors)))]
        m[ny, nx] = 1
        frontier.append((ny, nx))
        count += 1
    return m


def shift_mask(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift active cells by (dx, dy) = (width, height) steps, dropping
    anything pushed outside the frame. Works for (H, W) and (H, W, C)."""
    mask = np.asarray(mask)
    H, W = mask.shape[:2]
    out = np.zeros_like(mask)
    ys = slice(max(0, -dy), min(H, H - dy))
    xs = slice(max(0, -dx), min(W, W - dx))
    yd = slice(max(0, dy), min(H, H + dy))
    xd = slice(max(0, dx), min(W, W + dx))
    if ys.start < ys.stop and xs.start < xs.stop:
        out[yd, xd] = mask[ys, xs]
    return out


_DIRECTIONS = tuple((dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0))


def generate_mask_sequence(initial: np.ndarray, T: int, delta_max: int,
                           seed: int = 0) -> np.ndarray:
    """Propagate a 2D mask through time by randomized shifts.

    Frame 0 is the initial mask. Each next frame shifts the current mask
    by k*d for a shuffled candidate direction d and k ~ U{0..delta_max},
    accepting the first non-empty result.
    """
    initial = ensure_binary(np.asarray(initial, dtype=np.uint8), "initial mask")
    if not initial.any():
        raise ValueError("initial mask must be non-empty")
    if T < 1:
        raise ValueError(f"sequence length must be >= 1, got {T}")
    if delta_max < 0:
        raise ValueError(f"delta_max must be >= 0, got {delta_max}")
    rng = np.random.default_rng(seed)
    frames = [initial]
    current = initial
    for _ in range(1, T):
        order = rng.permutation(len(_DIRECTIONS))
        accepted = None
        for j in order:
            dx, dy = _DIRECTIONS[j]
            k = int(rng.integers(0, delta_max + 1))
            cand = shift_mask(current, k * dx, k * dy)
            if cand.any():
                accepted = cand
                break
        if accepted is None:
            raise RuntimeError("every candidate shift emptied the mask")
        current = accepted
        frames.append(current)
    return np.stack(frames)


@dataclass(frozen=True)
class FrameCodebook:
    """Per-frame channel codewords; codes[t] is the C-bit word of frame t."""

    codes: np.ndarray  # (T, C) uint8

    def __post_init__(self):
        object.__setattr__(self, "codes", np.asarray(self.codes, dtype=np.uint8))

    @property
    def length(self) -> int:
        return self.codes.shape[0]

    @property
    def channels(self) -> int:
        return self.codes.shape[1]


def build_codebook(T: int, C: int) -> FrameCodebook:
    """Distinct non-zero codes: frame t gets binary(t+1), LSB in channel 0."""
    if T < 1 or C < 1:
        raise ValueError("T and C must be positive")
    if (1 << C) - 1 < T:
        raise CapacityError(f"{C} channels hold at most {(1 << C) - 1} frames, need {T}")
    codes = np.zeros((T, C), dtype=np.uint8)
    for t in range(T):
        v = t + 1
        for c in range(C):
            codes[t, c] = (v >> c) & 1
    return FrameCodebook(codes)


def encode_multichannel(sequence: np.ndarray, codebook: FrameCodebook) -> np.ndarray:
    """(T, H, W) mask sequence -> (T, H, W, C) with each frame's spatial
    mask copied into exactly the channels where its codeword has a 1."""
    sequence = ensure_binary(np.asarray(sequence, dtype=np.uint8), "mask sequence")
    if sequence.ndim != 3:
        raise ValueError("expected a single-channel (T, H, W) sequence")
    if sequence.shape[0] != codebook.length:
        raise ValueError(f"sequence has {sequence.shape[0]} frames, "
                         f"codebook encodes {codebook.length}")
    return sequence[..., None] * codebook.codes[:, None, None, :]


def sample_regime_payload(kind: str, d_e: int, T: int, H: int, W: int, C_p: int,
                          rng, delta_max: int = 2) -> np.ndarray | None:
    """Draw the structured payload a regime embeds, or None for d_e=1.

    d_e=2 gives a static (H, W) mask; d_e=3 gives a (T, H, W) sequence
    (shifted through time except for full masks), multi-channel encoded
    to (T, H, W, C_p) when C_p > 1.
    """
    if d_e == 1:
        return None
    m2 = generate_mask(kind, H, W, seed=int(rng.integers(0, 2 ** 31)))
    if d_e == 2:
        return m2
    if kind == "full":
        seq = np.ones((T, H, W), dtype=np.uint8)
    else:
        seq = generate_mask_sequence(m2, T, delta_max, seed=int(rng.integers(0, 2 ** 31)))
    if C_p > 1:
        return encode_multichannel(seq, build_codebook(T, C_p))
    return seq


def mask_area_ratio(mask: np.ndarray, multichannel: bool = False) -> float:
    """Active fraction of the mask volume. With `multichannel`, a cell
    counts as active when any channel (last axis) is set."""
    mask = np.asarray(mask)
    if multichannel:
        mask = mask.max(axis=-1)
    return float(mask.mean())
