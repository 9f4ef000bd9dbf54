"""Layers and operator graphs for the embed/extract pipeline.

All networks are built from three primitives: 3D convolution,
per-sample channel normalization, and trilinear resize. The "2D"
variants used for frame-wise mask prediction are the same graphs with
unit temporal kernels, per-frame normalization, and spatial-only
resizes, so frames never exchange information and parameters are shared
across time.
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import (Tensor, concat, conv3d, div, matmul, relu, resize3d,
                       sigmoid, sqrt, add, mul, sub, getitem)


class Module:
    """Base with ordered parameter registration for checkpoint stability."""

    def __init__(self):
        self._params: list[tuple[str, Tensor]] = []
        self._children: list[tuple[str, "Module"]] = []

    def _register(self, name: str, value):
        if isinstance(value, Tensor):
            self._params.append((name, value))
        elif isinstance(value, Module):
            self._children.append((name, value))
        elif isinstance(value, (list, tuple)):
            for i, v in enumerate(value):
                self._register(f"{name}.{i}", v)
        return value

    def named_params(self, prefix: str = ""):
        for name, p in self._params:
            yield (prefix + name, p)
        for name, child in self._children:
            yield from child.named_params(prefix + name + ".")

    def param_tensors(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, k=(3, 3, 3), stride=(1, 1, 1),
                 rng=None, dtype=np.float32, init_scale: float = 1.0):
        super().__init__()
        fan_in = cin * k[0] * k[1] * k[2]
        w = rng.normal(0.0, init_scale * math.sqrt(2.0 / fan_in),
                       size=(cout, cin) + tuple(k))
        self.w = self._register("w", Tensor(w.astype(dtype), requires_grad=True))
        self.b = self._register("b", Tensor(np.zeros((1, cout, 1, 1, 1), dtype), requires_grad=True))
        self.stride = tuple(stride)
        self.padding = (k[0] // 2, k[1] // 2, k[2] // 2)

    def __call__(self, x: Tensor) -> Tensor:
        return add(conv3d(x, self.w, self.stride, self.padding), self.b)


class ChannelNorm(Module):
    """Per-sample, per-channel normalization over the given axes."""

    def __init__(self, channels: int, axes=(2, 3, 4), eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        shape = (1, channels, 1, 1, 1)
        self.gamma = self._register("gamma", Tensor(np.ones(shape, dtype), requires_grad=True))
        self.beta = self._register("beta", Tensor(np.zeros(shape, dtype), requires_grad=True))
        self.axes = tuple(axes)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        n = 1
        for ax in self.axes:
            n *= x.shape[ax]
        if n == 1:  # normalizing a single cell would zero it out
            return add(mul(x, self.gamma), self.beta)
        mu = x.mean(axis=self.axes, keepdims=True)
        xc = sub(x, mu)
        var = mul(xc, xc).mean(axis=self.axes, keepdims=True)
        y = div(xc, sqrt(add(var, self.eps)))
        return add(mul(y, self.gamma), self.beta)


class CNR(Module):
    """Conv - Norm - ReLU."""

    def __init__(self, cin, cout, k=(3, 3, 3), stride=(1, 1, 1), norm_axes=(2, 3, 4),
                 rng=None, dtype=np.float32):
        super().__init__()
        self.conv = self._register("conv", Conv3d(cin, cout, k, stride, rng, dtype))
        self.norm = self._register("norm", ChannelNorm(cout, norm_axes, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.norm(self.conv(x)))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float32):
        super().__init__()
        w = rng.normal(0.0, math.sqrt(1.0 / n_in), size=(n_in, n_out))
        self.w = self._register("w", Tensor(w.astype(dtype), requires_grad=True))
        self.b = self._register("b", Tensor(np.zeros(n_out, dtype), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)


class MessageTranslator(Module):
    """Bit string -> spatiotemporal feature volume.

    A linear layer lifts the L bits to a (1, L, L, L*max(1, H//T))
    latent which is trilinearly resized to (1, T, H, W) and refined by
    two CNR blocks into C_tp channels.
    """

    def __init__(self, L: int, T: int, H: int, W: int, c_tp: int = 1,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.latent_shape = (1, L, L, L * max(1, H // T))
        self.out_sizes = (T, H, W)
        n = int(np.prod(self.latent_shape))
        self.fc = self._register("fc", Linear(L, n, rng, dtype))
        self.blocks = self._register("blocks", [
            CNR(1, 8, rng=rng, dtype=dtype),
            CNR(8, c_tp, rng=rng, dtype=dtype),
        ])

    def __call__(self, msgs: Tensor) -> Tensor:
        B = msgs.shape[0]
        z = self.fc(msgs)
        z = z.reshape((B,) + self.latent_shape)
        z = resize3d(z, self.out_sizes)
        for blk in self.blocks:
            z = blk(z)
        return z


class Encoder(Module):
    """Host + payload channels -> encoded video, residual on the host."""

    WIDTHS = (16, 32, 32, 16)

    def __init__(self, c_in: int, rng=None, dtype=np.float32):
        super().__init__()
        widths = (c_in,) + self.WIDTHS
        self.blocks = self._register("blocks", [
            CNR(widths[i], widths[i + 1], rng=rng, dtype=dtype) for i in range(4)
        ])
        # near-zero residual branch: embedding starts at the host and the
        # clamp stays unsaturated, so gradients flow from the first step
        self.proj = self._register("proj", Conv3d(self.WIDTHS[-1], 3, k=(1, 1, 1),
                                                  rng=rng, dtype=dtype, init_scale=0.02))

    def __call__(self, tin: Tensor) -> Tensor:
        host = getitem(tin, (slice(None), slice(0, 3)))
        h = tin
        for blk in self.blocks:
            h = blk(h)
        return add(host, self.proj(h))


class Decoder(Module):
    """Masked video -> L message probabilities.

    Four strided blocks, global average pooling, linear head. The final
    block is conv+ReLU without normalization: a norm directly under the
    pooled head zeroes the backward signal exactly (pooling sends a
    per-channel-constant gradient and the norm projects constants out),
    which makes the whole decoder untrainable.
    """

    WIDTHS = (16, 32, 32, 32)

    def __init__(self, L: int, rng=None, dtype=np.float32):
        super().__init__()
        widths = (3,) + self.WIDTHS
        self.blocks = self._register("blocks", [
            CNR(widths[i], widths[i + 1], stride=(2, 2, 2), rng=rng, dtype=dtype)
            for i in range(3)
        ])
        self.last = self._register("last", Conv3d(widths[3], widths[4], stride=(2, 2, 2),
                                                  rng=rng, dtype=dtype))
        self.head = self._register("head", Linear(self.WIDTHS[-1], L, rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for blk in self.blocks:
            h = blk(h)
        h = relu(self.last(h))
        pooled = h.mean(axis=(2, 3, 4))
        return sigmoid(self.head(pooled))


def _half(n: int) -> int:
    return max(1, (n + 1) // 2)


class RSU(Module):
    """Residual U-block: one down/up stage with a skip, as in nested-U nets."""

    def __init__(self, cin, mid, cout, spatial_only=False, rng=None, dtype=np.float32):
        super().__init__()
        k = (1, 3, 3) if spatial_only else (3, 3, 3)
        axes = (3, 4) if spatial_only else (2, 3, 4)
        self.spatial_only = spatial_only
        self.conv_in = self._register("conv_in", CNR(cin, cout, k, norm_axes=axes, rng=rng, dtype=dtype))
        self.enc = self._register("enc", CNR(cout, mid, k, norm_axes=axes, rng=rng, dtype=dtype))
        self.mid = self._register("mid", CNR(mid, mid, k, norm_axes=axes, rng=rng, dtype=dtype))
        self.dec = self._register("dec", CNR(2 * mid, cout, k, norm_axes=axes, rng=rng, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        x0 = self.conv_in(x)
        e1 = self.enc(x0)
        T, H, W = e1.shape[2:]
        down = (T if self.spatial_only else _half(T), _half(H), _half(W))
        m = self.mid(resize3d(e1, down))
        u = resize3d(m, (T, H, W))
        d = self.dec(concat([u, e1], axis=1))
        return add(x0, d)


class MaskPredictor(Module):
    """Two-stage nested-U mask head; `spatial_only` makes it frame-wise."""

    def __init__(self, c_out: int = 1, spatial_only: bool = False, rng=None, dtype=np.float32):
        super().__init__()
        self.spatial_only = spatial_only
        self.s1 = self._register("s1", RSU(3, 8, 16, spatial_only, rng, dtype))
        self.s2 = self._register("s2", RSU(16, 8, 16, spatial_only, rng, dtype))
        self.s3 = self._register("s3", RSU(32, 8, 16, spatial_only, rng, dtype))
        k = (1, 1, 1)
        self.head = self._register("head", Conv3d(16, c_out, k=k, rng=rng, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        h1 = self.s1(x)
        T, H, W = h1.shape[2:]
        down = (T if self.spatial_only else _half(T), _half(H), _half(W))
        h2 = self.s2(resize3d(h1, down))
        u = resize3d(h2, (T, H, W))
        h3 = self.s3(concat([u, h1], axis=1))
        return sigmoid(self.head(h3))
