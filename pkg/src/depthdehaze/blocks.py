"""Differentiable building blocks for the two networks.

Feature maps are (N, C, H, W) tensors.  Each block is an object that owns its
layer shapes: ``init_params(rng)`` returns a nested dict of arrays and
``__call__(params, ...)`` runs the forward pass on tensors.  Coefficient
matrices produced by softmax are nonnegative and normalized along their
declared axis; the difference perceptron rescales its spatial softmax to mean
1 so that uniform weights make weighted losses collapse to plain L1.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (Tensor, concat, matmul, narrow, relu, gelu, softmax,
                       upsample_nearest)
from .errors import InvalidArgumentError, ShapeMismatchError
from .layers import Conv, Dense, Norm, global_avg_pool, window_partition, window_merge


class DilatedResidualDenseBlock:
    """Densely connected dilated convolutions fused back onto the input.

    Three growth layers with dilations (1, 2, 3) by default; a 1x1 fusion
    returns to the input channel count and is added residually, so zero
    fusion weights make the block an exact identity.
    """

    def __init__(self, channels: int, growth: int = 16, dilations=(1, 2, 3)):
        self.channels = channels
        self.dense = [Conv(channels + i * growth, growth, 3, dilation=d)
                      for i, d in enumerate(dilations)]
        self.fuse = Conv(channels + len(dilations) * growth, channels, 1)

    def init_params(self, rng, dtype=np.float32):
        p = {f"dense{i}": c.init_params(rng, dtype) for i, c in enumerate(self.dense)}
        p["fuse"] = self.fuse.init_params(rng, dtype)
        return p

    def __call__(self, p, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeMismatchError(
                f"expected {self.channels} channels, got {x.shape[1]}")
        feats = [x]
        for i, conv in enumerate(self.dense):
            h = feats[0] if len(feats) == 1 else concat(feats, axis=1)
            feats.append(relu(conv(p[f"dense{i}"], h)))
        return x + self.fuse(p["fuse"], concat(feats, axis=1))


class LocalGlobalBlock:
    """Window self-attention over conv-extracted local features.

    An optional extra stream (the depth branch) is aligned by the block's own
    3x3 convolution and added before attention; zeroing that projection makes
    the block independent of the extra input.  Pre-norm attention and MLP,
    both residual.  With ``attention=False`` the block degrades to the plain
    summation used by the ablation baseline.
    """

    def __init__(self, channels: int, window: int = 8, extra_channels: int | None = None,
                 mlp_ratio: int = 2, heads: int | None = None, attention: bool = True):
        self.channels = channels
        self.window = window
        self.attention = attention
        self.heads = heads if heads is not None else max(1, channels // 16)
        if channels % self.heads:
            raise InvalidArgumentError(f"channels {channels} not divisible by heads {self.heads}")
        self.extra_channels = extra_channels
        self.inject = Conv(extra_channels, channels, 3) if extra_channels else None
        self.norm1 = Norm(channels)
        self.qkv = Dense(channels, 3 * channels)
        self.proj = Dense(channels, channels)
        self.norm2 = Norm(channels)
        self.fc1 = Dense(channels, mlp_ratio * channels)
        self.fc2 = Dense(mlp_ratio * channels, channels)

    def init_params(self, rng, dtype=np.float32):
        p = {}
        if self.inject is not None:
            p["inject"] = self.inject.init_params(rng, dtype)
        p["norm1"] = self.norm1.init_params(rng, dtype)
        p["qkv"] = self.qkv.init_params(rng, dtype)
        p["proj"] = self.proj.init_params(rng, dtype)
        p["norm2"] = self.norm2.init_params(rng, dtype)
        p["fc1"] = self.fc1.init_params(rng, dtype)
        p["fc2"] = self.fc2.init_params(rng, dtype)
        return p

    def _attend(self, p, tokens: Tensor, return_attn: bool):
        B, T, C = tokens.shape
        h, dh = self.heads, self.channels // self.heads
        qkv = self.qkv(p["qkv"], tokens)
        q = qkv.reshape(B, T, 3, h, dh).transpose((2, 0, 3, 1, 4))
        qs = narrow(q, 0, 0, 1).reshape(B, h, T, dh)
        ks = narrow(q, 0, 1, 1).reshape(B, h, T, dh)
        vs = narrow(q, 0, 2, 1).reshape(B, h, T, dh)
        scale = float(1.0 / np.sqrt(dh))
        attn = softmax(matmul(qs * scale, ks.transpose((0, 1, 3, 2))), axis=-1)
        out = matmul(attn, vs).transpose((0, 2, 1, 3)).reshape(B, T, C)
        out = self.proj(p["proj"], out)
        return (out, attn) if return_attn else (out, None)

    def __call__(self, p, x: Tensor, extra: Tensor | None = None,
                 return_attn: bool = False):
        if extra is not None:
            if self.inject is None:
                raise InvalidArgumentError("block was built without an extra stream")
            if extra.shape[0] != x.shape[0] or extra.shape[2:] != x.shape[2:]:
                raise ShapeMismatchError(
                    f"extra stream {extra.shape} incompatible with {x.shape}")
            x = x + self.inject(p["inject"], extra)
        if not self.attention:
            return (x, None) if return_attn else x
        tokens, meta = window_partition(x, self.window)
        att_out, attn = self._attend(p, self.norm1(p["norm1"], tokens), return_attn)
        tokens = tokens + att_out
        mlp = self.fc2(p["fc2"], gelu(self.fc1(p["fc1"], self.norm2(p["norm2"], tokens))))
        out = window_merge(tokens + mlp, self.window, meta)
        return (out, attn) if return_attn else out


class MultiScaleFusion:
    """Channel-attention modulation and fusion of the three encoder scales.

    Global average pooling of each scale feeds one MLP whose output is split
    into per-scale channel weights; the modulated maps are aligned to the
    finest scale, concatenated, and projected by two non-shared convolutions
    into the two decoder skip features.
    """

    def __init__(self, channels: tuple[int, int, int]):
        c1, c2, c3 = channels
        self.channels = channels
        ctot = c1 + c2 + c3
        self.fc1 = Dense(ctot, max(4, ctot // 2))
        self.fc2 = Dense(max(4, ctot // 2), ctot)
        self.align2 = Conv(c2, c1, 1)
        self.align3 = Conv(c3, c1, 1)
        self.out1 = Conv(3 * c1, c1, 1)
        self.out2 = Conv(3 * c1, c1, 1)

    def init_params(self, rng, dtype=np.float32):
        return {k: getattr(self, k).init_params(rng, dtype)
                for k in ("fc1", "fc2", "align2", "align3", "out1", "out2")}

    def _check(self, f1, f2, f3):
        c1, c2, c3 = self.channels
        if (f1.shape[1], f2.shape[1], f3.shape[1]) != (c1, c2, c3):
            raise InvalidArgumentError(
                f"channel mismatch: got {(f1.shape[1], f2.shape[1], f3.shape[1])}, want {self.channels}")
        if f2.shape[2] * 2 != f1.shape[2] or f3.shape[2] * 4 != f1.shape[2] \
                or f2.shape[3] * 2 != f1.shape[3] or f3.shape[3] * 4 != f1.shape[3]:
            raise InvalidArgumentError(
                "scale ordering violated: expect levels 0, 1, 2 at descending resolution")

    def channel_weights(self, p, f1, f2, f3):
        g = concat([global_avg_pool(f1), global_avg_pool(f2), global_avg_pool(f3)], axis=1)
        return self.fc2(p["fc2"], relu(self.fc1(p["fc1"], g)))

    def __call__(self, p, f1: Tensor, f2: Tensor, f3: Tensor):
        """Returns (skip1, skip2, (modulated1, modulated2, modulated3))."""
        self._check(f1, f2, f3)
        c1, c2, c3 = self.channels
        a = self.channel_weights(p, f1, f2, f3)
        n = a.shape[0]
        a1 = narrow(a, 1, 0, c1).reshape(n, c1, 1, 1)
        a2 = narrow(a, 1, c1, c2).reshape(n, c2, 1, 1)
        a3 = narrow(a, 1, c1 + c2, c3).reshape(n, c3, 1, 1)
        m1, m2, m3 = a1 * f1, a2 * f2, a3 * f3
        aligned = concat([m1,
                          self.align2(p["align2"], upsample_nearest(m2, 2)),
                          self.align3(p["align3"], upsample_nearest(m3, 4))], axis=1)
        return self.out1(p["out1"], aligned), self.out2(p["out2"], aligned), (m1, m2, m3)


class ModulationFusion:
    """Softmax channel weights shared by two streams before their sum.

    A = softmax(MLP(GAP(fa + fb))) over channels; returns A*fa + A*fb.
    """

    def __init__(self, channels: int):
        self.channels = channels
        hidden = max(4, channels // 2)
        self.fc1 = Dense(channels, hidden)
        self.fc2 = Dense(hidden, channels)

    def init_params(self, rng, dtype=np.float32):
        return {"fc1": self.fc1.init_params(rng, dtype),
                "fc2": self.fc2.init_params(rng, dtype)}

    def weights(self, p, fa: Tensor, fb: Tensor) -> Tensor:
        if fa.shape != fb.shape:
            raise ShapeMismatchError(f"stream shapes differ: {fa.shape} vs {fb.shape}")
        s = global_avg_pool(fa + fb)
        a = softmax(self.fc2(p["fc2"], relu(self.fc1(p["fc1"], s))), axis=1)
        n, c = a.shape
        return a.reshape(n, c, 1, 1)

    def __call__(self, p, fa: Tensor, fb: Tensor, return_weights: bool = False):
        a = self.weights(p, fa, fb)
        out = a * fa + a * fb
        return (out, a) if return_weights else out


class DifferencePerceptron:
    """Residual map -> mean-1 spatial weighting matrix.

    Two convolutions, a per-pixel MLP (1x1 convolutions), and a softmax over
    all pixels, rescaled by H*W so uniform output weights equal 1 exactly.
    ``kernel=1`` makes the whole block per-pixel (permutation-equivariant).
    """

    def __init__(self, in_channels: int, hidden: int = 16, kernel: int = 3):
        if in_channels not in (1, 3):
            raise InvalidArgumentError(f"residual channels must be 1 or 3, got {in_channels}")
        self.in_channels = in_channels
        self.conv1 = Conv(in_channels, hidden, kernel)
        self.conv2 = Conv(hidden, hidden, kernel)
        self.pix1 = Conv(hidden, hidden, 1)
        self.pix2 = Conv(hidden, 1, 1)

    def init_params(self, rng, dtype=np.float32):
        return {k: getattr(self, k).init_params(rng, dtype)
                for k in ("conv1", "conv2", "pix1", "pix2")}

    def __call__(self, p, residual: Tensor) -> Tensor:
        if not np.isfinite(residual.data).all():
            raise InvalidArgumentError("residual contains non-finite values")
        if residual.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"expected {self.in_channels}-channel residual, got {residual.shape[1]}")
        n, _, h, w = residual.shape
        y = relu(self.conv1(p["conv1"], residual))
        y = relu(self.conv2(p["conv2"], y))
        y = relu(self.pix1(p["pix1"], y))
        logits = self.pix2(p["pix2"], y).reshape(n, h * w)
        probs = softmax(logits, axis=-1)
        return (probs * float(h * w)).reshape(n, 1, h, w)
