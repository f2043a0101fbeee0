"""The dehazing network.

Encoder: a 2-scale U-Net front end whose feature map is tapped for the
feature-consistency loss, a 1x1 + 3x3 local path, a dense-dilated bridge that
lifts the predicted depth map into feature space (the only place depth enters),
and three local/global attention blocks at successively halved scales whose
outputs are fused by the multi-scale channel-attention module.

Decoder: two stages that each modulate-and-fuse a skip feature with a
convolved carry feature, then refine with another attention block.  A final
convolution predicts a correction added to the input and clamped to [0, 1].

Ablation switches mirror the trainer flags: attention blocks and the
modulation fusion degrade to summations, and the multi-scale module can be
bypassed entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, clip01, concat, relu, upsample_nearest
from .blocks import (DilatedResidualDenseBlock, LocalGlobalBlock,
                     ModulationFusion, MultiScaleFusion)
from .errors import InvalidArgumentError
from .layers import Conv, count_params


@dataclass
class EncoderTaps:
    """Intermediate features exposed for losses, tests, and inspection."""
    unet_features: Tensor      # full-resolution U-Net feature map (loss tap)
    enc1: Tensor               # attention block outputs, levels 0..2
    enc2: Tensor
    enc3: Tensor
    skip1: Tensor              # multi-scale fusion outputs consumed by the decoder
    skip2: Tensor
    carry: Tensor              # level-2 modulated features lifted to level 0


class _UNetStem:
    """Small 2-scale U-Net: returns (features, refined image)."""

    def __init__(self, base: int):
        self.base = base
        self.in1 = Conv(3, base, 3)
        self.in2 = Conv(base, base, 3)
        self.down = Conv(base, 2 * base, 3, stride=2)
        self.mid = Conv(2 * base, 2 * base, 3)
        self.up = Conv(2 * base, base, 3)
        self.fuse = Conv(2 * base, base, 3)
        self.out = Conv(base, 3, 1)

    def init_params(self, rng, dtype=np.float32):
        return {k: getattr(self, k).init_params(rng, dtype)
                for k in ("in1", "in2", "down", "mid", "up", "fuse", "out")}

    def __call__(self, p, x: Tensor):
        e = relu(self.in2(p["in2"], relu(self.in1(p["in1"], x))))
        m = relu(self.mid(p["mid"], relu(self.down(p["down"], e))))
        u = relu(self.up(p["up"], upsample_nearest(m, 2)))
        feats = relu(self.fuse(p["fuse"], concat([u, e], axis=1)))
        return feats, self.out(p["out"], feats)


class DehazeNet:
    """Maps (hazy image, predicted depth) to a dehazed image."""

    def __init__(self, widths: tuple[int, int, int] = (16, 32, 64), window: int = 8,
                 use_legm: bool = True, use_mfm: bool = True, use_msaam: bool = True,
                 bridge_growth: int | None = None):
        c1, c2, c3 = widths
        self.widths = widths
        self.use_msaam = use_msaam

        self.unet = _UNetStem(c1)
        self.pre1 = Conv(3, c1, 1)
        self.pre3 = Conv(3, c1, 3)
        # depth bridge: lifts the (N, 1, H, W) depth map into c1 channels
        self.bridge_in = Conv(1, c1, 1)
        self.bridge_conv = Conv(c1, c1, 3)
        self.bridge_drdb = DilatedResidualDenseBlock(
            c1, growth=bridge_growth if bridge_growth is not None else max(4, c1 // 2))

        self.legm1 = LocalGlobalBlock(c1, window, extra_channels=c1, attention=use_legm)
        self.down1 = Conv(c1, c2, 3, stride=2)
        self.legm2 = LocalGlobalBlock(c2, window, attention=use_legm)
        self.down2 = Conv(c2, c3, 3, stride=2)
        self.legm3 = LocalGlobalBlock(c3, window, attention=use_legm)

        self.msaam = MultiScaleFusion((c1, c2, c3))

        self.rc1 = Conv(c3, c1, 3)    # carry chain: upsampled level-2 -> 3x3 conv
        self.mfm1 = ModulationFusion(c1)
        self.cat1 = Conv(2 * c1, c1, 1)
        self.dec_legm1 = LocalGlobalBlock(c1, window, attention=use_legm)
        self.rc2 = Conv(c1, c1, 3)
        self.mfm2 = ModulationFusion(c1)
        self.cat2 = Conv(2 * c1, c1, 1)
        self.dec_legm2 = LocalGlobalBlock(c1, window, attention=use_legm)
        self.use_mfm = use_mfm

        self.head = Conv(c1, 3, 3)

    def init_params(self, seed: int, dtype=np.float32) -> dict:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD0)))
        return {
            "unet": self.unet.init_params(rng, dtype),
            "legm1": {"pre1": self.pre1.init_params(rng, dtype),
                      "pre3": self.pre3.init_params(rng, dtype),
                      "block": self.legm1.init_params(rng, dtype)},
            "drdb_bridge": {"lift": self.bridge_in.init_params(rng, dtype),
                            "conv": self.bridge_conv.init_params(rng, dtype),
                            "block": self.bridge_drdb.init_params(rng, dtype)},
            "legm2": {"down": self.down1.init_params(rng, dtype),
                      "block": self.legm2.init_params(rng, dtype)},
            "legm3": {"down": self.down2.init_params(rng, dtype),
                      "block": self.legm3.init_params(rng, dtype)},
            "msaam": self.msaam.init_params(rng, dtype),
            "decoder_fmi1": {"rc": self.rc1.init_params(rng, dtype),
                             "mfm": self.mfm1.init_params(rng, dtype),
                             "cat": self.cat1.init_params(rng, dtype),
                             "block": self.dec_legm1.init_params(rng, dtype)},
            "decoder_fmi2": {"rc": self.rc2.init_params(rng, dtype),
                             "mfm": self.mfm2.init_params(rng, dtype),
                             "cat": self.cat2.init_params(rng, dtype),
                             "block": self.dec_legm2.init_params(rng, dtype)},
            "head": self.head.init_params(rng, dtype),
        }

    def unet_features(self, p, image: Tensor) -> Tensor:
        """U-Net feature tap alone (used for the feature loss on the GT pass)."""
        feats, _ = self.unet(p["unet"], image)
        return feats

    @staticmethod
    def _validate(x: Tensor, depth: Tensor) -> None:
        n, c, h, w = x.shape
        if c != 3:
            raise InvalidArgumentError(f"expected 3-channel input, got {c}")
        if h % 8 or w % 8:
            raise InvalidArgumentError(f"spatial dims must be multiples of 8, got {h}x{w}")
        if depth.shape != (n, 1, h, w):
            raise InvalidArgumentError(
                f"depth shape {depth.shape} does not match image {(n, 1, h, w)}")
        if not np.isfinite(x.data).all() or not np.isfinite(depth.data).all():
            raise InvalidArgumentError("inputs contain non-finite values")

    def forward_batch(self, p, hazy: Tensor, depth: Tensor):
        """(N, 3, H, W) + (N, 1, H, W) -> (dehazed (N, 3, H, W), EncoderTaps)."""
        self._validate(hazy, depth)

        f_unet, refined = self.unet(p["unet"], hazy)
        local = self.pre1(p["legm1"]["pre1"], refined) + self.pre3(p["legm1"]["pre3"], refined)

        # the 1x1 lift stays linear: its input is a one-channel, all-positive
        # map, and a relu here can kill the whole branch at init when every
        # lift weight draws negative
        br = p["drdb_bridge"]
        dfeat = self.bridge_drdb(br["block"],
                                 relu(self.bridge_conv(br["conv"],
                                                       self.bridge_in(br["lift"], depth))))

        f1 = self.legm1(p["legm1"]["block"], local, extra=dfeat)
        f2 = self.legm2(p["legm2"]["block"], relu(self.down1(p["legm2"]["down"], f1)))
        f3 = self.legm3(p["legm3"]["block"], relu(self.down2(p["legm3"]["down"], f2)))

        if self.use_msaam:
            skip1, skip2, (_, _, m3) = self.msaam(p["msaam"], f1, f2, f3)
        else:
            skip1, skip2, m3 = f1, f1, f3

        d1 = p["decoder_fmi1"]
        carry = self.rc1(d1["rc"], upsample_nearest(m3, 4))
        fused = self.mfm1(d1["mfm"], skip1, carry) if self.use_mfm else skip1 + carry
        x = self.cat1(d1["cat"], concat([fused, skip1], axis=1))
        x = self.dec_legm1(d1["block"], x)

        d2 = p["decoder_fmi2"]
        carry2 = self.rc2(d2["rc"], x)
        fused2 = self.mfm2(d2["mfm"], skip2, carry2) if self.use_mfm else skip2 + carry2
        y = self.cat2(d2["cat"], concat([fused2, skip2], axis=1))
        y = self.dec_legm2(d2["block"], y)

        out = clip01(hazy + self.head(p["head"], y))
        taps = EncoderTaps(f_unet, f1, f2, f3, skip1, skip2, carry)
        return out, taps

    def forward(self, params: dict, hazy: np.ndarray, hazy_depth: np.ndarray):
        """Single (H, W, 3) image in [0, 1] + (H, W) normalized depth."""
        hazy = np.asarray(hazy)
        hazy_depth = np.asarray(hazy_depth)
        if hazy.ndim != 3 or hazy.shape[2] != 3:
            raise InvalidArgumentError(f"expected (H, W, 3) image, got {hazy.shape}")
        if hazy.min() < 0 or hazy.max() > 1:
            raise InvalidArgumentError("hazy image must lie in [0, 1]")
        if hazy_depth.shape != hazy.shape[:2]:
            raise InvalidArgumentError("depth map spatial dims must match the image")
        x = Tensor(np.ascontiguousarray(hazy.transpose(2, 0, 1))[None])
        dz = Tensor(hazy_depth[None, None])
        out, taps = self.forward_batch(params, x, dz)
        return out.data[0].transpose(1, 2, 0), taps

    def count_params(self, params: dict) -> int:
        return count_params(params)
