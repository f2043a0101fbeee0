"""Monocular depth estimation network.

A dense-dilated encoder-decoder: stem conv, two encoder blocks with strided
downsampling, a bottleneck block, and a mirrored decoder with nearest-neighbor
upsampling and skip fusion.  The head is sigmoid-bounded, so predictions live
in (0, 1) on the normalized (50 m cap) depth scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, relu, sigmoid, upsample_nearest
from .blocks import DilatedResidualDenseBlock
from .errors import InvalidArgumentError
from .layers import Conv, count_params


@dataclass(frozen=True)
class DepthMap:
    """Normalized (H, W) depth in [0, 1] plus the image it came from."""
    values: np.ndarray
    source_kind: str = "from_clear"  # gt | from_clear | from_hazy | from_dehazed


def depth_l1(pred, gt) -> float:
    """Mean absolute error between two depth maps (arrays or DepthMaps)."""
    a = pred.values if isinstance(pred, DepthMap) else np.asarray(pred)
    b = gt.values if isinstance(gt, DepthMap) else np.asarray(gt)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"depth map shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


class DepthNet:
    """Predicts a normalized depth map from an RGB image."""

    def __init__(self, widths: tuple[int, int, int] = (16, 24, 32), growth: int = 8):
        c1, c2, c3 = widths
        self.widths = widths
        self.stem = Conv(3, c1, 3)
        self.enc1 = DilatedResidualDenseBlock(c1, growth)
        self.down1 = Conv(c1, c2, 3, stride=2)
        self.enc2 = DilatedResidualDenseBlock(c2, growth)
        self.down2 = Conv(c2, c3, 3, stride=2)
        self.bottleneck = DilatedResidualDenseBlock(c3, growth)
        self.up1 = Conv(c3, c2, 3)
        self.skip1 = Conv(2 * c2, c2, 1)
        self.dec1 = DilatedResidualDenseBlock(c2, growth)
        self.up2 = Conv(c2, c1, 3)
        self.skip2 = Conv(2 * c1, c1, 1)
        self.dec2 = DilatedResidualDenseBlock(c1, growth)
        self.head = Conv(c1, 1, 3)

    def init_params(self, seed: int, dtype=np.float32) -> dict:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDE)))
        return {
            "stem": self.stem.init_params(rng, dtype),
            "enc_drdb1": {"block": self.enc1.init_params(rng, dtype),
                          "down": self.down1.init_params(rng, dtype)},
            "enc_drdb2": {"block": self.enc2.init_params(rng, dtype),
                          "down": self.down2.init_params(rng, dtype)},
            "bottleneck": self.bottleneck.init_params(rng, dtype),
            "dec_drdb1": {"up": self.up1.init_params(rng, dtype),
                          "skip": self.skip1.init_params(rng, dtype),
                          "block": self.dec1.init_params(rng, dtype)},
            "dec_drdb2": {"up": self.up2.init_params(rng, dtype),
                          "skip": self.skip2.init_params(rng, dtype),
                          "block": self.dec2.init_params(rng, dtype)},
            "head": self.head.init_params(rng, dtype),
        }

    def forward_batch(self, p, x: Tensor) -> Tensor:
        """(N, 3, H, W) image tensor -> (N, 1, H, W) depth in (0, 1)."""
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise InvalidArgumentError(
                f"spatial dims must be multiples of 4, got {x.shape[2]}x{x.shape[3]}")
        s = relu(self.stem(p["stem"], x))
        e1 = self.enc1(p["enc_drdb1"]["block"], s)
        d1 = relu(self.down1(p["enc_drdb1"]["down"], e1))
        e2 = self.enc2(p["enc_drdb2"]["block"], d1)
        d2 = relu(self.down2(p["enc_drdb2"]["down"], e2))
        b = self.bottleneck(p["bottleneck"], d2)
        u1 = relu(self.up1(p["dec_drdb1"]["up"], upsample_nearest(b, 2)))
        u1 = self.dec1(p["dec_drdb1"]["block"],
                       self.skip1(p["dec_drdb1"]["skip"], concat([u1, e2], axis=1)))
        u2 = relu(self.up2(p["dec_drdb2"]["up"], upsample_nearest(u1, 2)))
        u2 = self.dec2(p["dec_drdb2"]["block"],
                       self.skip2(p["dec_drdb2"]["skip"], concat([u2, e1], axis=1)))
        return sigmoid(self.head(p["head"], u2))

    def forward(self, params: dict, image: np.ndarray,
                source_kind: str = "from_clear") -> DepthMap:
        """Single (H, W, 3) image in [0, 1] -> DepthMap."""
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise InvalidArgumentError(f"expected (H, W, 3) image, got {image.shape}")
        if not np.isfinite(image).all() or image.min() < 0 or image.max() > 1:
            raise InvalidArgumentError("image must be finite and within [0, 1]")
        x = Tensor(np.ascontiguousarray(image.transpose(2, 0, 1))[None])
        out = self.forward_batch(params, x)
        return DepthMap(out.data[0, 0], source_kind)

    def count_params(self, params: dict) -> int:
        return count_params(params)
