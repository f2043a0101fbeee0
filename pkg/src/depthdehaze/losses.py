"""Training objectives.

All L1 terms are means over elements, so magnitudes are resolution-independent
and uniform difference-perception weights reduce the weighted terms to plain
L1 exactly.  Gradients never flow into ground-truth branches or into
coefficient matrices at their point of use; the perceptrons that produce the
coefficient matrices are trained through the separate concentration penalty.

The perceptual extractor replaces a pretrained backbone with a frozen, seeded
4-stage convolutional pyramid; the contrastive term keeps the published
structure: sum_i lambda_i * |E_i(gt) - E_i(out)| / (|E_i(hazy) - E_i(out)| + eps).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Tensor, as_tensor, conv2d, gelu
from .errors import InvalidArgumentError, ShapeMismatchError
from .layers import Conv

CONTRAST_EPS = 1e-6
CONCENTRATION_WEIGHT = 1e-2
UNET_LOSS_WEIGHT = 0.2


@dataclass
class LossReport:
    """Named scalar terms of one alternating iteration, for the JSONL log."""
    unet: float = 0.0
    depth_weighted: float = 0.0
    depth_hazy: float = 0.0
    dehaze_weighted_l1: float = 0.0
    contrastive_ratio: float = 0.0
    dp_depth_aux: float = 0.0
    dp_dehaze_aux: float = 0.0
    total: float = 0.0

    def finalize(self) -> "LossReport":
        """total = depth terms + dehaze terms with their documented weights."""
        self.total = (self.depth_weighted + self.depth_hazy
                      + CONCENTRATION_WEIGHT * self.dp_depth_aux
                      + self.dehaze_weighted_l1 + self.contrastive_ratio
                      + UNET_LOSS_WEIGHT * self.unet
                      + CONCENTRATION_WEIGHT * self.dp_dehaze_aux)
        return self

    def as_dict(self) -> dict:
        return asdict(self)

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in asdict(self).values())


class PerceptualExtractor:
    """Frozen, seeded multi-scale feature pyramid.

    Stage i: 3x3 conv (stride 2) + GELU; taps are the stage outputs.  The
    parameter arrays are made read-only after construction, so two
    evaluations of the same inputs are bit-identical by construction.
    """

    def __init__(self, channels=(8, 16, 32, 64),
                 layer_weights=(1 / 128, 1 / 64, 1 / 32, 1 / 16),
                 seed: int = 0, dtype=np.float32):
        if len(channels) != len(layer_weights):
            raise InvalidArgumentError("one layer weight per stage is required")
        if any(w <= 0 for w in layer_weights):
            raise InvalidArgumentError("layer weights must be positive")
        self.layer_weights = tuple(float(w) for w in layer_weights)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xFE)))
        self.convs = []
        self.params = []
        prev = 3
        for c in channels:
            conv = Conv(prev, c, 3, stride=2)
            p = conv.init_params(rng, dtype)
            for arr in p.values():
                arr.setflags(write=False)
            self.convs.append(conv)
            self.params.append(p)
            prev = c

    def features(self, x: Tensor) -> list[Tensor]:
        taps = []
        h = x
        for conv, p in zip(self.convs, self.params):
            h = gelu(conv2d(h, p["w"], p["b"], stride=2, padding=1))
            taps.append(h)
        return taps


def _shapes_match(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")


def unet_loss(f_hazy: Tensor, f_gt: Tensor) -> Tensor:
    """Mean |features(hazy pass) - features(GT pass)|; GT side is detached."""
    f_hazy, f_gt = as_tensor(f_hazy), as_tensor(f_gt)
    _shapes_match(f_hazy, f_gt)
    return (f_hazy - f_gt.detach()).abs().mean()


def weighted_mean_abs(a: Tensor, b: Tensor, weights: Tensor | None = None) -> Tensor:
    """Mean of w * |a - b| with the weight matrix detached at use.

    ``weights`` broadcasts over channels; uniform weights give plain L1.
    """
    a, b = as_tensor(a), as_tensor(b)
    _shapes_match(a, b)
    diff = (a - b).abs()
    if weights is None:
        return diff.mean()
    weights = as_tensor(weights)
    if not np.isfinite(weights.data).all():
        raise InvalidArgumentError("coefficient matrix contains non-finite values")
    return (weights.detach() * diff).mean()


def depth_loss(m_dehazed: Tensor, m_hazy: Tensor, m_gt: Tensor,
               weights: Tensor | None = None) -> Tensor:
    """Weighted consistency on the dehazed branch plus plain L1 on the hazy branch."""
    m_gt = as_tensor(m_gt).detach()
    return (weighted_mean_abs(m_dehazed, m_gt, weights)
            + weighted_mean_abs(m_hazy, m_gt))


def contrastive_perceptual(u_star: Tensor, u, u_tilde,
                           extractor: PerceptualExtractor,
                           eps: float = CONTRAST_EPS) -> Tensor:
    """Multi-scale pull-to-GT / push-from-hazy feature ratio."""
    u_star = as_tensor(u_star)
    u = as_tensor(u).detach()
    u_tilde = as_tensor(u_tilde).detach()
    _shapes_match(u_star, u)
    _shapes_match(u_star, u_tilde)
    fs = extractor.features(u_star)
    fu = extractor.features(u)
    ft = extractor.features(u_tilde)
    total = None
    for lam, a, b, c in zip(extractor.layer_weights, fu, fs, ft):
        num = (a - b).abs().mean()
        den = (c - b).abs().mean() + eps
        term = (num / den) * lam
        total = term if total is None else total + term
    return total


def dehaze_loss(u_star: Tensor, u, u_tilde, weights: Tensor | None = None,
                extractor: PerceptualExtractor | None = None,
                eps: float = CONTRAST_EPS):
    """Weighted image L1 plus (optionally) the contrastive perceptual ratio.

    Returns (total, terms) where terms holds the two pieces as floats.
    """
    u_star = as_tensor(u_star)
    u_t = as_tensor(u).detach()
    l1 = weighted_mean_abs(u_star, u_t, weights)
    terms = {"dehaze_weighted_l1": float(l1.data), "contrastive_ratio": 0.0}
    total = l1
    if extractor is not None:
        cr = contrastive_perceptual(u_star, u_t, u_tilde, extractor, eps)
        terms["contrastive_ratio"] = float(cr.data)
        total = total + cr
    return total, terms


def concentration_penalty(weights: Tensor, residual: np.ndarray) -> Tensor:
    """Cross-entropy pushing the perceptron's mass onto top-decile residuals.

    ``weights`` is the perceptron output (mean 1); ``residual`` is the raw
    residual the perceptron saw, used only to build the (detached) target:
    the uniform distribution over the ceil(10%) pixels of largest mean
    absolute residual (exact top-k, so ties in flat regions cannot dilute
    the target onto the whole image).  This is the unblocked path that
    trains the perceptron itself.
    """
    n, _, h, w = weights.shape
    npix = h * w
    k = max(1, int(round(0.1 * npix)))
    mag = np.abs(np.asarray(residual)).mean(axis=1).reshape(n, npix)
    q = np.zeros((n, npix), dtype=weights.dtype)
    top = np.argpartition(mag, npix - k, axis=1)[:, npix - k:]
    np.put_along_axis(q, top, 1.0 / k, axis=1)
    probs = weights.reshape(n, npix) * float(1.0 / npix)
    ce = -((probs + 1e-12).log() * q).sum(axis=1).mean()
    return ce
