"""Tour of the differentiable building blocks.

Runs each block on random feature maps, prints the contracts they satisfy
(shapes, softmax normalizations, mean-1 weighting), and verifies one analytic
gradient against central finite differences.
"""

import numpy as np

from depthdehaze import (DifferencePerceptron, DilatedResidualDenseBlock,
                         LocalGlobalBlock, ModulationFusion, MultiScaleFusion,
                         Tensor)
from depthdehaze.gradcheck import check_gradients

rng = np.random.default_rng(0)
feat = lambda *s: Tensor(rng.standard_normal(s).astype(np.float32) * 0.5)

print("== dilated residual dense block ==")
drdb = DilatedResidualDenseBlock(16)
p = drdb.init_params(np.random.default_rng(1))
x = feat(1, 16, 32, 32)
print("in", x.shape, "-> out", drdb(p, x).shape, "(residual, shape-preserving)")

print("\n== local/global attention block ==")
legm = LocalGlobalBlock(16, window=8, extra_channels=16)
p = legm.init_params(np.random.default_rng(2))
out, attn = legm(p, x, extra=feat(1, 16, 32, 32), return_attn=True)
print("out", out.shape, "| attention rows sum to",
      float(attn.data.sum(-1).mean()), "+/-", float(np.abs(attn.data.sum(-1) - 1).max()))

print("\n== multi-scale fusion ==")
msaam = MultiScaleFusion((16, 32, 64))
p = msaam.init_params(np.random.default_rng(3))
s1, s2, _ = msaam(p, feat(1, 16, 32, 32), feat(1, 32, 16, 16), feat(1, 64, 8, 8))
print("three scales -> two skip features:", s1.shape, s2.shape)

print("\n== modulation fusion ==")
mfm = ModulationFusion(16)
p = mfm.init_params(np.random.default_rng(4))
fused, w = mfm(p, feat(1, 16, 32, 32), feat(1, 16, 32, 32), return_weights=True)
print("channel weights sum to", float(w.data.sum(axis=1).squeeze()))

print("\n== difference perceptron ==")
dp = DifferencePerceptron(in_channels=3)
p = dp.init_params(np.random.default_rng(5))
residual = feat(1, 3, 32, 32)
weights = dp(p, residual)
print(f"weights: min {weights.data.min():.3f}, mean {weights.data.mean():.3f} "
      f"(normalized to mean 1), sum {weights.data.sum():.1f} = H*W")

print("\n== gradient check (block forward vs. central differences) ==")
blk = DilatedResidualDenseBlock(4, growth=3)
params = blk.init_params(np.random.default_rng(6), dtype=np.float64)
err = check_gradients(
    lambda x: (blk(params, x) ** 2).mean(),
    {"x": rng.standard_normal((1, 4, 8, 8)) * 0.5})
print(f"max relative error vs finite differences: {err:.2e}")
