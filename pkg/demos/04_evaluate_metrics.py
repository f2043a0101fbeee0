"""Exercise the quality metrics and the dataset-level evaluation routes.

PSNR/SSIM sanity points first, then evaluate_split over a small dataset with
the three built-in dehazers: identity (lower bound), the analytic inversion
oracle (upper bound), and, if demo 03 has been run, the trained checkpoint.
"""

from pathlib import Path

import numpy as np

from depthdehaze import build_dataset, evaluate_split, psnr, ssim

rng = np.random.default_rng(3)
a = rng.uniform(0, 1, (32, 32, 3))
print("psnr(a, a)                =", psnr(a, a), "dB (capped)")
print("psnr(a, a+0.1)            =", round(psnr(a, np.clip(a + 0.1, 0, 1)), 2), "dB")
print("ssim(a, a)                =", ssim(a, a))
print("ssim(a, 1-a)              =", round(ssim(a, 1 - a), 4))

data = Path("demo_eval_data")
if not (data / "manifest.json").exists():
    build_dataset(12, seed=2, dims=(48, 48), beta_range=(0.03, 0.08),
                  a_range=(0.7, 0.95), out_dir=data)

print("\nper-dehazer summary over 12 scenes:")
print(f"{'dehazer':>10}  {'PSNR':>6}  {'SSIM':>6}")
for mode in ("identity", "oracle"):
    _, summary = evaluate_split(data / "manifest.json", dehazer=mode)
    print(f"{mode:>10}  {summary['psnr_dehazed']:>6.2f}  {summary['ssim_dehazed']:>6.4f}")

ckpt = sorted(Path("demo_run").glob("checkpoint_*.ckpt"))
if ckpt:
    _, summary = evaluate_split(data / "manifest.json", checkpoint=ckpt[-1],
                                dehazer="checkpoint", out_dir=Path("demo_eval_out"))
    print(f"{'trained':>10}  {summary['psnr_dehazed']:>6.2f}  "
          f"{summary['ssim_dehazed']:>6.4f}   (difference grids in demo_eval_out/)")
else:
    print("(run demos/03_train_small.py first to score a trained checkpoint)")
