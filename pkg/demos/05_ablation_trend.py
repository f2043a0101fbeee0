"""Compare the full model against its two coupling ablations at toy scale.

Trains three variants on the same small dataset and seed: the full model,
difference-perception off (uniform loss weights), and depth-estimation off
(zero depth inputs, no depth-side training).  At this scale the margins are
small and noisy; the acceptance suite runs the real desk-scale version over
three seeds.
"""

from pathlib import Path

from depthdehaze import TrainConfig, Trainer, build_dataset

data = Path("demo_ablation_data")
if not (data / "manifest.json").exists():
    build_dataset(60, seed=4, dims=(48, 48), beta_range=(0.03, 0.08),
                  a_range=(0.7, 0.95), out_dir=data)

base = dict(total_steps=150, batch_size=2, crop_size=48, holdout=12,
            widths=(16, 32, 64), depth_widths=(16, 24, 32),
            eval_every=0, seed=0)
variants = {"full": {}, "no_dp": {"use_dp": False}, "no_de": {"use_de": False}}

print(f"{'variant':>8}  {'PSNR hazy':>9}  {'PSNR dehazed':>12}  {'depth L1':>8}")
for name, flags in variants.items():
    cfg = TrainConfig(**{**base, **flags})
    _, log = Trainer(cfg, data / "manifest.json").train()
    final = next(l["eval"] for l in reversed(log) if "eval" in l)
    print(f"{name:>8}  {final['psnr_hazy']:>9.2f}  {final['psnr_dehazed']:>12.2f}  "
          f"{final['depth_l1_hazy']:>8.4f}")

print("\nexpected trend (soft): full >= no_dp >= no_de on dehazed PSNR")
