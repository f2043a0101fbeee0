"""Full-reference quality metrics and dataset-level evaluation.

PSNR is capped at 100 dB (zero MSE maps to the cap, nothing exceeds it).
SSIM is the standard single-scale form: 11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03, peak 1.0, computed per channel on float images and
averaged; no 8-bit integer math is involved.

``evaluate_split`` compares what would land in files: dehazer outputs are
snapped to the 8-bit PNG grid before metrics, so in-memory and on-disk
evaluations agree.  The "oracle" dehazer re-applies the scattering model in
float64 from the stored clear image, depth map, and parameters, and inverts
that; inverting the quantized hazy PNG would amplify quantization noise by
1/T and can never reproduce the clear image.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from . import fileio
from .errors import InvalidArgumentError, ShapeMismatchError
from .scene import T_MIN, load_manifest, normalize_depth, transmission

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def worker_threads() -> int:
    """Worker-thread bound from the DTCMP_NUM_THREADS environment variable."""
    try:
        return max(1, int(os.environ.get("DTCMP_NUM_THREADS", "1")))
    except ValueError:
        return 1


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = (len(w) - 1) // 2
    out = correlate1d(img, w, axis=0, mode="constant")
    out = correlate1d(out, w, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _ssim_single(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> float:
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise InvalidArgumentError(
            f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gaussian_window()
    if a.ndim == 2:
        return _ssim_single(a, b, w)
    return float(np.mean([_ssim_single(a[..., c], b[..., c], w)
                          for c in range(a.shape[-1])]))


@dataclass
class EvalRecord:
    scene_id: int
    psnr_hazy: float
    ssim_hazy: float
    psnr_dehazed: float | None = None
    ssim_dehazed: float | None = None
    depth_l1_hazy: float | None = None
    depth_l1_dehazed: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def summarize(records: list[EvalRecord]) -> dict:
    """Column means over records (None columns are skipped)."""
    out = {"count": len(records)}
    for key in ("psnr_hazy", "ssim_hazy", "psnr_dehazed", "ssim_dehazed",
                "depth_l1_hazy", "depth_l1_dehazed"):
        vals = [getattr(r, key) for r in records if getattr(r, key) is not None]
        if vals:
            out[key] = float(np.mean(vals))
    return out


def format_records_table(records: list[EvalRecord], summary: dict) -> str:
    """Aligned plain-text table: one row per scene plus the mean row."""
    cols = ["scene_id", "psnr_hazy", "psnr_dehazed", "ssim_hazy",
            "ssim_dehazed", "depth_l1_hazy", "depth_l1_dehazed"]

    def fmt(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    rows = [cols]
    for r in records:
        rows.append([fmt(getattr(r, c)) for c in cols])
    rows.append(["mean"] + [fmt(summary.get(c)) for c in cols[1:]])
    widths = [max(len(row[i]) for row in rows) for i in range(len(cols))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths))
                     for row in rows)


def _load_networks(checkpoint_path):
    from .trainer import TrainConfig, Trainer, build_networks  # lazy: avoids a cycle
    arrays, header = fileio.load_checkpoint(checkpoint_path)
    cfg = TrainConfig.from_dict(header["config"])
    dehaze_net, depth_net, _, _ = build_networks(cfg)
    from .layers import tree_unflatten
    dehaze = tree_unflatten({k[len("dehaze."):]: v for k, v in arrays.items()
                             if k.startswith("dehaze.")})
    depth = tree_unflatten({k[len("depth."):]: v for k, v in arrays.items()
                            if k.startswith("depth.")})
    return cfg, dehaze_net, depth_net, dehaze, depth


def _oracle_dehaze(clear_png: np.ndarray, depth_m: np.ndarray, beta: float,
                   airlight) -> np.ndarray:
    """Re-synthesize the haze in float and invert it analytically.

    Pixels under the transmission guard are inverted with T clamped to the
    guard, which degrades them honestly instead of dividing by ~0.
    """
    t = transmission(depth_m.astype(np.float64), beta)[:, :, None]
    a = np.asarray(airlight, dtype=np.float64)
    hazy = clear_png * t + (1.0 - t) * a
    ts = np.maximum(t, T_MIN)
    return np.clip((hazy - (1.0 - ts) * a) / ts, 0.0, 1.0)


def evaluate_split(manifest_path, checkpoint=None, dehazer: str | None = None,
                   out_dir=None, limit: int | None = None):
    """Score a dataset split; returns (records, summary).

    ``dehazer`` selects the restoration route: None (hazy metrics only),
    "identity", "oracle", or "checkpoint" (requires ``checkpoint``).  With
    ``out_dir`` set, per-scene |dehazed - clear| difference grids are written.
    Scenes are processed in parallel when DTCMP_NUM_THREADS > 1.
    """
    manifest, root = load_manifest(manifest_path)
    entries = manifest["entries"][:limit] if limit else manifest["entries"]
    if dehazer == "checkpoint" or (dehazer is None and checkpoint is not None):
        dehazer = "checkpoint"
        if checkpoint is None:
            raise InvalidArgumentError("checkpoint dehazer needs a checkpoint path")
        cfg, dehaze_net, depth_net, p_dehaze, p_depth = _load_networks(checkpoint)

    diff_dir = None
    if out_dir is not None:
        diff_dir = Path(out_dir)
        diff_dir.mkdir(parents=True, exist_ok=True)

    def one(entry) -> EvalRecord:
        clear = fileio.read_png(root / entry["clear"])
        hazy = fileio.read_png(root / entry["hazy"])
        depth_m = fileio.read_pfm(root / entry["depth"])
        rec = EvalRecord(scene_id=entry["scene_id"],
                         psnr_hazy=psnr(hazy, clear), ssim_hazy=ssim(hazy, clear))
        dehazed = None
        if dehazer == "identity":
            dehazed = hazy
        elif dehazer == "oracle":
            dehazed = _oracle_dehaze(clear, depth_m, entry["beta"], entry["A"])
        elif dehazer == "checkpoint":
            from .autodiff import Tensor
            x = Tensor(hazy.transpose(2, 0, 1)[None].astype(np.float32))
            m = depth_net.forward_batch(p_depth, x)
            gt_norm = normalize_depth(depth_m)
            rec.depth_l1_hazy = float(np.abs(m.data[0, 0] - gt_norm).mean())
            m_in = m if cfg.use_de else Tensor(np.zeros_like(m.data))
            out, _ = dehaze_net.forward_batch(p_dehaze, x, m_in)
            dehazed = out.data[0].transpose(1, 2, 0).astype(np.float64)
            md = depth_net.forward_batch(p_depth, out)
            rec.depth_l1_dehazed = float(np.abs(md.data[0, 0] - gt_norm).mean())
        if dehazed is not None:
            dehazed = fileio.quantize01(dehazed)
            rec.psnr_dehazed = psnr(dehazed, clear)
            rec.ssim_dehazed = ssim(dehazed, clear)
            if diff_dir is not None:
                grid = np.concatenate(
                    [hazy, dehazed, clear, np.clip(np.abs(dehazed - clear) * 4.0, 0, 1)],
                    axis=1)
                fileio.write_png(diff_dir / f"diff_{entry['scene_id']}.png", grid)
        return rec

    n_workers = worker_threads()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            records = list(pool.map(one, entries))
    else:
        records = [one(e) for e in entries]
    summary = summarize(records)
    if diff_dir is not None:
        (diff_dir / "summary.json").write_text(json.dumps(
            {"summary": summary, "records": [r.as_dict() for r in records]}, indent=1))
    return records, summary
