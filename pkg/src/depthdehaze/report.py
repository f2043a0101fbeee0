"""Rendering of training logs: metric curves, summary tables, image grids."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

REFERENCE_NOTE = (
    "Note: published full-scale results for this family of dehazing models "
    "(PSNR 42.18 dB, SSIM 0.9967 on SOTS-indoor) are quoted as context only. "
    "This desk-scale build trains small networks on small synthetic scenes, "
    "does not attempt to reproduce those numbers, and no test asserts them."
)


def read_log(log_path) -> list[dict]:
    lines = []
    with open(log_path) as f:
        for raw in f:
            raw = raw.strip()
            if raw:
                lines.append(json.loads(raw))
    return lines


def _series(log: list[dict]) -> dict:
    """Split a JSONL log into {metric: (steps, values)} series."""
    out: dict = {}
    for line in log:
        step = line.get("step", 0)
        for k, v in line.items():
            if k == "step":
                continue
            if k == "eval":
                for ek, ev in v.items():
                    out.setdefault(f"eval_{ek}", ([], []))
                    out[f"eval_{ek}"][0].append(step)
                    out[f"eval_{ek}"][1].append(ev)
            elif isinstance(v, (int, float)):
                out.setdefault(k, ([], []))
                out[k][0].append(step)
                out[k][1].append(v)
    return out


def render_report(log_path, out_dir) -> list[Path]:
    """Write one curve PNG per metric plus summary.{txt,json}; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = read_log(log_path)
    series = _series(log)
    written = []
    for name, (steps, vals) in sorted(series.items()):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(steps, vals, lw=1.2)
        ax.set_xlabel("step")
        ax.set_ylabel(name)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out / f"curve_{name}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)

    final_eval = next((l["eval"] for l in reversed(log) if "eval" in l), {})
    first_eval = next((l["eval"] for l in log if "eval" in l), {})
    rows = [("metric", "step 0", "final")]
    for k in sorted(set(first_eval) | set(final_eval)):
        rows.append((k, _fmt(first_eval.get(k)), _fmt(final_eval.get(k))))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    table = "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)

    summary_txt = out / "summary.txt"
    summary_txt.write_text(table + "\n\n" + REFERENCE_NOTE + "\n")
    summary_json = out / "summary.json"
    summary_json.write_text(json.dumps(
        {"first_eval": first_eval, "final_eval": final_eval,
         "steps": log[-1].get("step", 0) if log else 0,
         "reference_note": REFERENCE_NOTE}, indent=1))
    written += [summary_txt, summary_json]
    return written


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def render_image_grid(manifest_path, checkpoint_path, out_dir, n_scenes: int = 4):
    """Hazy / dehazed / clear / scaled-difference strips for a few scenes."""
    from .metrics import evaluate_split
    grid_dir = Path(out_dir) / "grids"
    records, _ = evaluate_split(manifest_path, checkpoint=checkpoint_path,
                                dehazer="checkpoint", out_dir=grid_dir,
                                limit=n_scenes)
    return sorted(grid_dir.glob("diff_*.png"))
