"""Command-line entry point.

Subcommands: synth, train, eval, infer, ablate, report.  Every command writes
a run manifest into its output directory before doing work, never mutates its
inputs, and is deterministic given its arguments and seeds (timestamps in run
manifests aside).  Exit codes: 0 success, 1 runtime/input failure, 2 argument
errors (argparse's convention).  DTCMP_NUM_THREADS bounds worker threads.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, fileio
from .errors import InvalidArgumentError, NonFiniteLossError
from .scene import build_dataset, normalize_depth, DEPTH_MAX_M


def _write_run_manifest(out_dir: Path, command: str, args_snapshot: dict,
                        config_snapshot: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "args": {k: str(v) if isinstance(v, Path) else v
                 for k, v in args_snapshot.items() if not callable(v)},
        "config": config_snapshot,
        "version": __version__,
        "out_dir": str(out_dir),
        "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=1))


def _parse_ablate(assignments: str) -> dict:
    """'use_dp=false,use_de=true' -> {'use_dp': False, 'use_de': True}"""
    out = {}
    for pair in assignments.split(","):
        if not pair.strip():
            continue
        try:
            key, val = pair.split("=")
        except ValueError:
            raise InvalidArgumentError(f"bad ablation flag {pair!r}, expected name=bool")
        v = val.strip().lower()
        if v not in ("true", "false", "1", "0"):
            raise InvalidArgumentError(f"bad ablation value {val!r}")
        out[key.strip()] = v in ("true", "1")
    return out


def _resolve_config(args) -> "TrainConfig":
    """Precedence: CLI flag > config file > dataclass default."""
    from .trainer import TrainConfig
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    for name in ("steps", "batch", "crop", "seed", "holdout", "eval_every"):
        val = getattr(args, name, None)
        if val is not None:
            key = {"steps": "total_steps", "batch": "batch_size", "crop": "crop_size"}.get(name, name)
            base[key] = val
    if getattr(args, "ablate", None):
        flags = _parse_ablate(args.ablate)
        valid = {f.name for f in fields(TrainConfig)}
        for k in flags:
            if k not in valid:
                raise InvalidArgumentError(f"unknown ablation flag {k!r}")
        base.update(flags)
    return TrainConfig.from_dict(base)


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    _write_run_manifest(out, "synth", vars(args))
    build_dataset(args.scenes, seed=args.seed, dims=(args.size, args.size),
                  beta_range=tuple(args.beta), a_range=tuple(args.airlight),
                  out_dir=out)
    print(out / "manifest.json")
    return 0


def cmd_train(args) -> int:
    from .trainer import Trainer
    cfg = _resolve_config(args)
    out = Path(args.out)
    _write_run_manifest(out, "train", vars(args), cfg.to_dict())
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, args.data)
        trainer.cfg.total_steps = cfg.total_steps or trainer.cfg.total_steps
    else:
        trainer = Trainer(cfg, args.data)
    try:
        state, log = trainer.train(out_dir=out)
    except NonFiniteLossError as e:
        dump = out / f"nonfinite_step{e.step}.json"
        dump.write_text(json.dumps(
            {"step": e.step, "scene_ids": [int(s) for s in e.scene_ids], "terms": e.terms}, indent=1))
        print(f"aborted on non-finite loss; diagnostics: {dump}", file=sys.stderr)
        return 1
    print(out / f"checkpoint_{state.step:06d}.ckpt")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate_split, format_records_table
    out = Path(args.out)
    _write_run_manifest(out, "eval", vars(args))
    dehazer = args.dehazer
    if dehazer == "checkpoint" and not args.ckpt:
        raise InvalidArgumentError("--dehazer checkpoint requires --ckpt")
    records, summary = evaluate_split(args.data, checkpoint=args.ckpt,
                                      dehazer=dehazer, out_dir=out,
                                      limit=args.limit)
    (out / "eval_summary.json").write_text(json.dumps(summary, indent=1))
    table = format_records_table(records, summary)
    (out / "eval_summary.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_infer(args) -> int:
    from .autodiff import Tensor
    from .metrics import _load_networks
    out = Path(args.out)
    _write_run_manifest(out, "infer", vars(args))
    cfg, dehaze_net, depth_net, p_dehaze, p_depth = _load_networks(args.ckpt)
    hazy = fileio.read_png(args.image)
    x = Tensor(hazy.transpose(2, 0, 1)[None].astype(np.float32))
    if args.depth:
        depth_norm = normalize_depth(fileio.read_pfm(args.depth))
        m = Tensor(depth_norm[None, None].astype(np.float32))
    else:
        m = depth_net.forward_batch(p_depth, x)
    m_in = m if cfg.use_de else Tensor(np.zeros_like(m.data))
    dehazed, _ = dehaze_net.forward_batch(p_dehaze, x, m_in)
    stem = Path(args.image).stem
    fileio.write_png(out / f"{stem}_dehazed.png", dehazed.data[0].transpose(1, 2, 0))
    fileio.write_pfm(out / f"{stem}_depth.pfm",
                     (m.data[0, 0] * DEPTH_MAX_M).astype(np.float32))
    print(out / f"{stem}_dehazed.png")
    return 0


def cmd_ablate(args) -> int:
    from .trainer import Trainer, TrainConfig
    cfg = _resolve_config(args)
    out = Path(args.out)
    _write_run_manifest(out, "ablate", vars(args), cfg.to_dict())
    seeds = [int(s) for s in args.seeds.split(",")]
    variants = {"full": {}, "no_dp": {"use_dp": False}, "no_de": {"use_de": False}}
    results: dict = {v: {} for v in variants}
    for name, flags in variants.items():
        for seed in seeds:
            d = cfg.to_dict()
            d.update(flags)
            d["seed"] = seed
            run_cfg = TrainConfig.from_dict(d)
            run_dir = out / f"{name}_seed{seed}"
            _, log = Trainer(run_cfg, args.data).train(out_dir=run_dir)
            final = next(l["eval"] for l in reversed(log) if "eval" in l)
            results[name][seed] = final
            print(f"{name} seed={seed}: psnr_dehazed={final['psnr_dehazed']:.2f}")
    medians = {name: float(np.median([r["psnr_dehazed"] for r in by_seed.values()]))
               for name, by_seed in results.items()}
    payload = {"per_seed": {n: {str(s): r for s, r in by.items()} for n, by in results.items()},
               "median_psnr_dehazed": medians}
    (out / "ablation.json").write_text(json.dumps(payload, indent=1))
    print(json.dumps(medians, indent=1))
    return 0


def cmd_report(args) -> int:
    from .report import render_report, render_image_grid
    out = Path(args.out)
    _write_run_manifest(out, "report", vars(args))
    written = render_report(args.log, out)
    if args.data and args.ckpt:
        written += render_image_grid(args.data, args.ckpt, out)
    for p in written:
        print(p)
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="depthdehaze",
                                 description="synthetic-haze dehazing/depth toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic hazy dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, nargs=2, default=[0.03, 0.08],
                   metavar=("LO", "HI"))
    p.add_argument("--airlight", type=float, nargs=2, default=[0.7, 0.95],
                   metavar=("LO", "HI"))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="run the alternating training loop")
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file mirroring TrainConfig")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--holdout", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    p.add_argument("--ablate", help="comma-separated flag overrides, e.g. use_dp=false")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--dehazer", choices=["identity", "oracle", "checkpoint"],
                   default=None)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="dehaze one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="hazy PNG")
    p.add_argument("--depth", help="optional depth PFM (meters)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("ablate", help="train the ablation variants and compare")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--holdout", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="render curves and tables from a metrics log")
    p.add_argument("--log", required=True, help="metrics.jsonl from training")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset manifest for image grids")
    p.add_argument("--ckpt", help="checkpoint for image grids")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InvalidArgumentError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
