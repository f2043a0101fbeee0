"""Alternating dual-network training with difference-perception coupling.

Each iteration runs one depth update and one dehaze update (configurable
``a:b`` cadence):

* depth update: the dehazing net runs frozen; its output's image residual
  against ground truth drives a perceptron whose weights focus the depth
  consistency term; only the depth net and that perceptron move.
* dehaze update: the depth net runs frozen, its prediction on the hazy image
  feeds the dehazing net's first attention block; the depth residual of the
  dehazed output drives the second perceptron, whose weights focus the image
  L1 term; only the dehazing net and that perceptron move.

Coefficient matrices are detached where they weight a loss; the perceptrons
train through the concentration penalty.  Both learning rates follow cosine
annealing.  The loop is single-writer over all parameter state and is
bit-reproducible, including across checkpoint save/load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import fileio, losses
from .autodiff import Tensor
from .blocks import DifferencePerceptron
from .dehaze_net import DehazeNet
from .depth_net import DepthNet
from .errors import InvalidArgumentError, NonFiniteLossError
from .layers import collect_grads, tree_flatten, tree_unflatten, wrap_params
from .losses import (CONCENTRATION_WEIGHT, UNET_LOSS_WEIGHT, LossReport,
                     PerceptualExtractor, concentration_penalty, depth_loss,
                     dehaze_loss, unet_loss)
from .metrics import psnr, ssim
from .optim import AdamState, adam_init, adam_step, cosine_lr
from .scene import load_manifest, normalize_depth


@dataclass
class TrainConfig:
    eta_e: float = 1e-3
    eta_d: float = 1e-3
    eta_min: float = 1e-6
    total_steps: int = 500
    batch_size: int = 2
    crop_size: int = 64
    flip_prob: float = 0.5
    seed: int = 0
    holdout: int = 40
    widths: tuple = (16, 32, 64)
    window: int = 8
    depth_widths: tuple = (16, 24, 32)
    depth_growth: int = 8
    use_legm: bool = True
    use_mfm: bool = True
    use_msaam: bool = True
    use_de: bool = True
    use_dp: bool = True
    alternation: str = "1:1"
    eval_every: int = 100
    checkpoint_every: int = 0   # 0: only the final checkpoint

    def validate(self) -> None:
        if self.eta_e <= 0 or self.eta_d <= 0 or self.eta_min <= 0:
            raise InvalidArgumentError("learning rates must be positive")
        if self.crop_size % 8:
            raise InvalidArgumentError("crop_size must be a multiple of 8")
        if self.batch_size < 1 or self.total_steps < 0 or self.holdout < 1:
            raise InvalidArgumentError("batch_size/total_steps/holdout out of range")
        self.steps_per_iter()

    def steps_per_iter(self) -> tuple[int, int]:
        try:
            a, b = (int(v) for v in self.alternation.split(":"))
        except ValueError as e:
            raise InvalidArgumentError(f"bad alternation pattern {self.alternation!r}") from e
        if a < 1 or b < 1:
            raise InvalidArgumentError("alternation counts must be >= 1")
        return a, b

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["depth_widths"] = list(self.depth_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for k in ("widths", "depth_widths"):
            if k in d:
                d[k] = tuple(d[k])
        known = {f.name for f in cls.__dataclass_fields__.values()}
        cfg = cls(**{k: v for k, v in d.items() if k in known})
        cfg.validate()
        return cfg


@dataclass
class TrainState:
    step: int
    dehaze: dict
    depth: dict
    dp_for_depth: dict    # weights the depth loss; sees image residuals
    dp_for_dehaze: dict   # weights the dehaze loss; sees depth residuals
    opt_depth_side: AdamState = field(repr=False, default=None)
    opt_dehaze_side: AdamState = field(repr=False, default=None)


def build_networks(cfg: TrainConfig):
    dehaze = DehazeNet(widths=cfg.widths, window=cfg.window, use_legm=cfg.use_legm,
                       use_mfm=cfg.use_mfm, use_msaam=cfg.use_msaam)
    depth = DepthNet(widths=cfg.depth_widths, growth=cfg.depth_growth)
    dp_for_depth = DifferencePerceptron(in_channels=3)
    dp_for_dehaze = DifferencePerceptron(in_channels=1)
    return dehaze, depth, dp_for_depth, dp_for_dehaze


def load_training_arrays(manifest_path) -> dict:
    """Read every scene of a dataset into stacked float32 arrays."""
    manifest, root = load_manifest(manifest_path)
    hazy, clear, depth, ids = [], [], [], []
    for e in manifest["entries"]:
        hazy.append(fileio.read_png(root / e["hazy"]).transpose(2, 0, 1))
        clear.append(fileio.read_png(root / e["clear"]).transpose(2, 0, 1))
        depth.append(normalize_depth(fileio.read_pfm(root / e["depth"]))[None])
        ids.append(e["scene_id"])
    return {"hazy": np.stack(hazy).astype(np.float32),
            "clear": np.stack(clear).astype(np.float32),
            "depth": np.stack(depth).astype(np.float32),
            "scene_ids": np.array(ids, dtype=np.int64)}


class Trainer:
    """Owns all parameter state; see the module docstring for the protocol."""

    def __init__(self, config: TrainConfig, manifest_path, _resume: dict | None = None):
        config.validate()
        self.cfg = config
        self.data = load_training_arrays(manifest_path)
        n = self.data["hazy"].shape[0]
        if n < 1:
            raise InvalidArgumentError("dataset is empty")
        if config.holdout >= n:
            raise InvalidArgumentError(f"holdout {config.holdout} >= dataset size {n}")
        self.n_train = n - config.holdout
        h, w = self.data["hazy"].shape[2:]
        if h < config.crop_size or w < config.crop_size:
            raise InvalidArgumentError(
                f"scenes ({h}x{w}) smaller than crop_size {config.crop_size}")

        self.dehaze_net, self.depth_net, self.dp_for_depth, self.dp_for_dehaze = \
            build_networks(config)
        self.extractor = PerceptualExtractor(seed=config.seed)

        if _resume is None:
            seed = config.seed
            state = TrainState(
                step=0,
                dehaze=self.dehaze_net.init_params(seed),
                depth=self.depth_net.init_params(seed + 1),
                dp_for_depth=self.dp_for_depth.init_params(
                    np.random.default_rng(np.random.SeedSequence((seed, 0xA1)))),
                dp_for_dehaze=self.dp_for_dehaze.init_params(
                    np.random.default_rng(np.random.SeedSequence((seed, 0xA2)))),
            )
            state.opt_depth_side = adam_init(self._flat_depth_side(state))
            state.opt_dehaze_side = adam_init(self._flat_dehaze_side(state))
            self.state = state
            self.rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED)))
        else:
            self.state = _resume["state"]
            self.rng = np.random.default_rng()
            self.rng.bit_generator.state = _resume["rng_state"]

    # -- parameter bookkeeping ------------------------------------------

    @staticmethod
    def _flat_depth_side(state: TrainState) -> dict:
        flat = {f"depth.{k}": v for k, v in tree_flatten(state.depth).items()}
        flat.update({f"dp_d.{k}": v for k, v in tree_flatten(state.dp_for_depth).items()})
        return flat

    @staticmethod
    def _flat_dehaze_side(state: TrainState) -> dict:
        flat = {f"dehaze.{k}": v for k, v in tree_flatten(state.dehaze).items()}
        flat.update({f"dp_e.{k}": v for k, v in tree_flatten(state.dp_for_dehaze).items()})
        return flat

    # -- data ------------------------------------------------------------

    def sample_batch(self) -> dict:
        cfg = self.cfg
        n, bs, cs = self.n_train, cfg.batch_size, cfg.crop_size
        H, W = self.data["hazy"].shape[2:]
        idx = self.rng.integers(0, n, size=bs)
        r0 = self.rng.integers(0, H - cs + 1, size=bs)
        c0 = self.rng.integers(0, W - cs + 1, size=bs)
        flips = self.rng.random(size=(bs, 2)) < cfg.flip_prob
        out = {"scene_ids": self.data["scene_ids"][idx]}
        for key in ("hazy", "clear", "depth"):
            stack = np.empty((bs, self.data[key].shape[1], cs, cs), dtype=np.float32)
            for b, (i, r, c) in enumerate(zip(idx, r0, c0)):
                patch = self.data[key][i, :, r:r + cs, c:c + cs]
                if flips[b, 0]:
                    patch = patch[:, :, ::-1]
                if flips[b, 1]:
                    patch = patch[:, ::-1, :]
                stack[b] = patch
            out[key] = stack
        return out

    # -- update steps ------------------------------------------------------

    def step_depth(self, batch: dict, lr: float, report: LossReport) -> None:
        """Update the depth net (+ its perceptron); the dehazing net is frozen."""
        cfg = self.cfg
        if not cfg.use_de:
            raise InvalidArgumentError("step_depth requires use_de=True")
        hazy = Tensor(batch["hazy"])
        gt_depth = Tensor(batch["depth"])

        p_e = wrap_params(self.state.depth, True)
        m_tilde = self.depth_net.forward_batch(p_e, hazy)
        # dehazing pass fully frozen: raw arrays act as constants, no graph
        u_star, _ = self.dehaze_net.forward_batch(self.state.dehaze, hazy,
                                                  m_tilde.detach())
        m_star = self.depth_net.forward_batch(p_e, u_star.detach())

        aux = None
        weights = None
        p_dp = None
        if cfg.use_dp:
            residual = u_star.data - batch["clear"]
            p_dp = wrap_params(self.state.dp_for_depth, True)
            weights = self.dp_for_depth(p_dp, Tensor(residual))
            aux = concentration_penalty(weights, residual)

        loss = depth_loss(m_star, m_tilde, gt_depth, weights)
        report.depth_weighted = float(
            losses.weighted_mean_abs(m_star.detach(), gt_depth, weights and weights.detach()).data)
        report.depth_hazy = float(losses.weighted_mean_abs(m_tilde.detach(), gt_depth).data)
        if aux is not None:
            report.dp_depth_aux = float(aux.data)
            loss = loss + CONCENTRATION_WEIGHT * aux
        if not np.isfinite(loss.data):
            raise NonFiniteLossError(self.state.step, batch["scene_ids"], report.as_dict())
        loss.backward()

        grads = {f"depth.{k}": g for k, g in collect_grads(p_e).items()}
        if p_dp is not None:
            grads.update({f"dp_d.{k}": g for k, g in collect_grads(p_dp).items()})
        adam_step(self._flat_depth_side(self.state), grads, self.state.opt_depth_side, lr)

    def step_dehaze(self, batch: dict, lr: float, report: LossReport) -> None:
        """Update the dehazing net (+ its perceptron); the depth net is frozen."""
        cfg = self.cfg
        hazy = Tensor(batch["hazy"])
        clear = Tensor(batch["clear"])
        bs, _, cs, _ = batch["hazy"].shape

        if cfg.use_de:
            m_tilde = self.depth_net.forward_batch(self.state.depth, hazy)
        else:
            m_tilde = Tensor(np.zeros((bs, 1, cs, cs), dtype=np.float32))

        p_d = wrap_params(self.state.dehaze, True)
        u_star, taps = self.dehaze_net.forward_batch(p_d, hazy, m_tilde)

        if cfg.use_de:
            # frozen depth params, but gradients flow through the image input
            m_star = self.depth_net.forward_batch(self.state.depth, u_star)
            depth_residual = m_star - Tensor(batch["depth"])
        else:
            depth_residual = Tensor(np.zeros((bs, 1, cs, cs), dtype=np.float32))

        aux = None
        weights = None
        p_dp = None
        if cfg.use_dp:
            p_dp = wrap_params(self.state.dp_for_dehaze, True)
            weights = self.dp_for_dehaze(p_dp, depth_residual)
            aux = concentration_penalty(weights, depth_residual.data)

        total, terms = dehaze_loss(u_star, clear, hazy, weights, self.extractor)
        report.dehaze_weighted_l1 = terms["dehaze_weighted_l1"]
        report.contrastive_ratio = terms["contrastive_ratio"]

        f_gt = self.dehaze_net.unet_features(self.state.dehaze, clear)  # frozen pass
        lu = unet_loss(taps.unet_features, f_gt)
        report.unet = float(lu.data)
        total = total + UNET_LOSS_WEIGHT * lu
        if aux is not None:
            report.dp_dehaze_aux = float(aux.data)
            total = total + CONCENTRATION_WEIGHT * aux
        if not np.isfinite(total.data):
            raise NonFiniteLossError(self.state.step, batch["scene_ids"], report.as_dict())
        total.backward()

        grads = {f"dehaze.{k}": g for k, g in collect_grads(p_d).items()}
        if p_dp is not None:
            grads.update({f"dp_e.{k}": g for k, g in collect_grads(p_dp).items()})
        adam_step(self._flat_dehaze_side(self.state), grads, self.state.opt_dehaze_side, lr)

    # -- evaluation --------------------------------------------------------

    def dehaze_holdout(self, chunk: int = 8):
        """Run the current model over the held-out split; yields per-scene arrays."""
        lo = self.n_train
        n = self.data["hazy"].shape[0]
        for s in range(lo, n, chunk):
            e = min(s + chunk, n)
            hazy = Tensor(self.data["hazy"][s:e])
            if self.cfg.use_de:
                m = self.depth_net.forward_batch(self.state.depth, hazy)
            else:
                m = Tensor(np.zeros_like(self.data["depth"][s:e]))
            out, _ = self.dehaze_net.forward_batch(self.state.dehaze, hazy, m)
            yield s, e, out.data, m.data

    def evaluate(self) -> dict:
        sums = {"dehaze_l1": 0.0, "psnr_hazy": 0.0, "psnr_dehazed": 0.0,
                "ssim_hazy": 0.0, "ssim_dehazed": 0.0, "depth_l1_hazy": 0.0}
        count = 0
        for s, e, out, m in self.dehaze_holdout():
            for b in range(e - s):
                i = s + b
                clear = self.data["clear"][i].transpose(1, 2, 0)
                hazy = self.data["hazy"][i].transpose(1, 2, 0)
                dehazed = out[b].transpose(1, 2, 0)
                sums["dehaze_l1"] += float(np.abs(dehazed - clear).mean())
                sums["psnr_hazy"] += psnr(hazy, clear)
                sums["psnr_dehazed"] += psnr(dehazed, clear)
                sums["ssim_hazy"] += ssim(hazy, clear)
                sums["ssim_dehazed"] += ssim(dehazed, clear)
                if self.cfg.use_de:
                    sums["depth_l1_hazy"] += float(np.abs(m[b, 0] - self.data["depth"][i, 0]).mean())
                else:
                    dm = self.depth_net.forward_batch(self.state.depth,
                                                      Tensor(self.data["hazy"][i:i + 1]))
                    sums["depth_l1_hazy"] += float(np.abs(dm.data[0, 0] - self.data["depth"][i, 0]).mean())
                count += 1
        return {k: v / count for k, v in sums.items()}

    # -- loop ---------------------------------------------------------------

    def train(self, out_dir=None) -> tuple[TrainState, list[dict]]:
        cfg = self.cfg
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        log: list[dict] = []
        logf = open(out / "metrics.jsonl", "a") if out is not None else None

        def emit(line: dict) -> None:
            log.append(line)
            if logf is not None:
                logf.write(json.dumps(line) + "\n")
                logf.flush()

        try:
            n_dep, n_deh = cfg.steps_per_iter()
            if self.state.step == 0 and cfg.total_steps > 0:
                emit({"step": 0, "eval": self.evaluate()})
            while self.state.step < cfg.total_steps:
                k = self.state.step
                lr_e = cosine_lr(k, cfg.total_steps, cfg.eta_e, cfg.eta_min)
                lr_d = cosine_lr(k, cfg.total_steps, cfg.eta_d, cfg.eta_min)
                batch = self.sample_batch()
                report = LossReport()
                if cfg.use_de:
                    for _ in range(n_dep):
                        self.step_depth(batch, lr_e, report)
                for _ in range(n_deh):
                    self.step_dehaze(batch, lr_d, report)
                self.state.step = k + 1
                line = {"step": self.state.step, "lr_e": lr_e, "lr_d": lr_d,
                        **report.finalize().as_dict()}
                last = self.state.step == cfg.total_steps
                if (cfg.eval_every and self.state.step % cfg.eval_every == 0) or last:
                    line["eval"] = self.evaluate()
                emit(line)
                if out is not None and cfg.checkpoint_every \
                        and self.state.step % cfg.checkpoint_every == 0 and not last:
                    self.save_checkpoint(out / f"checkpoint_{self.state.step:06d}.ckpt")
            if out is not None:
                self.save_checkpoint(out / f"checkpoint_{self.state.step:06d}.ckpt")
        finally:
            if logf is not None:
                logf.close()
        return self.state, log

    # -- persistence ----------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        s = self.state
        arrays = {}
        arrays.update(self._flat_depth_side(s))
        arrays.update(self._flat_dehaze_side(s))
        for name, opt in (("opt_e", s.opt_depth_side), ("opt_d", s.opt_dehaze_side)):
            arrays.update({f"{name}.m.{k}": v for k, v in opt.m.items()})
            arrays.update({f"{name}.v.{k}": v for k, v in opt.v.items()})
        header = {"kind": "train_state", "step": s.step, "config": self.cfg.to_dict(),
                  "rng_state": _jsonable(self.rng.bit_generator.state),
                  "opt_t": {"opt_e": s.opt_depth_side.t, "opt_d": s.opt_dehaze_side.t}}
        fileio.save_checkpoint(path, arrays, header)

    @classmethod
    def from_checkpoint(cls, path, manifest_path) -> "Trainer":
        arrays, header = fileio.load_checkpoint(path)
        cfg = TrainConfig.from_dict(header["config"])
        groups = {"depth": {}, "dp_d": {}, "dehaze": {}, "dp_e": {},
                  "opt_e.m": {}, "opt_e.v": {}, "opt_d.m": {}, "opt_d.v": {}}
        for name, arr in arrays.items():
            for prefix in groups:
                if name.startswith(prefix + "."):
                    groups[prefix][name[len(prefix) + 1:]] = arr
                    break
        state = TrainState(
            step=int(header["step"]),
            dehaze=tree_unflatten(groups["dehaze"]),
            depth=tree_unflatten(groups["depth"]),
            dp_for_depth=tree_unflatten(groups["dp_d"]),
            dp_for_dehaze=tree_unflatten(groups["dp_e"]),
        )
        # moments are keyed exactly like the side-flattened params
        state.opt_depth_side = AdamState(m=groups["opt_e.m"], v=groups["opt_e.v"],
                                         t=int(header["opt_t"]["opt_e"]))
        state.opt_dehaze_side = AdamState(m=groups["opt_d.m"], v=groups["opt_d.v"],
                                          t=int(header["opt_t"]["opt_d"]))
        trainer = cls(cfg, manifest_path,
                      _resume={"state": state, "rng_state": header["rng_state"]})
        return trainer


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def train(config: TrainConfig, manifest_path, out_dir=None) -> tuple[TrainState, list[dict]]:
    """One-call training entry point."""
    return Trainer(config, manifest_path).train(out_dir)
