"""Procedural scenes with exact depth, and the scattering haze model.

A scene is a stack of depth-ordered textured rectangles over a constant-depth
background plane.  Haze follows the physical model

    hazy = clear * T + (1 - T) * airlight,      T = exp(-beta * depth)

which is analytically invertible when T is known; the inversion doubles as
the test oracle for everything downstream.  All functions here are pure and
deterministic given their arguments; math runs in float64 so the round trip
survives small transmissions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .errors import DegenerateTransmissionError, InvalidArgumentError, ShapeMismatchError

DEPTH_MIN_M = 1.0
DEPTH_MAX_M = 50.0   # dataset-wide cap used to normalize depth for the networks
T_MIN = 1e-3         # inversion guard
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ClearScene:
    """Ground-truth radiance image (H, W, 3) in [0, 1] and depth (H, W) in meters."""
    image: np.ndarray
    depth: np.ndarray
    scene_id: int

    def validate(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ShapeMismatchError(f"image must be (H, W, 3), got {self.image.shape}")
        if self.depth.shape != self.image.shape[:2]:
            raise ShapeMismatchError("image and depth spatial dims differ")
        if not np.isfinite(self.image).all() or self.image.min() < 0 or self.image.max() > 1:
            raise InvalidArgumentError("image values must be finite and within [0, 1]")
        if not np.isfinite(self.depth).all() or (self.depth <= 0).any():
            raise InvalidArgumentError("depth values must be finite and strictly positive")


@dataclass(frozen=True)
class HazeParams:
    """Scattering coefficient (1/m) and airlight, scalar or (H, W, 3) map in (0, 1]."""
    beta: float
    airlight: float | np.ndarray = 0.8

    def validate(self) -> None:
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise InvalidArgumentError(f"beta must be finite and positive, got {self.beta}")
        a = np.asarray(self.airlight)
        if not np.isfinite(a).all() or (a <= 0).any() or (a > 1).any():
            raise InvalidArgumentError("airlight components must lie in (0, 1]")


@dataclass(frozen=True)
class HazyImage:
    image: np.ndarray          # (H, W, 3) in [0, 1]
    transmission: np.ndarray   # (H, W) in (0, 1)
    params: HazeParams
    scene_id: int


def normalize_depth(depth_m: np.ndarray) -> np.ndarray:
    """Meters -> [0, 1] by the fixed dataset-wide cap."""
    return np.clip(depth_m / DEPTH_MAX_M, 0.0, 1.0)


def generate_scene(seed: int, height: int, width: int, n_layers: int) -> ClearScene:
    """Deterministic textured scene: n_layers rectangles over a far plane.

    Depth is constant per layer (nearer layers occlude farther ones).  Each
    region's base brightness falls off linearly with its depth (a stand-in
    for distance shading), with random per-channel hue, a low-frequency
    gradient, and pixel noise on top, so monocular depth estimation on the
    clear image is well posed while colors stay varied.
    """
    if height < 16 or width < 16:
        raise InvalidArgumentError(f"dims must be >= 16, got {height}x{width}")
    if n_layers < 1:
        raise InvalidArgumentError(f"n_layers must be >= 1, got {n_layers}")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed) & 0xFFFFFFFFFFFF, height, width, n_layers)))

    yy = np.linspace(0.0, 1.0, height)[:, None]
    xx = np.linspace(0.0, 1.0, width)[None, :]

    def textured(depth_m, slope):
        value = 0.85 - 0.62 * (depth_m / DEPTH_MAX_M)
        base = value * (0.75 + 0.5 * rng.uniform(0.0, 1.0, 3))
        grad = slope[0] * yy + slope[1] * xx
        img = base[None, None, :] + grad[:, :, None] * 0.12
        img += rng.normal(0.0, 0.02, size=(height, width, 3))
        return img

    bg_depth = rng.uniform(35.0, DEPTH_MAX_M)
    image = textured(bg_depth, rng.uniform(-1, 1, 2))
    depth = np.full((height, width), bg_depth)

    layer_depths = np.sort(rng.uniform(DEPTH_MIN_M, 34.0, n_layers))[::-1]
    for d in layer_depths:  # far to near, so near occludes
        h = rng.integers(height // 5, max(height // 5 + 1, 3 * height // 4))
        w = rng.integers(width // 5, max(width // 5 + 1, 3 * width // 4))
        r0 = rng.integers(0, height - h + 1)
        c0 = rng.integers(0, width - w + 1)
        patch = textured(d, rng.uniform(-1, 1, 2))
        image[r0:r0 + h, c0:c0 + w] = patch[r0:r0 + h, c0:c0 + w]
        depth[r0:r0 + h, c0:c0 + w] = d

    scene = ClearScene(np.clip(image, 0.0, 1.0), depth, scene_id=int(seed))
    scene.validate()
    return scene


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    """T = exp(-beta * depth), elementwise."""
    depth = np.asarray(depth, dtype=np.float64)
    if not np.isfinite(depth).all() or (depth <= 0).any():
        raise InvalidArgumentError("depth must be finite and strictly positive")
    if not np.isfinite(beta) or beta <= 0:
        raise InvalidArgumentError(f"beta must be finite and positive, got {beta}")
    return np.exp(-beta * depth)


def apply_haze(scene: ClearScene, params: HazeParams) -> HazyImage:
    """Synthesize the hazy counterpart of a clear scene."""
    scene.validate()
    params.validate()
    a = np.asarray(params.airlight, dtype=np.float64)
    if a.ndim not in (0, 3):
        raise ShapeMismatchError(f"airlight must be scalar or (H, W, 3), got shape {a.shape}")
    if a.ndim == 3 and a.shape != scene.image.shape:
        raise ShapeMismatchError(
            f"airlight map {a.shape} does not match scene {scene.image.shape}")
    t = transmission(scene.depth, params.beta)
    hazy = scene.image * t[:, :, None] + (1.0 - t[:, :, None]) * a
    if hazy.min() < -1e-6 or hazy.max() > 1.0 + 1e-6:
        raise InvalidArgumentError("hazy image left [0, 1] by more than float tolerance")
    return HazyImage(np.clip(hazy, 0.0, 1.0), t, params, scene.scene_id)


def invert_haze_oracle(hazy: HazyImage) -> np.ndarray:
    """Analytic inversion (test oracle, not a dehazing method).

    Requires the stored transmission to stay above the guard everywhere.
    """
    t = hazy.transmission
    n_bad = int((t < T_MIN).sum())
    if n_bad:
        raise DegenerateTransmissionError(n_bad, T_MIN)
    a = np.asarray(hazy.params.airlight, dtype=np.float64)
    t3 = t[:, :, None]
    return (hazy.image - (1.0 - t3) * a) / t3


def build_dataset(n_scenes: int, seed: int, dims: tuple[int, int],
                  beta_range: tuple[float, float], a_range: tuple[float, float],
                  out_dir, n_layers_range: tuple[int, int] = (2, 5)) -> dict:
    """Write paired (clear PNG, depth PFM, hazy PNG) triples plus a manifest.

    Returns the manifest dict; the file lands at ``out_dir/manifest.json``.
    Deterministic given arguments: reruns produce byte-identical files.
    """
    if n_scenes < 1:
        raise InvalidArgumentError("n_scenes must be >= 1")
    h, w = dims
    for lo, hi, what in ((beta_range[0], beta_range[1], "beta_range"),
                         (a_range[0], a_range[1], "a_range")):
        if not (0 < lo <= hi):
            raise InvalidArgumentError(f"{what} must satisfy 0 < lo <= hi, got [{lo}, {hi}]")
    if a_range[1] > 1.0:
        raise InvalidArgumentError("a_range must stay within (0, 1]")

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e

    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFF))
    entries = []
    for i in range(n_scenes):
        scene_seed = int(rng.integers(0, 2 ** 48))
        n_layers = int(rng.integers(n_layers_range[0], n_layers_range[1] + 1))
        beta = float(rng.uniform(*beta_range))
        airlight = float(rng.uniform(*a_range))

        scene = generate_scene(scene_seed, h, w, n_layers)
        hazy = apply_haze(scene, HazeParams(beta, airlight))

        clear_name = f"scene_{i:04d}_clear.png"
        depth_name = f"scene_{i:04d}_depth.pfm"
        hazy_name = f"scene_{i:04d}_hazy.png"
        fileio.write_png(out / clear_name, scene.image)
        fileio.write_pfm(out / depth_name, scene.depth.astype(np.float32))
        fileio.write_png(out / hazy_name, hazy.image)
        entries.append({"scene_id": scene_seed, "clear": clear_name,
                        "depth": depth_name, "hazy": hazy_name,
                        "beta": beta, "A": airlight, "n_layers": n_layers})

    manifest = {"version": MANIFEST_VERSION, "seed": int(seed),
                "dims": [h, w], "entries": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise InvalidArgumentError(f"unsupported manifest version {manifest.get('version')}")
    return manifest, path.parent
