"""Image, depth-map, and checkpoint file formats.

Images: 8-bit RGB PNG, quantized from [0, 1] by round(v * 255).
Depth / transmission: PFM (portable float map), little-endian, scale -1.0,
scanlines bottom-to-top per the format's convention.
Checkpoints: a JSON header (config, step, array directory) followed by the
raw little-endian float32 bytes of each named array, in directory order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CheckpointError, InvalidArgumentError

CHECKPOINT_MAGIC = b"DDZC"
CHECKPOINT_VERSION = 1


# -- PNG ---------------------------------------------------------------------

def write_png(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit RGB."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"expected (H, W, 3) image, got {image.shape}")
    q = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(Path(path), format="PNG")


def read_png(path) -> np.ndarray:
    """Read an RGB PNG as float64 in [0, 1]."""
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def quantize01(image: np.ndarray) -> np.ndarray:
    """Snap a float image to the 8-bit PNG grid (what write/read round-trips to)."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


# -- PFM ---------------------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    """Write an (H, W) float32 map as grayscale PFM (little-endian)."""
    if data.ndim != 2:
        raise InvalidArgumentError(f"expected (H, W) map, got {data.shape}")
    h, w = data.shape
    with open(Path(path), "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(Path(path), "rb") as f:
        if f.readline().strip() != b"Pf":
            raise InvalidArgumentError(f"{path}: not a grayscale PFM")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dt).reshape(h, w)
    return np.ascontiguousarray(data[::-1]).astype(np.float32)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, arrays: dict, header: dict) -> None:
    """Serialize named float32 arrays with a JSON header.

    ``arrays`` maps dotted names to ndarrays; anything not float32 is cast.
    ``header`` must be JSON-serializable and must not contain the reserved
    keys ``format_version`` or ``arrays``.
    """
    directory = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        directory.append({"name": name, "dtype": "float32", "shape": list(a.shape)})
        blobs.append(a.tobytes())
    full = {"format_version": CHECKPOINT_VERSION, **header, "arrays": directory}
    head = json.dumps(full).encode("utf-8")
    with open(Path(path), "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return (arrays, header) from :func:`save_checkpoint` output."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version")
        arrays = {}
        for rec in header.pop("arrays"):
            shape = tuple(rec["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(4 * n)
            if len(buf) != 4 * n:
                raise CheckpointError(f"{path}: truncated array {rec['name']}")
            arrays[rec["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    header.pop("format_version", None)
    return arrays, header
