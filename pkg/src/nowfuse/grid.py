"""Core grid containers, resampling, and the NFG1 binary file format.

Conventions: row-major (h, w) layout, origin top-left, y down. Grid and
mask values are stored as 32-bit floats; arithmetic accumulates in 64-bit
and rounds once at the end, so results do not depend on traversal order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

NFG_MAGIC = b"NFG1"
NFW_MAGIC = b"NFW1"

_HEADER = struct.Struct("<III")  # height, width, channels


class NfgFormatError(ValueError):
    """Raised for malformed NFG1/NFW1 files."""


def _as_field(values, name: str = "field") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} dimensions must be at least 1x1")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Single-channel 2-D field of finite float32 values."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_field(self.values, type(self).__name__))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


class MaskGrid(Grid):
    """Grid of confidence values constrained to [0, 1]."""

    def __post_init__(self):
        super().__post_init__()
        v = self.values
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement in pixels: dx along x (columns), dy along y (rows)."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dx", _as_field(self.dx, "dx"))
        object.__setattr__(self, "dy", _as_field(self.dy, "dy"))
        if self.dx.shape != self.dy.shape:
            raise ValueError("dx and dy must have equal shapes")

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape


@dataclass(frozen=True, eq=False)
class Tensor4:
    """(batch, channels, height, width) activation block, float32 or float64."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ValueError(f"Tensor4 must be 4-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("Tensor4 contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape


def bilinear_sample(field: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample `field` at fractional (y, x) positions, clamp-to-edge, 64-bit math."""
    h, w = field.shape
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, float(h - 1))
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, float(w - 1))
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    f = field.astype(np.float64, copy=False)
    top = f[y0, x0] * (1.0 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1.0 - fx) + f[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _axis_coords(n_src: int, n_dst: int) -> np.ndarray:
    # Align-corners mapping; a single-sample target reads the source center.
    if n_dst == 1:
        return np.full(1, (n_src - 1) / 2.0)
    return np.arange(n_dst, dtype=np.float64) * ((n_src - 1) / (n_dst - 1))


def resample_bilinear(g: Grid, new_h: int, new_w: int) -> Grid:
    """Resize by bilinear interpolation with edge clamping."""
    if new_h < 1 or new_w < 1:
        raise ValueError("target dimensions must be at least 1x1")
    ys = _axis_coords(g.height, new_h)
    xs = _axis_coords(g.width, new_w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = bilinear_sample(g.values, yy, xx)
    return Grid(out.astype(np.float32))


def clamp01(g: Grid) -> Grid:
    """Clamp every value into [0, 1]."""
    return Grid(np.clip(g.values, 0.0, 1.0))


# ---------------------------------------------------------------------------
# NFG1 container: magic, u32 LE height/width/channels, then channel-major
# row-major 32-bit LE floats.

def write_nfg(path, channels: np.ndarray) -> None:
    """Write a (c, h, w) float array as an NFG1 file (atomic: temp + rename)."""
    arr = np.asarray(channels, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (c, h, w) payload, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("refusing to write non-finite payload")
    c, h, w = arr.shape
    blob = NFG_MAGIC + _HEADER.pack(h, w, c) + arr.astype("<f4").tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_nfg(path) -> np.ndarray:
    """Read an NFG1 file into a (c, h, w) float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + _HEADER.size or blob[:4] != NFG_MAGIC:
        raise NfgFormatError(f"{path}: not an NFG1 file (bad magic)")
    h, w, c = _HEADER.unpack_from(blob, 4)
    if h < 1 or w < 1 or c < 1:
        raise NfgFormatError(f"{path}: degenerate dimensions {c}x{h}x{w}")
    payload = blob[4 + _HEADER.size:]
    expected = c * h * w * 4
    if len(payload) != expected:
        raise NfgFormatError(
            f"{path}: payload length {len(payload)} does not match {c}x{h}x{w} header"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float32)
    if not np.isfinite(arr).all():
        raise NfgFormatError(f"{path}: payload contains non-finite values")
    return arr


def write_grid(g: Grid, path) -> None:
    write_nfg(path, g.values[None])


def read_grid(path) -> Grid:
    arr = read_nfg(path)
    if arr.shape[0] != 1:
        raise NfgFormatError(f"{path}: expected 1 channel, found {arr.shape[0]}")
    return Grid(arr[0])


def read_mask(path) -> MaskGrid:
    arr = read_nfg(path)
    if arr.shape[0] != 1:
        raise NfgFormatError(f"{path}: expected 1 channel, found {arr.shape[0]}")
    return MaskGrid(arr[0])


def write_flow(f: FlowField, path) -> None:
    write_nfg(path, np.stack([f.dx, f.dy]))


def read_flow(path) -> FlowField:
    arr = read_nfg(path)
    if arr.shape[0] != 2:
        raise NfgFormatError(f"{path}: expected 2 channels, found {arr.shape[0]}")
    return FlowField(arr[0], arr[1])


def export_png(g: Grid, path) -> None:
    """Render as 8-bit grayscale: v -> round(255 * clamp01(v))."""
    from PIL import Image

    v = np.clip(g.values.astype(np.float64), 0.0, 1.0)
    img = np.rint(255.0 * v).astype(np.uint8)
    tmp = f"{path}.tmp.{os.getpid()}"
    Image.fromarray(img, mode="L").save(tmp, format="PNG")
    os.replace(tmp, path)
