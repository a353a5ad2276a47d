"""
services/features.py

Hand-crafted feature extraction for the correlation-filter tracker.

A search region is sampled around a center at an exact sub-pixel scale
(bilinear, clamped-edge replication) on the model resolution and turned
into a D-channel cell grid:

- gray (1 channel): per-cell mean intensity, mean-centered to [-0.5, 0.5].
- hog (31 channels): Felzenszwalb gradient-orientation histograms
  (18 contrast-sensitive + 9 contrast-insensitive orientations + 4 texture energies).
- cn (10 channels): color-attribute probabilities through a 32768-entry RGB lookup table.

Color-attribute table layout: 32768 rows x 10 columns, row-major,
little-endian float32. Row index = R//8 + 32*(G//8) + 1024*(B//8).

Usage:
    from services.features import PatchSpec, crop_patch, extract_features
    patch = crop_patch(frame.pixels, PatchSpec(center=(120, 90), size=(64, 64), target=(64, 64)))
    fmap = extract_features(patch, cell_size=4, channels=("gray", "hog"), window=True)
"""

import functools
import logging
import os
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import cv2
import numpy as np

from services.dsp import hann_window

logger = logging.getLogger(__name__)

GROUP_SIZES: Dict[str, int] = {"gray": 1, "hog": 31, "cn": 10}
GROUP_ORDER = ("gray", "hog", "cn")

HOG_ORIENTATIONS = 18
HOG_TRUNCATION = 0.2
HOG_TEXTURE_WEIGHT = 0.2357
HOG_EPS = 1e-4

COLOR_TABLE_ROWS = 32768
COLOR_TABLE_COLS = 10
DEFAULT_COLOR_TABLE = os.path.join(os.path.dirname(__file__), "..", "resources", "color_names.bin")

# sRGB prototypes of the eleven basic color terms, in table column order
BASIC_COLOR_NAMES = (
    "black", "blue", "brown", "grey", "green", "orange", "pink", "purple", "red", "white", "yellow",
)
BASIC_COLORS_RGB = np.array([
    [0, 0, 0], [0, 0, 255], [139, 69, 19], [128, 128, 128], [0, 128, 0], [255, 165, 0],
    [255, 192, 203], [128, 0, 128], [255, 0, 0], [255, 255, 255], [255, 255, 0],
], dtype=np.uint8)


class FeatureError(ValueError):
    """Unknown channel group, bad patch geometry or missing lookup resource."""


@dataclass(frozen=True)
class PatchSpec:
    center: Tuple[float, float]
    size: Tuple[float, float]
    target: Tuple[int, int]

    def __post_init__(self):
        if min(self.size) <= 0 or min(self.target) <= 0:
            raise FeatureError(f"patch sizes must be positive: size={self.size}, target={self.target}")


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray
    cell_size: int
    channels: Tuple[str, ...]
    windowed: bool = False

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def depth(self) -> int:
        return self.data.shape[2]


def crop_patch(pixels: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """
    Sample a ``spec.size`` region around ``spec.center`` onto a ``spec.target`` grid.

    Output pixel (u, v) reads the frame at
    ``(cx + (u - tw // 2) * sx, cy + (v - th // 2) * sy)`` with ``s = size / target``,
    so every scale (the unit one included) goes through the same bilinear
    sampler and the scale is never rounded to whole pixels. Pixels outside the
    frame repeat the nearest edge pixel, so any center is valid.
    Returns a float64 array of shape (target_h, target_w, channels).
    """
    tw, th = spec.target
    sx, sy = spec.size[0] / tw, spec.size[1] / th
    cx, cy = spec.center
    inverse = np.array([
        [sx, 0.0, cx - (tw // 2) * sx],
        [0.0, sy, cy - (th // 2) * sy],
    ])
    patch = cv2.warpAffine(
        pixels.astype(np.float32), inverse, (tw, th),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP, borderMode=cv2.BORDER_REPLICATE,
    )
    if patch.ndim == 2:
        patch = patch[:, :, None]
    return patch.astype(np.float64)


def _cell_mean(channel_stack: np.ndarray, cell_size: int) -> np.ndarray:
    h, w, c = channel_stack.shape
    return channel_stack.reshape(h // cell_size, cell_size, w // cell_size, cell_size, c).mean(axis=(1, 3))


def gray_feature(patch: np.ndarray, cell_size: int) -> np.ndarray:
    if patch.shape[2] == 3:
        gray = patch[..., 0] * 0.299 + patch[..., 1] * 0.587 + patch[..., 2] * 0.114
    else:
        gray = patch[..., 0]
    return _cell_mean(gray[..., None] / 255.0 - 0.5, cell_size)


def _gradients(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel gradient magnitude and orientation bin from the strongest color channel."""
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = padded[1:-1, 2:, :] - padded[1:-1, :-2, :]
    dy = padded[2:, 1:-1, :] - padded[:-2, 1:-1, :]
    strongest = np.argmax(dx ** 2 + dy ** 2, axis=2)[..., None]
    dx = np.take_along_axis(dx, strongest, axis=2)[..., 0]
    dy = np.take_along_axis(dy, strongest, axis=2)[..., 0]
    magnitude = np.sqrt(dx ** 2 + dy ** 2)
    angle = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    bins = np.rint(angle / (2 * np.pi / HOG_ORIENTATIONS)).astype(np.int64) % HOG_ORIENTATIONS
    return magnitude, bins


def hog_feature(patch: np.ndarray, cell_size: int) -> np.ndarray:
    """31-channel Felzenszwalb histogram of oriented gradients per cell."""
    h, w = patch.shape[:2]
    hc, wc = h // cell_size, w // cell_size
    magnitude, bins = _gradients(patch / 255.0)

    rows = np.arange(h) // cell_size
    cols = np.arange(w) // cell_size
    cell = rows[:, None] * wc + cols[None, :]
    flat = (cell * HOG_ORIENTATIONS + bins).ravel()
    hist = np.bincount(flat, weights=magnitude.ravel(), minlength=hc * wc * HOG_ORIENTATIONS)
    hist = hist.reshape(hc, wc, HOG_ORIENTATIONS)

    half = HOG_ORIENTATIONS // 2
    insensitive = hist[..., :half] + hist[..., half:]
    energy = np.pad(np.sum(insensitive ** 2, axis=2), 1, mode="edge")
    blocks = energy[:-1, :-1] + energy[1:, :-1] + energy[:-1, 1:] + energy[1:, 1:]
    norms = [
        1.0 / np.sqrt(blocks[r:r + hc, c:c + wc] + HOG_EPS)
        for r in (0, 1) for c in (0, 1)
    ]

    sens_parts = [np.minimum(hist * n[..., None], HOG_TRUNCATION) for n in norms]
    insens_parts = [np.minimum(insensitive * n[..., None], HOG_TRUNCATION) for n in norms]
    texture = [HOG_TEXTURE_WEIGHT * part.sum(axis=2) for part in sens_parts]
    return np.concatenate([
        0.5 * np.sum(sens_parts, axis=0),
        0.5 * np.sum(insens_parts, axis=0),
        np.stack(texture, axis=2),
    ], axis=2)


def _to_lab(rgb: np.ndarray) -> np.ndarray:
    """(N, 3) sRGB values in 0..255 -> (N, 3) CIE-Lab."""
    rgb = (np.asarray(rgb, dtype=np.float32) / 255.0).reshape(-1, 1, 3)
    return cv2.cvtColor(rgb, cv2.COLOR_RGB2Lab).reshape(-1, 3).astype(np.float64)


def build_color_table(temperature: float = 20.0) -> np.ndarray:
    """
    Derive a 32768 x 10 color-attribute table by soft assignment of every
    quantized RGB bin center to the eleven basic colors in CIE-Lab.
    The eleventh probability is dropped (it is one minus the others).
    """
    idx = np.arange(COLOR_TABLE_ROWS)
    rgb = np.stack([idx % 32, (idx // 32) % 32, idx // 1024], axis=1) * 8 + 4
    d2 = np.sum((_to_lab(rgb)[:, None, :] - _to_lab(BASIC_COLORS_RGB)[None, :, :]) ** 2, axis=2)
    logits = -d2 / (2.0 * temperature ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    prob = np.exp(logits)
    prob /= prob.sum(axis=1, keepdims=True)
    return prob[:, :COLOR_TABLE_COLS].astype(np.float32)


def color_table_row(r, g, b):
    """Table row of an RGB triple (scalars or integer arrays)."""
    return r // 8 + 32 * (g // 8) + 1024 * (b // 8)


def save_color_table(table: np.ndarray, path: str) -> str:
    if table.shape != (COLOR_TABLE_ROWS, COLOR_TABLE_COLS):
        raise FeatureError(f"color table must be {COLOR_TABLE_ROWS}x{COLOR_TABLE_COLS}, got {table.shape}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.{os.getpid()}.tmp"
    table.astype("<f4").tofile(tmp)
    os.replace(tmp, path)
    _read_color_table.cache_clear()
    return path


def resolve_color_table_path(path: Optional[str] = None) -> str:
    return path or os.getenv("KAOT_COLOR_TABLE") or DEFAULT_COLOR_TABLE


def _is_default_table(path: str) -> bool:
    return os.path.abspath(path) == os.path.abspath(DEFAULT_COLOR_TABLE)


@functools.lru_cache(maxsize=4)
def _read_color_table(path: str, mtime_ns: int) -> np.ndarray:
    table = np.fromfile(path, dtype="<f4")
    if table.size != COLOR_TABLE_ROWS * COLOR_TABLE_COLS:
        raise FeatureError(f"{path}: expected {COLOR_TABLE_ROWS * COLOR_TABLE_COLS} floats, got {table.size}")
    table = table.reshape(COLOR_TABLE_ROWS, COLOR_TABLE_COLS).astype(np.float64)
    table.setflags(write=False)
    return table


def load_color_table(path: str) -> np.ndarray:
    """
    Read a color-attribute table; cached per (path, modification time), so a
    table rewritten in place is picked up. The bundled default resource is
    materialized on first use when it is absent.
    """
    if not os.path.isfile(path):
        if not _is_default_table(path):
            raise FeatureError(f"missing color-attribute lookup table {path} (generate it with `main.py colortable`)")
        logger.info("color-attribute table not found, building %s", path)
        save_color_table(build_color_table(), path)
    return _read_color_table(path, os.stat(path).st_mtime_ns)


def cn_feature(patch: np.ndarray, cell_size: int, table: np.ndarray) -> np.ndarray:
    if patch.shape[2] != 3:
        raise FeatureError("color-attribute channels need a 3-channel patch")
    rgb = np.clip(np.floor(patch), 0, 255).astype(np.int64)
    index = color_table_row(rgb[..., 0], rgb[..., 1], rgb[..., 2])
    return _cell_mean(table[index], cell_size)


def extract_features(
    patch: np.ndarray,
    cell_size: int,
    channels: Sequence[str],
    window: bool = False,
    color_table: Optional[str] = None,
) -> FeatureMap:
    """
    Turn a pixel patch into a cell-grid FeatureMap.

    Args:
        patch: HxWx3 float/uint8 pixels, H and W divisible by ``cell_size``.
        cell_size: pixels per cell side.
        channels: enabled groups among "gray", "hog", "cn".
        window: multiply every channel by the cosine window.
        color_table: lookup-table path for "cn" (defaults to the shipped resource).
    """
    unknown = [c for c in channels if c not in GROUP_SIZES]
    if unknown:
        raise FeatureError(f"unknown channel group(s): {unknown}")
    h, w = patch.shape[:2]
    if h % cell_size or w % cell_size:
        raise FeatureError(f"patch {w}x{h} is not divisible by cell size {cell_size}")
    if patch.ndim == 2:
        patch = patch[:, :, None]
    patch = patch.astype(np.float64)

    blocks, names = [], []
    for group in GROUP_ORDER:
        if group not in channels:
            continue
        if group == "gray":
            blocks.append(gray_feature(patch, cell_size))
        elif group == "hog":
            blocks.append(hog_feature(patch, cell_size))
        else:
            blocks.append(cn_feature(patch, cell_size, load_color_table(resolve_color_table_path(color_table))))
        names.extend(f"{group}{i}" for i in range(GROUP_SIZES[group]))

    data = np.concatenate(blocks, axis=2)
    if window:
        data = data * hann_window(data.shape[0], data.shape[1])[:, :, None]
    return FeatureMap(data=data, cell_size=cell_size, channels=tuple(names), windowed=window)
