"""
ingest/synthetic.py

Deterministic synthetic sequences for desk-scale testing of the tracker.

A textured target moves over a low-contrast noise background along a
static, linear or sinusoidal path. Optional distractor patches follow the
target at a fixed offset and optional per-frame blur degrades the frames.

Key functions:
- `generate_synthetic(spec)`: SynthSpec -> Sequence (bit-identical for a fixed seed).
- `preset(name)`: the bundled fixtures ("static", "moving", "blur_distractor").

Usage:
    from ingest.synthetic import SynthSpec, generate_synthetic
    seq = generate_synthetic(SynthSpec(n_frames=50, path="linear", velocity=(1.0, 0.5)))
"""

import logging
import math
from typing import List, Literal, Optional, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, Field, field_validator

from ingest.sequences import BoundingBox, Frame, Sequence
from services.evaluation import iou

logger = logging.getLogger(__name__)

MAX_DISTRACTOR_IOU = 0.10


class SyntheticSpecError(ValueError):
    """The synthetic sequence cannot be generated as specified."""


class DistractorSpec(BaseModel):
    offset: Tuple[float, float]
    texture: Literal["target", "random"] = "random"
    seed: int = 1


class SynthSpec(BaseModel):
    name: str = "synthetic"
    width: int = Field(240, ge=16)
    height: int = Field(180, ge=16)
    n_frames: int = Field(100, ge=2)
    target_size: Tuple[int, int] = (32, 32)
    seed: int = 0
    path: Literal["static", "linear", "sinusoidal"] = "static"
    start: Optional[Tuple[float, float]] = None
    velocity: Tuple[float, float] = (1.0, 0.0)
    amplitude: Tuple[float, float] = (30.0, 15.0)
    period: float = 100.0
    texture_cell: int = Field(4, ge=1)
    background_contrast: float = Field(0.15, ge=0.0, le=1.0)
    distractors: List[DistractorSpec] = Field(default_factory=list)
    blur_radius: Optional[List[float]] = None
    scale_growth: float = Field(1.0, gt=0.0)

    @field_validator("target_size")
    @classmethod
    def _positive_size(cls, v):
        if v[0] < 1 or v[1] < 1:
            raise ValueError(f"target size must be positive, got {v}")
        return v


def make_texture(rng: np.random.Generator, size: Tuple[int, int], cell: int) -> np.ndarray:
    """Blocky random color texture of ``size`` = (w, h) pixels."""
    w, h = size
    blocks = rng.integers(0, 256, size=(math.ceil(h / cell), math.ceil(w / cell), 3), dtype=np.uint8)
    tex = np.repeat(np.repeat(blocks, cell, axis=0), cell, axis=1)
    return tex[:h, :w]


def _centers(spec: SynthSpec) -> List[Tuple[float, float]]:
    start = spec.start or (spec.width / 2.0, spec.height / 2.0)
    out = []
    for k in range(spec.n_frames):
        if spec.path == "static":
            cx, cy = start
        elif spec.path == "linear":
            cx = start[0] + spec.velocity[0] * k
            cy = start[1] + spec.velocity[1] * k
        else:
            phase = 2 * math.pi * k / spec.period
            cx = start[0] + spec.amplitude[0] * math.sin(phase)
            cy = start[1] + spec.amplitude[1] * math.sin(2 * phase)
        out.append((cx, cy))
    return out


def _paste(canvas: np.ndarray, patch: np.ndarray, x0: int, y0: int) -> None:
    """Paste with clipping at the canvas border."""
    h, w = patch.shape[:2]
    H, W = canvas.shape[:2]
    xa, ya = max(x0, 0), max(y0, 0)
    xb, yb = min(x0 + w, W), min(y0 + h, H)
    if xa >= xb or ya >= yb:
        return
    canvas[ya:yb, xa:xb] = patch[ya - y0:yb - y0, xa - x0:xb - x0]


def _box_at(center: Tuple[float, float], size: Tuple[int, int]) -> Tuple[BoundingBox, int, int]:
    # snap the corner to the pixel grid so the drawn pixels and the annotation agree exactly
    w, h = size
    x0 = int(round(center[0] - w / 2.0))
    y0 = int(round(center[1] - h / 2.0))
    return BoundingBox.from_corner(x0, y0, w, h), x0, y0


def generate_synthetic(spec: SynthSpec) -> Sequence:
    """
    Render a synthetic annotated sequence.

    Raises:
        SyntheticSpecError: the target path leaves the canvas, a distractor
            overlaps the target by more than 10% IoU, or the blur list length
            does not match the frame count.
    """
    if spec.blur_radius is not None and len(spec.blur_radius) != spec.n_frames:
        raise SyntheticSpecError(
            f"blur_radius has {len(spec.blur_radius)} entries for {spec.n_frames} frames"
        )
    rng = np.random.default_rng(spec.seed)
    background = rng.normal(0.5, spec.background_contrast / 2.0, size=(spec.height, spec.width, 3))
    background = cv2.GaussianBlur(background, (0, 0), 2.0)
    background = np.clip(background * 255.0, 0, 255).astype(np.uint8)

    base_tex = make_texture(rng, spec.target_size, spec.texture_cell)
    distractor_tex = []
    for d in spec.distractors:
        if d.texture == "target":
            distractor_tex.append(base_tex)
        else:
            distractor_tex.append(make_texture(np.random.default_rng(d.seed), spec.target_size, spec.texture_cell))

    frames, boxes = [], []
    for k, center in enumerate(_centers(spec)):
        growth = spec.scale_growth ** k
        size = (max(1, int(round(spec.target_size[0] * growth))), max(1, int(round(spec.target_size[1] * growth))))
        box, x0, y0 = _box_at(center, size)
        if x0 < 0 or y0 < 0 or x0 + size[0] > spec.width or y0 + size[1] > spec.height:
            raise SyntheticSpecError(
                f"frame {k + 1}: target box {box.to_corner()} exits the {spec.width}x{spec.height} canvas"
            )
        tex = base_tex if size == tuple(spec.target_size) else cv2.resize(
            base_tex, size, interpolation=cv2.INTER_LINEAR)

        canvas = background.copy()
        for d, dtex in zip(spec.distractors, distractor_tex):
            dcenter = (center[0] + d.offset[0], center[1] + d.offset[1])
            dtex = dtex if size == tuple(spec.target_size) else cv2.resize(dtex, size, interpolation=cv2.INTER_LINEAR)
            dbox, dx0, dy0 = _box_at(dcenter, size)
            overlap = iou(box, dbox)
            if overlap > MAX_DISTRACTOR_IOU:
                raise SyntheticSpecError(f"frame {k + 1}: distractor overlaps target (IoU={overlap:.3f})")
            _paste(canvas, dtex, dx0, dy0)
        _paste(canvas, tex, x0, y0)

        if spec.blur_radius is not None and spec.blur_radius[k] > 0:
            canvas = cv2.GaussianBlur(canvas, (0, 0), float(spec.blur_radius[k]))

        frames.append(Frame(index=k + 1, pixels=canvas))
        boxes.append(box)

    logger.debug("generated synthetic sequence %s (%d frames)", spec.name, len(frames))
    return Sequence(name=spec.name, frames=frames, groundtruth=boxes)


def preset(name: str, n_frames: int = 100, seed: int = 7) -> SynthSpec:
    """Bundled fixture specifications."""
    if name == "static":
        return SynthSpec(name="static", n_frames=n_frames, seed=seed, path="static")
    if name == "moving":
        return SynthSpec(
            name="moving", n_frames=n_frames, seed=seed, path="sinusoidal",
            amplitude=(30.0, 15.0), period=float(n_frames),
        )
    if name == "blur_distractor":
        blur = [2.5 if (k % 10) in (4, 5, 6) else 0.0 for k in range(n_frames)]
        return SynthSpec(
            name="blur_distractor", width=320, height=200, n_frames=n_frames, seed=seed,
            path="sinusoidal", amplitude=(40.0, 10.0), period=float(n_frames),
            distractors=[DistractorSpec(offset=(64.0, 0.0), texture="target")],
            blur_radius=blur,
        )
    raise SyntheticSpecError(f"unknown preset '{name}'")


PRESETS = ("static", "moving", "blur_distractor")
