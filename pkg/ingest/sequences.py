"""
ingest/sequences.py

Image-sequence ingestion for the tracking pipeline.

Reads sequences laid out in the OTB / UAV123 directory convention:

    <root>/img/0001.jpg ... (lexicographically ordered)
    <root>/groundtruth_rect.txt   (one corner-form "x,y,w,h" line per frame)

Key functions:
- `parse_box_line(line, line_no, source)`: corner-form annotation line -> center-form BoundingBox.
- `read_boxes(path)` / `write_boxes(path, boxes)`: annotation text I/O (also the tracker result format).
- `load_sequence(root)`: images + ground truth -> Sequence.

Boxes are kept in continuous center form internally; corner form only
appears at the text boundary.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from typing import List, Sequence as SequenceT, Tuple

import cv2
import numpy as np

logger = logging.getLogger(__name__)

IMAGE_DIR = "img"
GROUNDTRUTH_FILE = "groundtruth_rect.txt"
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")


class SequenceError(Exception):
    """Base class for sequence ingestion failures."""


class MissingDirectoryError(SequenceError):
    pass


class UnreadableImageError(SequenceError):
    pass


class AnnotationCountMismatchError(SequenceError):
    pass


class InvalidBoxError(SequenceError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous center form (pixels)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box extent must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corner(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        return cls(cx=x + w / 2.0, cy=y + h / 2.0, w=w, h=h)

    def to_corner(self) -> Tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    @property
    def center(self) -> Tuple[float, float]:
        return (self.cx, self.cy)

    def moved_to(self, cx: float, cy: float) -> "BoundingBox":
        return BoundingBox(cx, cy, self.w, self.h)


@dataclass(frozen=True)
class Frame:
    """One RGB frame; ``index`` is 1-based."""

    index: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise SequenceError(f"frame {self.index}: expected HxWx3 pixels, got {self.pixels.shape}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise SequenceError(f"frame {self.index}: empty raster")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def gray(self) -> np.ndarray:
        return cv2.cvtColor(self.pixels, cv2.COLOR_RGB2GRAY)


@dataclass
class Sequence:
    name: str
    frames: List[Frame]
    groundtruth: List[BoundingBox] = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) != len(self.groundtruth):
            raise AnnotationCountMismatchError(
                f"sequence '{self.name}': {len(self.frames)} frames but {len(self.groundtruth)} boxes"
            )
        if len(self.frames) < 2:
            raise SequenceError(f"sequence '{self.name}' needs at least 2 frames, got {len(self.frames)}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def init_box(self) -> BoundingBox:
        return self.groundtruth[0]


_SEPARATORS = re.compile(r"[\s,]+")


def parse_box_line(line: str, line_no: int = 1, source: str = "<string>") -> BoundingBox:
    """Parse one corner-form ``x,y,w,h`` line (comma, tab or whitespace separated)."""
    text = line.strip()
    if "," in text:
        parts = [p.strip() for p in text.split(",")]
    else:
        parts = _SEPARATORS.split(text)
    parts = [p for p in parts if p]
    if len(parts) != 4:
        raise InvalidBoxError(f"{source}:{line_no}: expected 4 values, got {len(parts)} in '{text}'")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as e:
        raise InvalidBoxError(f"{source}:{line_no}: non-numeric value in '{text}'") from e
    if not (w > 0 and h > 0):
        raise InvalidBoxError(f"{source}:{line_no}: non-positive extent w={w}, h={h}")
    return BoundingBox.from_corner(x, y, w, h)


def read_boxes(path: str) -> List[BoundingBox]:
    boxes = []
    with open(path, "r") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            boxes.append(parse_box_line(line, line_no, path))
    return boxes


def format_box(box: BoundingBox) -> str:
    # 17 significant digits round-trip every float exactly
    return ",".join(format(v, ".17g") for v in box.to_corner())


def write_boxes(path: str, boxes: SequenceT[BoundingBox]) -> None:
    with open(path, "w") as f:
        for box in boxes:
            f.write(format_box(box) + "\n")


def read_image(path: str, index: int) -> Frame:
    bgr = cv2.imread(path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise UnreadableImageError(f"cannot read image {path}")
    return Frame(index=index, pixels=cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))


def list_images(root: str) -> List[str]:
    img_dir = os.path.join(root, IMAGE_DIR)
    if not os.path.isdir(img_dir):
        raise MissingDirectoryError(f"missing image directory {img_dir}")
    names = sorted(n for n in os.listdir(img_dir) if n.lower().endswith(IMAGE_SUFFIXES))
    return [os.path.join(img_dir, n) for n in names]


def load_sequence(root_path: str) -> Sequence:
    """
    Load a sequence directory.

    Args:
        root_path: directory holding ``img/`` and ``groundtruth_rect.txt``.

    Returns:
        Sequence named after the directory, frames sorted by filename.
    """
    if not os.path.isdir(root_path):
        raise MissingDirectoryError(f"missing sequence directory {root_path}")
    gt_path = os.path.join(root_path, GROUNDTRUTH_FILE)
    if not os.path.isfile(gt_path):
        raise MissingDirectoryError(f"missing annotation file {gt_path}")

    image_paths = list_images(root_path)
    boxes = read_boxes(gt_path)
    if len(image_paths) != len(boxes):
        first_bad = min(len(image_paths), len(boxes)) + 1
        raise AnnotationCountMismatchError(
            f"{gt_path}: {len(boxes)} annotation lines for {len(image_paths)} images "
            f"(first unmatched line {first_bad})"
        )

    frames = [read_image(p, i) for i, p in enumerate(image_paths, 1)]
    name = os.path.basename(os.path.normpath(root_path))
    logger.info("loaded sequence %s: %d frames", name, len(frames))
    return Sequence(name=name, frames=frames, groundtruth=boxes)


def write_sequence(seq: Sequence, root_path: str) -> str:
    """Write a sequence in the same directory layout ``load_sequence`` reads."""
    img_dir = os.path.join(root_path, IMAGE_DIR)
    os.makedirs(img_dir, exist_ok=True)
    for frame in seq.frames:
        path = os.path.join(img_dir, f"{frame.index:04d}.png")
        if not cv2.imwrite(path, cv2.cvtColor(frame.pixels, cv2.COLOR_RGB2BGR)):
            raise OSError(f"cannot write image {path}")
    write_boxes(os.path.join(root_path, GROUNDTRUTH_FILE), seq.groundtruth)
    return root_path
