"""
services/context.py

Context patches around the target and their penalization scores.

The P = 8 patches have the target's extent and sit on the compass ring
tangent to the target box: axis patches at distance w (east/west) or h
(north/south), diagonal patches at (±w, ±h). A patch's score is

    S_p = min(w, h) / |O O_p| * s

so closer patches are penalized harder.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ingest.sequences import BoundingBox
from services.features import FeatureMap

COMPASS_OFFSETS = (
    (1, 0), (-1, 0), (0, 1), (0, -1),
    (1, 1), (1, -1), (-1, 1), (-1, -1),
)


class ContextError(ValueError):
    pass


@dataclass(frozen=True)
class ContextPatch:
    center: Tuple[float, float]
    score: float
    features: Optional[FeatureMap] = None


@dataclass(frozen=True)
class ContextPatchSet:
    patches: Tuple[ContextPatch, ...] = field(default_factory=tuple)

    @property
    def count(self) -> int:
        return len(self.patches)

    @property
    def scores(self) -> List[float]:
        return [p.score for p in self.patches]

    @property
    def active(self) -> bool:
        return any(p.score > 0 for p in self.patches)

    @classmethod
    def empty(cls) -> "ContextPatchSet":
        return cls(patches=())


def place_patches(target: BoundingBox, count: int = 8) -> List[Tuple[float, float]]:
    """
    Centers of ``count`` target-sized context patches around ``target``.

    The first eight follow the compass ring; larger counts continue on
    further rings (2w, 2h, ...), which is outside the tested geometry.
    """
    centers = []
    ring = 1
    while len(centers) < count:
        for ox, oy in COMPASS_OFFSETS:
            if len(centers) == count:
                break
            centers.append((target.cx + ring * ox * target.w, target.cy + ring * oy * target.h))
        ring += 1
    return centers


def score_patch(target: BoundingBox, patch_center: Tuple[float, float], base_score: float) -> float:
    distance = math.hypot(patch_center[0] - target.cx, patch_center[1] - target.cy)
    if distance == 0:
        raise ContextError(f"context patch center coincides with the target center {target.center}")
    return min(target.w, target.h) / distance * base_score


def score_patches(target: BoundingBox, centers: List[Tuple[float, float]], base_score: float) -> List[float]:
    return [score_patch(target, c, base_score) for c in centers]
