"""Axis-aligned box obstacles and trajectory collision checks.

Collision means entering the strict interior of the box: points exactly on
a face and segments tangent to a face or corner do not collide, so paths
grazing the obstacle pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObstacleSpec:
    center: tuple[float, float]
    half_extents: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents))
        if any(h <= 0 for h in self.half_extents):
            raise ValueError("half_extents must be positive")

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.center) - np.array(self.half_extents)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.center) + np.array(self.half_extents)

    def contains(self, p) -> bool:
        """Strict-interior membership."""
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p > self.lo) and np.all(p < self.hi))

    def inflated(self, margin: float) -> "ObstacleSpec":
        """Box grown by a safety margin on every side."""
        return ObstacleSpec(self.center, tuple(h + margin for h in self.half_extents))


def segment_intersects_box(p0, p1, box: ObstacleSpec) -> bool:
    """True iff the open segment interior crosses the open box (slab method).

    Per axis we compute the open parameter interval where the segment lies
    strictly inside the slab; the segment collides iff the intersection of
    these intervals with [0, 1] has positive length.  A degenerate (single
    parameter) contact means the path only touches the boundary.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    lo, hi = box.lo, box.hi
    t_enter, t_exit = 0.0, 1.0
    for k in range(2):
        d = p1[k] - p0[k]
        if d == 0.0:
            if not (lo[k] < p0[k] < hi[k]):
                return False
            continue
        ta = (lo[k] - p0[k]) / d
        tb = (hi[k] - p0[k]) / d
        if ta > tb:
            ta, tb = tb, ta
        t_enter = max(t_enter, ta)
        t_exit = min(t_exit, tb)
        if t_enter >= t_exit:
            return False
    return t_enter < t_exit


def collision_check(points: np.ndarray, box: ObstacleSpec):
    """Scan a (T, 2) path for interior contact with the box.

    Returns (collided, first_index); first_index is the first sample that is
    strictly inside, or the start index of the first segment that crosses the
    box between two outside samples.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected a (T, 2) path, got shape {pts.shape}")
    for i in range(len(pts)):
        if box.contains(pts[i]):
            return True, i
        if i + 1 < len(pts) and segment_intersects_box(pts[i], pts[i + 1], box):
            return True, i
    return False, None
