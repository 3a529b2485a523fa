"""Oriented rectangle geometry: overlap tests and minimum separation.

Rectangles are centered boxes with a heading; vehicles map onto them via
(x, y, theta) and their body dimensions. Overlap uses the separating axis
theorem restricted to the 4 edge normals, which is exact for rectangles.
Minimum distance is the smallest distance between the two boundaries
(0 when the rectangles overlap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OrientedRect:
    cx: float
    cy: float
    half_len: float
    half_wid: float
    angle: float

    def corners(self) -> np.ndarray:
        """Corner coordinates, counter-clockwise, shape (4, 2)."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        local = np.array(
            [
                [self.half_len, self.half_wid],
                [-self.half_len, self.half_wid],
                [-self.half_len, -self.half_wid],
                [self.half_len, -self.half_wid],
            ]
        )
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    @property
    def circumradius(self) -> float:
        return math.hypot(self.half_len, self.half_wid)


def _axes(rect: OrientedRect) -> np.ndarray:
    c, s = math.cos(rect.angle), math.sin(rect.angle)
    return np.array([[c, s], [-s, c]])


def rect_overlap(a: OrientedRect, b: OrientedRect) -> bool:
    """True when the rectangles intersect (shared boundary counts)."""
    dx = b.cx - a.cx
    dy = b.cy - a.cy
    # cheap rejection: centers further apart than the two circumradii
    if math.hypot(dx, dy) > a.circumradius + b.circumradius:
        return False
    ca = a.corners()
    cb = b.corners()
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa = ca @ axis
        pb = cb @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def _seg_seg_distance(p1, p2, q1, q2) -> float:
    """Minimum distance between segments [p1,p2] and [q1,q2]."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    d1 = p2 - p1
    d2 = q2 - q1
    r = p1 - q1
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r

    if a <= 1e-18 and e <= 1e-18:
        return float(np.linalg.norm(r))
    if a <= 1e-18:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= 1e-18:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            if denom > 1e-18:
                s = np.clip((b * f - c * e) / denom, 0.0, 1.0)
            else:
                s = 0.0
            t = b * s + f
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > e:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
            else:
                t = t / e
    closest_p = p1 + d1 * s
    closest_q = q1 + d2 * t
    return float(np.linalg.norm(closest_p - closest_q))


def rect_min_distance(a: OrientedRect, b: OrientedRect) -> float:
    """Smallest boundary-to-boundary distance; 0 when overlapping."""
    if rect_overlap(a, b):
        return 0.0
    ca = a.corners()
    cb = b.corners()
    best = math.inf
    for i in range(4):
        p1, p2 = ca[i], ca[(i + 1) % 4]
        for j in range(4):
            q1, q2 = cb[j], cb[(j + 1) % 4]
            d = _seg_seg_distance(p1, p2, q1, q2)
            if d < best:
                best = d
    return best
