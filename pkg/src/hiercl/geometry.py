"""Rotated boxes, convex polygon clipping, rotated IoU and the L1 box cost."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

CLIP_EPS = _kernels.CLIP_EPS
HALF_PI = 0.5 * math.pi


def wrap_angle(theta: float) -> float:
    """Map an angle to [-pi/2, pi/2)."""
    t = math.fmod(theta + HALF_PI, math.pi)
    if t < 0:
        t += math.pi
    t -= HALF_PI
    return -HALF_PI if t >= HALF_PI else t


@dataclass(frozen=True)
class RotatedBox:
    """Oriented rectangle. ``theta`` runs from the x-axis to the ``w`` edge.

    Boxes are stored in long-edge form (``w >= h``) with ``theta`` in
    [-pi/2, pi/2), so one rectangle has one parameterization (squares aside).
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        w, h, theta = float(self.w), float(self.h), float(self.theta)
        if not (w > 0 and h > 0):
            raise ValueError("box sides must be positive")
        if h > w:
            w, h, theta = h, w, theta + HALF_PI
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "theta", wrap_angle(theta))

    @classmethod
    def from_degrees(cls, cx, cy, w, h, deg):
        return cls(cx, cy, w, h, math.radians(deg))

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h, self.theta])

    @property
    def area(self) -> float:
        return self.w * self.h


def boxes_to_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 5).astype(np.float64)
    return np.array([b.as_array() for b in boxes], dtype=np.float64).reshape(-1, 5)


def box_to_polygon(b: RotatedBox) -> np.ndarray:
    """Four CCW corner points as a (4, 2) array."""
    return _kernels.corners_numpy(b.as_array()[None])[0]


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for CCW)."""
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _dedupe(points, tol=1e-12):
    out = []
    for p in points:
        if not out or abs(p[0] - out[-1][0]) > tol or abs(p[1] - out[-1][1]) > tol:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= tol and abs(out[0][1] - out[-1][1]) <= tol:
        out.pop()
    return out


def intersect_convex(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of convex CCW polygon ``p`` by convex CCW ``q``.

    Returns a (k, 2) array, empty (0, 2) when the overlap has no area.
    Points within ``CLIP_EPS`` of a clip edge count as inside.
    """
    out = [tuple(v) for v in np.asarray(p, dtype=np.float64)]
    q = np.asarray(q, dtype=np.float64)
    for k in range(len(q)):
        if len(out) < 3:
            break
        ax, ay = q[k]
        bx, by = q[(k + 1) % len(q)]
        ex, ey = bx - ax, by - ay
        scale = math.hypot(ex, ey)
        if scale == 0:
            continue
        side = [(ex * (y - ay) - ey * (x - ax)) / scale for x, y in out]
        clipped = []
        for j, (cur, nxt) in enumerate(zip(out, out[1:] + out[:1])):
            sc, sn = side[j], side[(j + 1) % len(out)]
            cin, nin = sc >= -CLIP_EPS, sn >= -CLIP_EPS
            if cin:
                clipped.append(cur)
            if cin != nin:
                t = sc / (sc - sn)
                clipped.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
        out = _dedupe(clipped)
    if len(out) < 3 or polygon_area(np.array(out)) <= 0:
        return np.zeros((0, 2))
    return np.array(out)


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    inter_poly = intersect_convex(box_to_polygon(a), box_to_polygon(b))
    inter = min(polygon_area(inter_poly), a.area, b.area) if len(inter_poly) else 0.0
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def rotated_iou_pairs(A, B) -> np.ndarray:
    """IoU of row-aligned box arrays, via the compiled kernel when available."""
    return _kernels.iou_pairs(boxes_to_array(A), boxes_to_array(B))


def rotated_iou_matrix(A, B) -> np.ndarray:
    return _kernels.iou_matrix(boxes_to_array(A), boxes_to_array(B))


def l1_cost(a: RotatedBox, b: RotatedBox, norm: float = 1.0) -> float:
    """|d(cx, cy, w, h)| / norm summed, plus the wrapped angle gap over pi."""
    if norm <= 0:
        raise ValueError("norm must be positive")
    lin = abs(a.cx - b.cx) + abs(a.cy - b.cy) + abs(a.w - b.w) + abs(a.h - b.h)
    return lin / norm + abs(wrap_angle(a.theta - b.theta)) / math.pi
