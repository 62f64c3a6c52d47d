"""Small 3D geometry helpers shared across modules."""

from __future__ import annotations

import numpy as np


def quat_rotate(q: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Rotate points by a unit quaternion given as (qx, qy, qz, qw).

    Args:
        q: Quaternion (4,), scalar-last convention.
        points: Points (N, 3).

    Returns:
        Rotated points (N, 3).
    """
    q = np.asarray(q, dtype=float)
    x, y, z, w = q
    n = np.dot(q, q)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"quaternion not normalized: |q|^2 = {n}")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    # p' = p + 2*w*(v x p) + 2*(v x (v x p)), v = (x, y, z)
    v = np.array([x, y, z])
    cross1 = np.cross(v, pts)
    cross2 = np.cross(v, cross1)
    return pts + 2.0 * w * cross1 + 2.0 * cross2


def ray_box_enter_exit(origin, direction, box_lo, box_hi):
    """Slab-method ray/AABB intersection.

    Args:
        origin: Ray origin (3,).
        direction: Ray direction (3,), need not be unit length.
        box_lo, box_hi: Box corners (3,).

    Returns:
        (t_enter, t_exit) parameters along the ray, or None when the
        ray misses the box. Parameters may be negative.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    t_lo = -np.inf
    t_hi = np.inf
    for a in range(3):
        if direction[a] == 0.0:
            if origin[a] <= box_lo[a] or origin[a] >= box_hi[a]:
                return None
            continue
        t1 = (box_lo[a] - origin[a]) / direction[a]
        t2 = (box_hi[a] - origin[a]) / direction[a]
        if t1 > t2:
            t1, t2 = t2, t1
        t_lo = max(t_lo, t1)
        t_hi = min(t_hi, t2)
    if t_lo >= t_hi:
        return None
    return t_lo, t_hi


def segment_box_overlap_length(a, b, box_lo, box_hi) -> float:
    """Length of the part of segment [a, b] inside an axis-aligned box."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    length = float(np.linalg.norm(d))
    if length == 0.0:
        return 0.0
    hit = ray_box_enter_exit(a, d, box_lo, box_hi)
    if hit is None:
        return 0.0
    t0 = max(hit[0], 0.0)
    t1 = min(hit[1], 1.0)
    if t1 <= t0:
        return 0.0
    return (t1 - t0) * length


def segment_intersects_box(a, b, box_lo, box_hi) -> bool:
    """True when segment [a, b] passes through the interior of the box."""
    return segment_box_overlap_length(a, b, box_lo, box_hi) > 0.0


def batch_ray_box_hits(origins: np.ndarray, dirs: np.ndarray,
                       box_lo, box_hi) -> np.ndarray:
    """First-hit parameter t >= 0 for many rays against one box.

    Args:
        origins: (N, 3) ray origins.
        dirs: (N, 3) ray directions (unit length not required).
        box_lo, box_hi: Box corners.

    Returns:
        (N,) array of entry parameters; inf where the ray misses or the
        box lies behind the origin.
    """
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (np.asarray(box_lo, dtype=float) - origins) / dirs
        t2 = (np.asarray(box_hi, dtype=float) - origins) / dirs
    t_lo = np.minimum(t1, t2)
    t_hi = np.maximum(t1, t2)
    # Parallel-axis rays: inside the slab -> (-inf, inf), outside -> miss.
    parallel = dirs == 0.0
    inside = (origins > box_lo) & (origins < box_hi)
    t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), t_hi)
    enter = np.max(t_lo, axis=1)
    exit_ = np.min(t_hi, axis=1)
    hit = (enter < exit_) & (exit_ > 0.0)
    t_first = np.where(enter > 0.0, enter, 0.0)
    return np.where(hit, t_first, np.inf)
