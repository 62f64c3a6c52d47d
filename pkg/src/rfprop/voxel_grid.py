"""Sparse 3D occupancy grid with log-odds updates and exact voxel traversal.

Occupancy is stored as log-odds so that Bayesian updates from raytraced
scans reduce to addition and subtraction. Storage is a two-level sparse
structure: a hash map of 16x16x16 dense blocks, which keeps updates O(1)
amortized and batch lookups cache-friendly without any external volume
library.

Concurrency contract: single writer, multiple readers. Scan integration
must be serialized by the caller; feature extraction reads against an
immutable ``snapshot()``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geometry import quat_rotate

BLOCK = 16
_PACK_OFF = 1 << 20
_PACK_MUL = 1 << 21


class VoxelState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2
    MAYBE_OCCUPIED = 3


@dataclass(frozen=True)
class UpdateParams:
    """Per-ray occupancy update increments.

    The endpoint voxel of a returned ray gets ``l_hit``; voxels strictly
    between the sensor and the endpoint get ``l_miss``. Points farther
    than ``max_range`` are treated as no-returns: misses are applied
    along the ray up to ``max_range`` (including the truncation voxel)
    and no hit is recorded. With ``dedup_per_scan`` a voxel receives at
    most one hit and one miss per scan instead of one update per ray.
    """

    l_hit: float = 0.85
    l_miss: float = -0.40
    max_range: float = 100.0
    dedup_per_scan: bool = False


@dataclass
class ScanFrame:
    """One LiDAR scan with the pose it was taken from.

    Points are in the sensor frame; ``position`` and ``quaternion``
    (x, y, z, w) place the sensor in the shared stationary frame.
    """

    robot_id: str
    timestamp: float
    position: np.ndarray
    quaternion: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.quaternion = np.asarray(self.quaternion, dtype=float).reshape(4)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = float(np.dot(self.quaternion, self.quaternion))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"scan quaternion not normalized: |q|^2 = {n}")

    def points_world(self) -> np.ndarray:
        if len(self.points) == 0:
            return self.points.copy()
        return quat_rotate(self.quaternion, self.points) + self.position


class OccupancyGrid:
    """Sparse voxel grid mapping integer indices to clamped log-odds."""

    def __init__(self, voxel_size: float = 0.5, origin=(0.0, 0.0, 0.0),
                 l_min: float = -4.0, l_max: float = 4.0,
                 t_occ: float = 0.7, t_free: float = -0.7):
        if not (voxel_size > 0.0):
            raise ValueError("voxel_size must be positive")
        if voxel_size > 1.5:
            raise ValueError("voxel_size above 1.5 m is not supported")
        if t_free >= t_occ:
            raise ValueError("t_free must be below t_occ")
        if l_min >= l_max:
            raise ValueError("l_min must be below l_max")
        self.voxel_size = float(voxel_size)
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.l_min = float(l_min)
        self.l_max = float(l_max)
        self.t_occ = float(t_occ)
        self.t_free = float(t_free)
        self._log: dict[tuple[int, int, int], np.ndarray] = {}
        self._touched: dict[tuple[int, int, int], np.ndarray] = {}

    # -- coordinate transforms -------------------------------------------

    def world_to_index(self, p) -> tuple[int, int, int]:
        idx = np.floor((np.asarray(p, dtype=float) - self.origin) / self.voxel_size)
        return int(idx[0]), int(idx[1]), int(idx[2])

    def index_to_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.voxel_size

    # -- cell access ------------------------------------------------------

    def _block(self, key, create: bool):
        blk = self._log.get(key)
        if blk is None and create:
            blk = np.zeros((BLOCK, BLOCK, BLOCK), dtype=float)
            self._log[key] = blk
            self._touched[key] = np.zeros((BLOCK, BLOCK, BLOCK), dtype=bool)
        return blk

    def log_odds_at(self, idx):
        """Stored log-odds of a voxel, or None when never touched."""
        key = (idx[0] >> 4, idx[1] >> 4, idx[2] >> 4)
        blk = self._log.get(key)
        if blk is None:
            return None
        li, lj, lk = idx[0] & 15, idx[1] & 15, idx[2] & 15
        if not self._touched[key][li, lj, lk]:
            return None
        return float(blk[li, lj, lk])

    def set_log_odds(self, idx, value: float):
        key = (idx[0] >> 4, idx[1] >> 4, idx[2] >> 4)
        blk = self._block(key, create=True)
        li, lj, lk = idx[0] & 15, idx[1] & 15, idx[2] & 15
        blk[li, lj, lk] = min(max(float(value), self.l_min), self.l_max)
        self._touched[key][li, lj, lk] = True

    def add_log_odds(self, idx, delta: float):
        key = (idx[0] >> 4, idx[1] >> 4, idx[2] >> 4)
        blk = self._block(key, create=True)
        li, lj, lk = idx[0] & 15, idx[1] & 15, idx[2] & 15
        blk[li, lj, lk] = min(max(blk[li, lj, lk] + delta, self.l_min), self.l_max)
        self._touched[key][li, lj, lk] = True

    def classify_index(self, idx) -> VoxelState:
        lo = self.log_odds_at(idx)
        return classify_log_odds(lo, self.t_occ, self.t_free)

    def states_at_indices(self, indices: np.ndarray) -> np.ndarray:
        """Vectorized classification for an (N, 3) integer index array."""
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        n = len(indices)
        states = np.zeros(n, dtype=np.uint8)  # UNKNOWN
        if n == 0:
            return states
        local = indices & 15
        for sel, key in _group_by_block(indices):
            blk = self._log.get(key)
            if blk is None:
                continue
            tch = self._touched[key]
            li, lj, lk = local[sel, 0], local[sel, 1], local[sel, 2]
            lo = blk[li, lj, lk]
            stored = tch[li, lj, lk]
            st = np.full(lo.shape, VoxelState.MAYBE_OCCUPIED, dtype=np.uint8)
            st[lo >= self.t_occ] = VoxelState.OCCUPIED
            st[lo <= self.t_free] = VoxelState.FREE
            st[~stored] = VoxelState.UNKNOWN
            states[sel] = st
        return states

    def states_at_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        idx = np.floor((points - self.origin) / self.voxel_size).astype(np.int64)
        return self.states_at_indices(idx)

    # -- bookkeeping ------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return sum(int(t.sum()) for t in self._touched.values())

    def touched_indices(self) -> np.ndarray:
        """Indices of all stored cells, (N, 3)."""
        out = []
        for (bi, bj, bk), tch in self._touched.items():
            li, lj, lk = np.nonzero(tch)
            if len(li):
                out.append(np.stack([li + bi * BLOCK, lj + bj * BLOCK,
                                     lk + bk * BLOCK], axis=1))
        if not out:
            return np.zeros((0, 3), dtype=np.int64)
        return np.concatenate(out, axis=0)

    def bounding_box(self):
        """World-space AABB of the touched region, or None when empty."""
        idx = self.touched_indices()
        if len(idx) == 0:
            return None
        lo = self.origin + idx.min(axis=0) * self.voxel_size
        hi = self.origin + (idx.max(axis=0) + 1) * self.voxel_size
        return lo, hi

    def snapshot(self) -> "OccupancyGrid":
        """Deep copy for concurrent read-only feature extraction."""
        g = OccupancyGrid(self.voxel_size, self.origin, self.l_min,
                          self.l_max, self.t_occ, self.t_free)
        g._log = {k: v.copy() for k, v in self._log.items()}
        g._touched = {k: v.copy() for k, v in self._touched.items()}
        return g


def classify_log_odds(log_odds, t_occ: float, t_free: float) -> VoxelState:
    """Threshold a stored log-odds value into a voxel state."""
    if t_free >= t_occ:
        raise ValueError("t_free must be below t_occ")
    if log_odds is None:
        return VoxelState.UNKNOWN
    if log_odds >= t_occ:
        return VoxelState.OCCUPIED
    if log_odds <= t_free:
        return VoxelState.FREE
    return VoxelState.MAYBE_OCCUPIED


def classify(grid: OccupancyGrid, idx, t_occ: float | None = None,
             t_free: float | None = None) -> VoxelState:
    """Classify one voxel, optionally overriding the grid thresholds."""
    t_occ = grid.t_occ if t_occ is None else t_occ
    t_free = grid.t_free if t_free is None else t_free
    return classify_log_odds(grid.log_odds_at(idx), t_occ, t_free)


def traverse_segment(a, b, grid: OccupancyGrid):
    """Voxels whose interior the closed segment [a, b] intersects, in order.

    Incremental 3D DDA stepping one axis at a time. Ties at cell corners
    are resolved by stepping the axis with the smallest index first, so
    the result is deterministic. The first voxel contains ``a`` and the
    last contains ``b``; each voxel appears exactly once.

    Returns:
        List of ((i, j, k), VoxelState) pairs.
    """
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("segment endpoints must be finite")
    vox = grid.voxel_size
    origin = grid.origin
    cur = list(grid.world_to_index(a))
    end = list(grid.world_to_index(b))
    indices = [tuple(cur)]
    d = b - a
    step = [0, 0, 0]
    t_max = [np.inf, np.inf, np.inf]
    t_delta = [np.inf, np.inf, np.inf]
    for ax in range(3):
        if d[ax] > 0.0:
            step[ax] = 1
            t_max[ax] = (origin[ax] + (cur[ax] + 1) * vox - a[ax]) / d[ax]
            t_delta[ax] = vox / d[ax]
        elif d[ax] < 0.0:
            step[ax] = -1
            t_max[ax] = (origin[ax] + cur[ax] * vox - a[ax]) / d[ax]
            t_delta[ax] = -vox / d[ax]
    max_steps = abs(end[0] - cur[0]) + abs(end[1] - cur[1]) + abs(end[2] - cur[2])
    for _ in range(max_steps):
        # Only axes not yet at their target can still cross a boundary
        # inside the segment; restricting the choice makes termination
        # robust to floating-point edge cases.
        best = -1
        for ax in range(3):
            if cur[ax] != end[ax] and (best < 0 or t_max[ax] < t_max[best]):
                best = ax
        cur[best] += step[best]
        t_max[best] += t_delta[best]
        indices.append(tuple(cur))
    idx_arr = np.array(indices, dtype=np.int64)
    states = grid.states_at_indices(idx_arr)
    return [(indices[i], VoxelState(states[i])) for i in range(len(indices))]


def _flat_segment_voxels(starts: np.ndarray, ends: np.ndarray, origin: np.ndarray,
                         vox: float):
    """Ordered voxel indices for many segments via crossing enumeration.

    Enumerates every grid-plane crossing of every segment, sorts them per
    segment, and takes the voxel containing each inter-crossing midpoint.

    Returns:
        (vidx, seg_id, pos, count) where ``vidx`` is (M, 3), ``seg_id``
        maps each row to its segment, ``pos`` is the rank of the voxel
        along its segment and ``count`` is the per-segment voxel count.
    """
    n_seg = len(starts)
    ia = np.floor((starts - origin) / vox).astype(np.int64)
    ib = np.floor((ends - origin) / vox).astype(np.int64)
    d = ends - starts
    counts = np.abs(ib - ia)
    t_parts, seg_parts = [], []
    for ax in range(3):
        c = counts[:, ax]
        tot = int(c.sum())
        if tot == 0:
            continue
        seg_ids = np.repeat(np.arange(n_seg), c)
        offs = np.arange(tot) - np.repeat(np.cumsum(c) - c, c)
        pos_dir = d[seg_ids, ax] > 0
        k = np.where(pos_dir, ia[seg_ids, ax] + 1 + offs, ia[seg_ids, ax] - offs)
        bound = origin[ax] + k * vox
        t_parts.append((bound - starts[seg_ids, ax]) / d[seg_ids, ax])
        seg_parts.append(seg_ids)
    n_cross = counts.sum(axis=1)
    n_vox = n_cross + 1
    total_vox = int(n_vox.sum())
    seg_id = np.repeat(np.arange(n_seg), n_vox)
    pos = np.arange(total_vox) - np.repeat(np.cumsum(n_vox) - n_vox, n_vox)
    if t_parts:
        t_all = np.concatenate(t_parts)
        seg_all = np.concatenate(seg_parts)
        order = np.lexsort((t_all, seg_all))
        t_sorted = t_all[order]
        cross_start = np.cumsum(n_cross) - n_cross
        base = cross_start[seg_id]
        prev_t = np.where(pos == 0, 0.0, t_sorted[np.maximum(base + pos - 1, 0)])
        next_t = np.where(pos == n_cross[seg_id], 1.0,
                          t_sorted[np.minimum(base + pos, len(t_sorted) - 1)])
    else:
        prev_t = np.zeros(total_vox)
        next_t = np.ones(total_vox)
    t_mid = 0.5 * (prev_t + next_t)
    pts = starts[seg_id] + t_mid[:, None] * d[seg_id]
    vidx = np.floor((pts - origin) / vox).astype(np.int64)
    return vidx, seg_id, pos, n_vox


def integrate_scan(scan: ScanFrame, grid: OccupancyGrid,
                   params: UpdateParams = UpdateParams()) -> int:
    """Apply one scan's hit/miss updates to the grid.

    For each point: the voxels strictly between the sensor origin and
    the endpoint voxel get ``l_miss``, the endpoint voxel gets ``l_hit``.
    A voxel crossed by several rays receives one update per ray unless
    ``dedup_per_scan`` is set. Results are accumulated for the whole scan
    and then clamped to [l_min, l_max] (clamping order is the documented
    exception to update commutativity).

    Returns:
        Number of distinct voxels updated.
    """
    pts = scan.points_world()
    if len(pts) == 0:
        return 0
    sensor = scan.position
    vec = pts - sensor
    rng = np.linalg.norm(vec, axis=1)
    keep = rng > 0.0
    vec, rng = vec[keep], rng[keep]
    if len(rng) == 0:
        return 0
    no_return = rng >= params.max_range
    scale = np.where(no_return, params.max_range / rng, 1.0)
    ends = sensor + vec * scale[:, None]
    starts = np.broadcast_to(sensor, ends.shape).astype(float)

    vidx, seg_id, pos, n_vox = _flat_segment_voxels(
        starts, ends, grid.origin, grid.voxel_size)
    is_first = pos == 0
    is_last = pos == (n_vox[seg_id] - 1)
    ray_no_return = no_return[seg_id]
    hit_mask = is_last & ~ray_no_return
    miss_mask = ~is_first & ~hit_mask

    if params.dedup_per_scan:
        hits = np.unique(vidx[hit_mask], axis=0)
        hit_set = {tuple(r) for r in hits}
        misses = np.unique(vidx[miss_mask], axis=0)
        # Hit evidence wins over a same-scan pass-through.
        misses = np.array([r for r in misses if tuple(r) not in hit_set],
                          dtype=np.int64).reshape(-1, 3)
        upd_idx = np.concatenate([hits, misses], axis=0)
        deltas = np.concatenate([np.full(len(hits), params.l_hit),
                                 np.full(len(misses), params.l_miss)])
    else:
        upd_idx = vidx[hit_mask | miss_mask]
        deltas = np.where(hit_mask[hit_mask | miss_mask], params.l_hit,
                          params.l_miss)
    return _apply_updates(grid, upd_idx, deltas)


def _group_by_block(indices: np.ndarray):
    """Yield (row_selector, block_key) groups via one stable sort."""
    bkeys = indices >> 4
    packed = ((bkeys[:, 0] + _PACK_OFF) * _PACK_MUL
              + (bkeys[:, 1] + _PACK_OFF)) * _PACK_MUL + (bkeys[:, 2] + _PACK_OFF)
    order = np.argsort(packed, kind="stable")
    sorted_packed = packed[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(sorted_packed)) + 1,
                             [len(packed)]])
    for s, e in zip(starts[:-1], starts[1:]):
        sel = order[s:e]
        k2 = int(sorted_packed[s])
        bk = k2 % _PACK_MUL - _PACK_OFF
        k2 //= _PACK_MUL
        bj = k2 % _PACK_MUL - _PACK_OFF
        bi = k2 // _PACK_MUL - _PACK_OFF
        yield sel, (bi, bj, bk)


def _apply_updates(grid: OccupancyGrid, indices: np.ndarray,
                   deltas: np.ndarray) -> int:
    if len(indices) == 0:
        return 0
    local = indices & 15
    n_updated = 0
    for sel, key in _group_by_block(indices):
        blk = grid._block(key, create=True)
        tch = grid._touched[key]
        li, lj, lk = local[sel, 0], local[sel, 1], local[sel, 2]
        flat = (li * BLOCK + lj) * BLOCK + lk
        np.add.at(blk.ravel(), flat, deltas[sel])
        np.clip(blk, grid.l_min, grid.l_max, out=blk)
        tch.ravel()[flat] = True
        n_updated += len(np.unique(flat))
    return n_updated


# -- file formats ---------------------------------------------------------

def dump_grid(grid: OccupancyGrid, path: str):
    """Write the grid as text: a two-line header then `i j k log_odds` rows."""
    idx = grid.touched_indices()
    if len(idx):
        idx = idx[np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))]
    ox, oy, oz = (float(v) for v in grid.origin)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"voxel_size {grid.voxel_size!r}\n")
        fh.write(f"origin {ox!r} {oy!r} {oz!r}\n")
        for row in idx:
            i, j, k = int(row[0]), int(row[1]), int(row[2])
            lo = grid.log_odds_at((i, j, k))
            fh.write(f"{i} {j} {k} {lo!r}\n")


def load_grid(path: str, **kwargs) -> OccupancyGrid:
    with open(path, "r", encoding="utf-8") as fh:
        head1 = fh.readline().split()
        head2 = fh.readline().split()
        if len(head1) != 2 or head1[0] != "voxel_size" or head2[0] != "origin":
            raise ValueError(f"{path}: not a grid dump (bad header)")
        grid = OccupancyGrid(voxel_size=float(head1[1]),
                             origin=[float(x) for x in head2[1:4]], **kwargs)
        for line in fh:
            parts = line.split()
            if len(parts) != 4:
                continue
            grid.set_log_odds((int(parts[0]), int(parts[1]), int(parts[2])),
                              float(parts[3]))
    return grid


def write_scans(frames, path: str):
    """Write scan frames in the plain-text scan format.

    Each frame is a CSV header line
    ``timestamp,robot_id,px,py,pz,qx,qy,qz,qw,N`` followed by N lines of
    ``x y z`` points in the sensor frame.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            p = [float(v) for v in f.position]
            q = [float(v) for v in f.quaternion]
            fh.write(f"{float(f.timestamp)!r},{f.robot_id},"
                     f"{p[0]!r},{p[1]!r},{p[2]!r},"
                     f"{q[0]!r},{q[1]!r},{q[2]!r},{q[3]!r},{len(f.points)}\n")
            for row in f.points:
                fh.write(f"{float(row[0])!r} {float(row[1])!r} "
                         f"{float(row[2])!r}\n")


def read_scans(path: str):
    """Read scan frames written by :func:`write_scans`."""
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        line = fh.readline()
        while line:
            parts = line.strip().split(",")
            if len(parts) != 10:
                raise ValueError(f"{path}: malformed frame header: {line!r}")
            n = int(parts[9])
            pts = np.empty((n, 3), dtype=float)
            for i in range(n):
                pts[i] = [float(x) for x in fh.readline().split()]
            frames.append(ScanFrame(
                robot_id=parts[1], timestamp=float(parts[0]),
                position=[float(x) for x in parts[2:5]],
                quaternion=[float(x) for x in parts[5:9]], points=pts))
            line = fh.readline()
    return frames
