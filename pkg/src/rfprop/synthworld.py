"""Deterministic synthetic environments with exact ground truth.

Worlds are axis-aligned boxes inside a bounding volume: enough to model
walls, pillars and branching corridors while keeping analytic oracles
(visibility, obstructed path length, ray casting) exact. The generator
produces occupancy grids, LiDAR-style scans, radio trajectories and
measurement datasets whose ground-truth attenuation follows the same
closed-form models the library fits, so every fitting, training and
mapping claim can be verified in a closed loop.

Fully deterministic under a fixed seed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import (RadioSpec, diffraction_parameter, fresnel_radius,
                       knife_edge_loss, reflection_loss)
from .geometry import batch_ray_box_hits, segment_box_overlap_length
from .pipeline import MeasurementRecord, NOISE_FLOOR_DBM
from .voxel_grid import OccupancyGrid, ScanFrame, VoxelState

GENERATOR_MODELS = ("simple", "visibility", "shadowing", "full")


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    attenuation_db_per_m: float = 0.0

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float).reshape(3)
        self.hi = np.asarray(self.hi, dtype=float).reshape(3)
        if np.any(self.hi <= self.lo):
            raise ValueError("box must have positive extent on every axis")

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p > self.lo) and np.all(p < self.hi))

    def distance_to(self, p) -> float:
        p = np.asarray(p, dtype=float)
        gap = np.maximum(np.maximum(self.lo - p, p - self.hi), 0.0)
        return float(np.linalg.norm(gap))


@dataclass
class RadioDef:
    """A radio with a piecewise-linear waypoint trajectory."""

    radio_id: str
    kind: str = "mobile"
    waypoints: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    speed_mps: float = 1.0

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)

    def position(self, t: float) -> np.ndarray:
        if len(self.waypoints) == 1:
            return self.waypoints[0].copy()
        seg = np.diff(self.waypoints, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        s = min(max(t, 0.0) * self.speed_mps, float(cum[-1]))
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(seg) - 1)
        frac = (s - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
        return self.waypoints[i] + frac * seg[i]


@dataclass
class WorldSpec:
    """World geometry plus the ground-truth signal model that fills it."""

    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    obstacles: list = field(default_factory=list)
    generator_model: str = "simple"
    params: dict = field(default_factory=dict)
    noise_sigma_db: float = 0.0
    seed: int = 0
    voxel_size: float = 0.5
    radios: list = field(default_factory=list)
    duration_s: float = 60.0
    measurement_rate_hz: float = 1.0
    pose_rate_hz: float = 2.0
    scan_period_s: float = 10.0
    tx_power_dbm: float = 30.0
    frequency_hz: float = 2.4e9
    alpha_shift_time_s: float | None = None
    alpha_shift_db_per_m: float | None = None

    def __post_init__(self):
        self.bounds_lo = np.asarray(self.bounds_lo, dtype=float).reshape(3)
        self.bounds_hi = np.asarray(self.bounds_hi, dtype=float).reshape(3)
        if self.generator_model not in GENERATOR_MODELS:
            raise ValueError(f"unknown generator model "
                             f"{self.generator_model!r}")
        if self.noise_sigma_db < 0.0:
            raise ValueError("noise_sigma_db must be >= 0")
        for box in self.obstacles:
            if np.any(box.lo < self.bounds_lo) or np.any(box.hi > self.bounds_hi):
                raise ValueError("obstacle extends outside world bounds")

    def radio_spec(self) -> RadioSpec:
        return RadioSpec(frequency_hz=self.frequency_hz,
                         tx_power_dbm=self.tx_power_dbm)

    def alpha_at(self, box: Box, t: float) -> float:
        """Per-box attenuation, honoring the configured shift in time."""
        if (self.alpha_shift_time_s is not None
                and t >= self.alpha_shift_time_s):
            return float(self.alpha_shift_db_per_m)
        return box.attenuation_db_per_m


# -- geometry oracles ---------------------------------------------------------


def exact_visibility(spec: WorldSpec, a, b) -> bool:
    """True when the open segment does not pass through any obstacle."""
    return all(segment_box_overlap_length(a, b, box.lo, box.hi) == 0.0
               for box in spec.obstacles)


def obstructed_length(spec: WorldSpec, a, b) -> float:
    """Total length of the segment inside obstacles, in meters."""
    return sum(segment_box_overlap_length(a, b, box.lo, box.hi)
               for box in spec.obstacles)


def attenuation_integral(spec: WorldSpec, a, b, t: float) -> float:
    """Sum of per-box attenuation times chord length, in dB."""
    return sum(spec.alpha_at(box, t)
               * segment_box_overlap_length(a, b, box.lo, box.hi)
               for box in spec.obstacles)


def exact_worst_v(spec: WorldSpec, a, b, wavelength: float,
                  n_samples: int = 64) -> float:
    """Worst-case diffraction parameter from exact box geometry."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.linalg.norm(b - a))
    if length == 0.0:
        raise ValueError("coincident endpoints")
    worst = -math.inf
    for i in range(1, n_samples + 1):
        frac = i / (n_samples + 1)
        d1 = frac * length
        d2 = length - d1
        p = a + frac * (b - a)
        r = fresnel_radius(d1, d2, wavelength)
        s = min((box.distance_to(p) for box in spec.obstacles),
                default=math.inf)
        h = r - s if s <= r else -r
        worst = max(worst, diffraction_parameter(h, d1, d2, wavelength))
    return worst


# -- rasterization ------------------------------------------------------------


@dataclass
class GroundTruth:
    """Exact voxel labels of a rasterized world."""

    voxel_size: float
    idx_lo: np.ndarray
    idx_hi: np.ndarray  # inclusive
    occupied: set

    def in_bounds(self, idx) -> bool:
        return bool(np.all(np.asarray(idx) >= self.idx_lo)
                    and np.all(np.asarray(idx) <= self.idx_hi))

    def state_of(self, idx) -> VoxelState | None:
        if not self.in_bounds(idx):
            return None
        return (VoxelState.OCCUPIED if tuple(idx) in self.occupied
                else VoxelState.FREE)

    def all_indices(self):
        lo, hi = self.idx_lo, self.idx_hi
        grid = np.mgrid[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        return grid.reshape(3, -1).T


def rasterize(spec: WorldSpec, voxel_size: float | None = None):
    """Ground-truth occupancy grid: obstacle voxels at l_max, rest at l_min.

    A voxel counts as occupied when its cube overlaps any obstacle with
    positive volume. Labels cover every voxel whose center lies inside
    the world bounds.

    Returns:
        (OccupancyGrid, GroundTruth).
    """
    vox = spec.voxel_size if voxel_size is None else float(voxel_size)
    grid = OccupancyGrid(voxel_size=vox)
    idx_lo = np.ceil(spec.bounds_lo / vox - 0.5).astype(int)
    idx_hi = np.ceil(spec.bounds_hi / vox - 0.5).astype(int) - 1
    occupied = set()
    for box in spec.obstacles:
        b_lo = np.floor(box.lo / vox).astype(int)
        b_hi = np.ceil(box.hi / vox).astype(int) - 1
        for i in range(b_lo[0], b_hi[0] + 1):
            for j in range(b_lo[1], b_hi[1] + 1):
                for k in range(b_lo[2], b_hi[2] + 1):
                    v_lo = np.array([i, j, k]) * vox
                    if np.all(np.minimum(box.hi, v_lo + vox)
                              > np.maximum(box.lo, v_lo)):
                        occupied.add((i, j, k))
    truth = GroundTruth(voxel_size=vox, idx_lo=idx_lo, idx_hi=idx_hi,
                        occupied=occupied)
    for idx in truth.all_indices():
        key = (int(idx[0]), int(idx[1]), int(idx[2]))
        grid.set_log_odds(key, grid.l_max if key in occupied else grid.l_min)
    return grid, truth


# -- scan simulation ----------------------------------------------------------


def scan_directions(azimuth_step_deg: float = 1.0, n_rings: int = 16,
                    elevation_span_deg: float = 30.0) -> np.ndarray:
    """Unit ray directions on the angular lattice of a spinning LiDAR."""
    az = np.radians(np.arange(0.0, 360.0, azimuth_step_deg))
    el = np.radians(np.linspace(-elevation_span_deg / 2.0,
                                elevation_span_deg / 2.0, n_rings))
    azg, elg = np.meshgrid(az, el)
    return np.stack([np.cos(elg) * np.cos(azg),
                     np.cos(elg) * np.sin(azg),
                     np.sin(elg)], axis=-1).reshape(-1, 3)


def simulate_scans(spec: WorldSpec, poses, timestamps=None,
                   robot_id: str = "scanner", max_range: float = 100.0,
                   azimuth_step_deg: float = 1.0, n_rings: int = 16,
                   elevation_span_deg: float = 30.0,
                   surface_inset_m: float = 1e-6):
    """Cast LiDAR rays from each pose to the first obstacle surface.

    Hit points are inset a hair (1 um) past the surface along the ray;
    exactly-on-boundary points would otherwise be ambiguous between the
    obstacle voxel and its free neighbor when obstacle faces align with
    the voxel lattice. Rays that hit nothing within ``max_range`` return
    a point at exactly max range, exercising the no-return handling
    downstream. Poses inside an obstacle are skipped with a warning.
    """
    dirs = scan_directions(azimuth_step_deg, n_rings, elevation_span_deg)
    frames = []
    for n, pose in enumerate(poses):
        pose = np.asarray(pose, dtype=float).reshape(3)
        if any(box.contains(pose) for box in spec.obstacles):
            warnings.warn(f"scan pose {pose.tolist()} is inside an obstacle; "
                          "skipped")
            continue
        t_hit = np.full(len(dirs), np.inf)
        origins = np.broadcast_to(pose, dirs.shape)
        for box in spec.obstacles:
            t_hit = np.minimum(t_hit,
                               batch_ray_box_hits(origins, dirs, box.lo, box.hi))
        hit = np.isfinite(t_hit)
        t_hit = np.where(hit, t_hit + surface_inset_m, max_range)
        t_hit = np.minimum(t_hit, max_range)
        points = dirs * t_hit[:, None]
        stamp = float(timestamps[n]) if timestamps is not None else float(n)
        frames.append(ScanFrame(robot_id=robot_id, timestamp=stamp,
                                position=pose, quaternion=[0, 0, 0, 1],
                                points=points))
    return frames


# -- dataset generation -------------------------------------------------------


@dataclass(frozen=True)
class LinkEvent:
    timestamp: float
    tx_id: str
    tx_pos: np.ndarray
    rx_id: str
    rx_pos: np.ndarray


def ground_truth_pl(spec: WorldSpec, a, b, t: float,
                    radio: RadioSpec) -> float:
    """Noise-free attenuation between two points under the world's model."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = max(float(np.linalg.norm(b - a)), 1.0)
    log_term = 10.0 * math.log10(d)
    p = spec.params
    model = spec.generator_model
    if model == "simple":
        return p["pl_d0"] + p["eta"] * log_term
    if model == "visibility":
        if exact_visibility(spec, a, b):
            return p["pl_d0_los"] + p["eta_los"] * log_term
        return p["pl_d0_nlos"] + p["eta_nlos"] * log_term
    los_pl = p["pl_d0_los"] + p["eta_los"] * log_term
    shadowed = los_pl + attenuation_integral(spec, a, b, t)
    if model == "shadowing":
        return shadowed
    # full: subtract ground reflection and exact-geometry diffraction
    rl = reflection_loss(d, radio.antenna_height_tx_m,
                         radio.antenna_height_rx_m, radio.wavelength_m)
    dl = knife_edge_loss(exact_worst_v(spec, a, b, radio.wavelength_m))
    return shadowed - rl - dl


def generate_dataset(spec: WorldSpec, schedule, radio: RadioSpec | None = None):
    """Measurement records for a link schedule, with seeded Gaussian noise."""
    radio = radio or spec.radio_spec()
    rng = np.random.default_rng(spec.seed)
    records = []
    for ev in schedule:
        pl = ground_truth_pl(spec, ev.tx_pos, ev.rx_pos, ev.timestamp, radio)
        if spec.noise_sigma_db > 0.0:
            pl += float(rng.normal(0.0, spec.noise_sigma_db))
        records.append(MeasurementRecord(
            timestamp=ev.timestamp, tx_id=ev.tx_id, rx_id=ev.rx_id,
            rss=radio.tx_power_dbm - pl, noise=NOISE_FLOOR_DBM,
            tx_power=radio.tx_power_dbm, frequency=radio.frequency_hz,
            tx_pos=np.asarray(ev.tx_pos, dtype=float),
            rx_pos=np.asarray(ev.rx_pos, dtype=float)))
    return records


def build_schedule(spec: WorldSpec, t0: float = 0.0,
                   t1: float | None = None,
                   rate_hz: float | None = None):
    """Link events for every radio pair at a fixed measurement rate."""
    t1 = spec.duration_s if t1 is None else t1
    rate = spec.measurement_rate_hz if rate_hz is None else rate_hz
    radios = sorted(spec.radios, key=lambda r: r.radio_id)
    events = []
    t = t0
    while t < t1:
        for i, ra in enumerate(radios):
            pa = ra.position(t)
            for rb in radios[i + 1:]:
                pb = rb.position(t)
                if np.array_equal(pa, pb):
                    continue
                events.append(LinkEvent(timestamp=t, tx_id=ra.radio_id,
                                        tx_pos=pa, rx_id=rb.radio_id,
                                        rx_pos=pb))
        t += 1.0 / rate
    return events


def pose_rows(spec: WorldSpec, t0: float = 0.0, t1: float | None = None,
              rate_hz: float | None = None):
    """(t, radio_id, xyz, quat) rows for the pose CSV."""
    t1 = spec.duration_s if t1 is None else t1
    rate = spec.pose_rate_hz if rate_hz is None else rate_hz
    rows = []
    t = t0
    while t <= t1:
        for r in sorted(spec.radios, key=lambda r: r.radio_id):
            rows.append((t, r.radio_id, r.position(t), (0.0, 0.0, 0.0, 1.0)))
        t += 1.0 / rate
    return rows


def scan_schedule(spec: WorldSpec, t0: float = 0.0, t1: float | None = None):
    """Scan poses along the mobile radios' trajectories."""
    t1 = spec.duration_s if t1 is None else t1
    poses, stamps, ids = [], [], []
    t = t0
    while t <= t1:
        for r in sorted(spec.radios, key=lambda r: r.radio_id):
            if r.kind == "mobile":
                poses.append(r.position(t))
                stamps.append(t)
                ids.append(r.radio_id)
        t += spec.scan_period_s
    return poses, stamps, ids


# -- worldspec file -----------------------------------------------------------


def load_worldspec(path: str) -> WorldSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    obstacles = [Box(lo=o["lo"], hi=o["hi"],
                     attenuation_db_per_m=o.get("attenuation_db_per_m", 0.0))
                 for o in raw.get("obstacles", [])]
    radios = [RadioDef(radio_id=r["id"], kind=r.get("kind", "mobile"),
                       waypoints=r.get("waypoints", [[0, 0, 0]]),
                       speed_mps=r.get("speed_mps", 1.0))
              for r in raw.get("radios", [])]
    shift = raw.get("alpha_shift") or {}
    return WorldSpec(
        bounds_lo=raw["bounds"]["lo"], bounds_hi=raw["bounds"]["hi"],
        obstacles=obstacles, generator_model=raw.get("generator_model",
                                                     "simple"),
        params=raw.get("params", {}),
        noise_sigma_db=raw.get("noise_sigma_db", 0.0),
        seed=raw.get("seed", 0), voxel_size=raw.get("voxel_size", 0.5),
        radios=radios, duration_s=raw.get("duration_s", 60.0),
        measurement_rate_hz=raw.get("measurement_rate_hz", 1.0),
        pose_rate_hz=raw.get("pose_rate_hz", 2.0),
        scan_period_s=raw.get("scan_period_s", 10.0),
        tx_power_dbm=raw.get("tx_power_dbm", 30.0),
        frequency_hz=raw.get("frequency_hz", 2.4e9),
        alpha_shift_time_s=shift.get("time_s"),
        alpha_shift_db_per_m=shift.get("attenuation_db_per_m"))


def save_worldspec(spec: WorldSpec, path: str):
    raw = {
        "bounds": {"lo": spec.bounds_lo.tolist(),
                   "hi": spec.bounds_hi.tolist()},
        "voxel_size": spec.voxel_size,
        "obstacles": [{"lo": b.lo.tolist(), "hi": b.hi.tolist(),
                       "attenuation_db_per_m": b.attenuation_db_per_m}
                      for b in spec.obstacles],
        "generator_model": spec.generator_model,
        "params": spec.params,
        "noise_sigma_db": spec.noise_sigma_db,
        "seed": spec.seed,
        "radios": [{"id": r.radio_id, "kind": r.kind,
                    "waypoints": r.waypoints.tolist(),
                    "speed_mps": r.speed_mps} for r in spec.radios],
        "duration_s": spec.duration_s,
        "measurement_rate_hz": spec.measurement_rate_hz,
        "pose_rate_hz": spec.pose_rate_hz,
        "scan_period_s": spec.scan_period_s,
        "tx_power_dbm": spec.tx_power_dbm,
        "frequency_hz": spec.frequency_hz,
    }
    if spec.alpha_shift_time_s is not None:
        raw["alpha_shift"] = {"time_s": spec.alpha_shift_time_s,
                              "attenuation_db_per_m": spec.alpha_shift_db_per_m}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(raw, fh, indent=2, sort_keys=True)
        fh.write("\n")
