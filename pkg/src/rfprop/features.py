"""Link-level propagation features from an occupancy grid snapshot.

Given transmitter and receiver positions, computes the physically
meaningful quantities that drive attenuation: distance, line-of-sight
visibility, voxel-state counts along the link, two-ray ground reflection
loss, and worst-case first-Fresnel-zone knife-edge diffraction loss.

All functions here are pure with respect to the grid snapshot and safe
to evaluate for many links in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import SPEED_OF_LIGHT
from .voxel_grid import OccupancyGrid, VoxelState, traverse_segment

RL_FLOOR_DB = -40.0
CLEAR_ZONE_V = -0.8


@dataclass(frozen=True)
class RadioSpec:
    """Radio parameters of a link: frequency, power, gains and heights.

    Antenna heights above ground default to 0.5 m, a ground-robot mast.
    Gains are absorbed into fitted reference path loss and default to 0.
    """

    frequency_hz: float
    tx_power_dbm: float = 30.0
    antenna_gain_tx_dbi: float = 0.0
    antenna_gain_rx_dbi: float = 0.0
    antenna_height_tx_m: float = 0.5
    antenna_height_rx_m: float = 0.5

    def __post_init__(self):
        if not self.frequency_hz > 0.0:
            raise ValueError("frequency must be positive")
        if self.antenna_height_tx_m < 0 or self.antenna_height_rx_m < 0:
            raise ValueError("antenna heights must be >= 0")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.frequency_hz


@dataclass(frozen=True)
class FeatureVector:
    """Per-link propagation features. Field order defines the CSV layout."""

    distance: float
    log10_distance: float
    strictly_visible: bool
    strictly_not_visible: bool
    n_free: int
    n_occupied: int
    n_maybe: int
    n_unknown: int
    not_free_meters: float
    reflection_loss: float
    diffraction_loss: float
    worst_v: float

    def __post_init__(self):
        if self.strictly_visible and self.strictly_not_visible:
            raise ValueError("a link cannot be both strictly visible and "
                             "strictly not visible")


@dataclass
class PathLossSample:
    """One measured attenuation paired with its extracted features."""

    features: FeatureVector
    measured_pl: float
    tx_id: str
    rx_id: str
    timestamp: float
    rss: float = math.nan
    synthetic: bool = False


# -- closed-form propagation quantities --------------------------------------


def fresnel_radius(d1: float, d2: float, wavelength: float) -> float:
    """First Fresnel zone radius at distances d1 from tx and d2 to rx.

    r = sqrt(d1 * d2 * wavelength / (d1 + d2)); symmetric in (d1, d2).
    """
    if d1 < 0 or d2 < 0:
        raise ValueError("distances must be >= 0")
    if d1 + d2 <= 0.0:
        raise ValueError("d1 + d2 must be positive")
    if wavelength <= 0.0:
        raise ValueError("wavelength must be positive")
    return math.sqrt(d1 * d2 * wavelength / (d1 + d2))


def reflection_loss_from_path_difference(delta: float, wavelength: float,
                                         gamma: float = -1.0,
                                         floor_db: float | None = RL_FLOOR_DB) -> float:
    """Interference factor in dB for a reflected-path excess length delta.

    10*log10(|1 + gamma*exp(i * 2*pi*delta/wavelength)|^2). Positive
    values are constructive, negative destructive. Clamped below at
    ``floor_db`` unless that is None (perfect cancellation is -inf).
    """
    theta = 2.0 * math.pi * delta / wavelength
    mag_sq = (1.0 + gamma * math.cos(theta)) ** 2 + (gamma * math.sin(theta)) ** 2
    rl = 10.0 * math.log10(mag_sq) if mag_sq > 0.0 else -math.inf
    if floor_db is not None:
        rl = max(rl, floor_db)
    return rl


def reflection_loss(d: float, h_tx: float, h_rx: float, wavelength: float,
                    gamma: float = -1.0,
                    floor_db: float | None = RL_FLOOR_DB) -> float:
    """Two-ray ground reflection loss in dB for a link of length d.

    Path lengths l' = sqrt(d^2 + (h_tx + h_rx)^2) for the reflected ray
    and l = sqrt(d^2 + (h_tx - h_rx)^2) for the direct ray set the phase
    offset between the rays; perfect ground reflection (gamma = -1) is
    assumed by default.
    """
    if d <= 0.0:
        raise ValueError("distance must be positive")
    if h_tx < 0 or h_rx < 0:
        raise ValueError("antenna heights must be >= 0")
    l_refl = math.sqrt(d * d + (h_tx + h_rx) ** 2)
    l_dir = math.sqrt(d * d + (h_tx - h_rx) ** 2)
    return reflection_loss_from_path_difference(l_refl - l_dir, wavelength,
                                                gamma, floor_db)


def diffraction_parameter(h: float, d1: float, d2: float,
                          wavelength: float) -> float:
    """Fresnel-Kirchhoff parameter v = h * sqrt(2(d1+d2)/(lambda*d1*d2)).

    ``h`` is the obstruction offset relative to the line of sight:
    0 exactly on it, negative when the obstruction is clear below.
    """
    if d1 <= 0.0 or d2 <= 0.0:
        raise ValueError("d1 and d2 must be positive (obstruction cannot "
                         "coincide with an antenna)")
    if wavelength <= 0.0:
        raise ValueError("wavelength must be positive")
    return h * math.sqrt(2.0 * (d1 + d2) / (wavelength * d1 * d2))


def _lee_branch_c(v):
    return 20.0 * np.log10(0.5 * np.exp(-0.95 * v))


def _lee_branch_d(v):
    return 20.0 * np.log10(0.4 - np.sqrt(0.1184 - (0.38 - 0.1 * v) ** 2))


def _lee_branch_e(v):
    return 20.0 * np.log10(0.225 / v)


# The standard piecewise branches do not join: at v=1 the outer branch
# sits 0.293 dB high and at v=2.4 it sits 0.782 dB high, which would
# break monotonicity. Shifting each outer branch to meet the one to its
# left keeps every branch's shape while making the curve continuous and
# non-increasing.
_SEAM_D = float(_lee_branch_c(1.0) - _lee_branch_d(1.0))
_SEAM_E = float(_lee_branch_d(2.4) + _SEAM_D - _lee_branch_e(2.4))


def knife_edge_loss(v):
    """Knife-edge diffraction loss in dB (<= 0) for parameter v.

    Piecewise approximation of 20*log10(|F(v)|) with the branches joined
    continuously (see seam constants above); also clamped at 0 dB just
    above v = -1 where the raw branch exceeds unity. Monotone
    non-increasing; 0 for v <= -1, exactly -6.0206 dB at v = 0.
    """
    v_arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v_arr)):
        raise ValueError("v must be finite")
    out = np.zeros_like(v_arr)
    m = (v_arr > -1.0) & (v_arr <= 0.0)
    out[m] = np.minimum(0.0, 20.0 * np.log10(0.5 - 0.62 * v_arr[m]))
    m = (v_arr > 0.0) & (v_arr <= 1.0)
    out[m] = _lee_branch_c(v_arr[m])
    m = (v_arr > 1.0) & (v_arr <= 2.4)
    out[m] = _lee_branch_d(v_arr[m]) + _SEAM_D
    m = v_arr > 2.4
    out[m] = _lee_branch_e(v_arr[m]) + _SEAM_E
    if np.isscalar(v) or np.ndim(v) == 0:
        return float(out)
    return out


# -- Fresnel zone scanning ----------------------------------------------------

# Voxel states that obstruct the Fresnel zone. Unknown space is treated
# as non-blocking so that an unmapped environment predicts free-space
# behaviour rather than total blockage.
_BLOCKING_STATES = (int(VoxelState.OCCUPIED), int(VoxelState.MAYBE_OCCUPIED))


def scan_fresnel_zone(tx, rx, grid: OccupancyGrid, wavelength: float,
                      spacing: float | None = None) -> float:
    """Worst-case diffraction parameter along the first Fresnel zone.

    Samples the line of sight at ``spacing`` intervals (default one voxel
    edge), mirrored around the midpoint so the scan is symmetric under
    tx/rx exchange. At each sample it probes outward in the four
    perpendicular directions (+/- world vertical, +/- horizontal) in
    voxel-size steps out to the local zone radius r. The obstruction
    offset is h = r - s with s the perpendicular distance from the line
    of sight to the first blocking voxel's center, so an on-axis blocker
    gives h = r and a clear zone gives h = -r (v = -sqrt(2)).

    Returns:
        max over samples of v(h, d1, d2, wavelength).
    """
    tx = np.asarray(tx, dtype=float).reshape(3)
    rx = np.asarray(rx, dtype=float).reshape(3)
    link = rx - tx
    length = float(np.linalg.norm(link))
    if length == 0.0:
        raise ValueError("tx and rx must differ")
    u = link / length
    vox = grid.voxel_size
    spacing = vox if spacing is None else float(spacing)

    half = 0.5 * length
    m_max = int(math.floor((half - 1e-12) / spacing))
    d1 = half + np.arange(-m_max, m_max + 1) * spacing
    d2 = length - d1
    n_samples = len(d1)
    base = tx + d1[:, None] * u

    radius = np.sqrt(d1 * d2 * wavelength / length)
    v_scale = np.sqrt(2.0 * length / (wavelength * d1 * d2))

    horiz = np.array([-u[1], u[0], 0.0])
    h_norm = np.linalg.norm(horiz)
    if h_norm < 1e-12:
        horiz = np.array([1.0, 0.0, 0.0])  # vertical link: any perpendicular
    else:
        horiz = horiz / h_norm
    vert = np.array([0.0, 0.0, 1.0])
    dirs = np.stack([vert, -vert, horiz, -horiz])

    # Flat probe set: the LOS point itself (pseudo-direction 4) plus
    # k = 1..floor(r/vox) steps in each of the four directions.
    k_max = np.floor(radius / vox).astype(np.int64)
    n_probe = 1 + 4 * k_max
    total = int(n_probe.sum())
    sample_id = np.repeat(np.arange(n_samples), n_probe)
    within = np.arange(total) - np.repeat(np.cumsum(n_probe) - n_probe, n_probe)
    k = np.where(within == 0, 0, (within - 1) // 4 + 1)
    dir_idx = np.where(within == 0, 4, (within - 1) % 4)
    offsets = np.zeros((total, 3))
    side = dir_idx < 4
    offsets[side] = dirs[dir_idx[side]] * (k[side] * vox)[:, None]
    probes = base[sample_id] + offsets

    states = grid.states_at_points(probes)
    blocking = (states == _BLOCKING_STATES[0]) | (states == _BLOCKING_STATES[1])

    s_min = np.full(n_samples, np.inf)
    if np.any(blocking):
        # First blocker per (sample, direction) = smallest step k.
        key = sample_id * 5 + dir_idx
        first_k = np.full(n_samples * 5, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(first_k, key[blocking], k[blocking])
        is_first = blocking & (k == first_k[key])
        vidx = np.floor((probes[is_first] - grid.origin) / vox).astype(np.int64)
        centers = grid.origin + (vidx + 0.5) * vox
        rel = centers - tx
        s = np.linalg.norm(rel - (rel @ u)[:, None] * u, axis=1)
        np.minimum.at(s_min, sample_id[is_first], s)

    h = np.where(np.isfinite(s_min), radius - s_min, -radius)
    return float(np.max(h * v_scale))


def extract(tx, rx, grid: OccupancyGrid, radio: RadioSpec,
            rl_floor_db: float | None = RL_FLOOR_DB,
            fresnel_spacing: float | None = None) -> FeatureVector:
    """Full feature vector for one transmitter/receiver pair.

    Deterministic for a fixed grid snapshot. Raises ValueError when the
    positions coincide.
    """
    tx = np.asarray(tx, dtype=float).reshape(3)
    rx = np.asarray(rx, dtype=float).reshape(3)
    d = float(np.linalg.norm(rx - tx))
    if d == 0.0:
        raise ValueError("tx and rx must differ")
    traversed = traverse_segment(tx, rx, grid)
    n_free = n_occ = n_maybe = n_unknown = 0
    for _, state in traversed:
        if state == VoxelState.FREE:
            n_free += 1
        elif state == VoxelState.OCCUPIED:
            n_occ += 1
        elif state == VoxelState.MAYBE_OCCUPIED:
            n_maybe += 1
        else:
            n_unknown += 1
    strictly_visible = n_occ == 0 and n_maybe == 0 and n_unknown == 0
    strictly_not_visible = n_occ > 0
    rl = reflection_loss(d, radio.antenna_height_tx_m, radio.antenna_height_rx_m,
                         radio.wavelength_m, floor_db=rl_floor_db)
    worst_v = scan_fresnel_zone(tx, rx, grid, radio.wavelength_m,
                                spacing=fresnel_spacing)
    dl = knife_edge_loss(worst_v)
    return FeatureVector(
        distance=d,
        log10_distance=math.log10(d),
        strictly_visible=strictly_visible,
        strictly_not_visible=strictly_not_visible,
        n_free=n_free,
        n_occupied=n_occ,
        n_maybe=n_maybe,
        n_unknown=n_unknown,
        not_free_meters=(n_occ + n_maybe + n_unknown) * grid.voxel_size,
        reflection_loss=rl,
        diffraction_loss=float(dl),
        worst_v=worst_v,
    )


# -- sample file format -------------------------------------------------------

SAMPLE_COLUMNS = [
    "distance_m", "log10_distance", "strictly_visible", "strictly_not_visible",
    "n_free", "n_occupied", "n_maybe", "n_unknown", "not_free_m",
    "reflection_loss_db", "diffraction_loss_db", "worst_v",
    "tx_id", "rx_id", "timestamp_s", "measured_pl_db", "synthetic",
]


def feature_row(f: FeatureVector) -> list[str]:
    return [repr(float(f.distance)), repr(float(f.log10_distance)),
            str(int(f.strictly_visible)), str(int(f.strictly_not_visible)),
            str(int(f.n_free)), str(int(f.n_occupied)), str(int(f.n_maybe)),
            str(int(f.n_unknown)), repr(float(f.not_free_meters)),
            repr(float(f.reflection_loss)), repr(float(f.diffraction_loss)),
            repr(float(f.worst_v))]


def write_samples(samples, path: str):
    """Write PathLossSamples as the documented comma-separated sample file."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SAMPLE_COLUMNS) + "\n")
        for s in samples:
            row = feature_row(s.features) + [
                s.tx_id, s.rx_id, repr(float(s.timestamp)),
                repr(float(s.measured_pl)), str(int(s.synthetic))]
            fh.write(",".join(row) + "\n")


def read_samples(path: str):
    """Read a sample file written by :func:`write_samples`."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.split(",") != SAMPLE_COLUMNS:
            raise ValueError(f"{path}: unexpected sample file header")
        for line in fh:
            c = line.rstrip("\n").split(",")
            if len(c) != len(SAMPLE_COLUMNS):
                raise ValueError(f"{path}: malformed sample row: {line!r}")
            f = FeatureVector(
                distance=float(c[0]), log10_distance=float(c[1]),
                strictly_visible=bool(int(c[2])),
                strictly_not_visible=bool(int(c[3])),
                n_free=int(c[4]), n_occupied=int(c[5]), n_maybe=int(c[6]),
                n_unknown=int(c[7]), not_free_meters=float(c[8]),
                reflection_loss=float(c[9]), diffraction_loss=float(c[10]),
                worst_v=float(c[11]))
            samples.append(PathLossSample(
                features=f, measured_pl=float(c[15]), tx_id=c[12], rx_id=c[13],
                timestamp=float(c[14]), synthetic=bool(int(c[16]))))
    return samples
