"""Measurement and pose log processing into path loss samples.

Stages: parse -> synchronize -> static-outlier removal -> disconnection
augmentation -> feature join. Every stage is a pure, single-pass stream
transform that preserves time order, so the pipeline is deterministic:
the same inputs produce a byte-identical sample file.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .features import PathLossSample, RadioSpec, extract
from .voxel_grid import OccupancyGrid

MEASUREMENT_HEADER = ("timestamp,tx_id,rx_id,rss_dbm,noise_dbm,"
                      "tx_power_dbm,frequency_hz")
POSE_HEADER = "timestamp,radio_id,x,y,z,qx,qy,qz,qw"
RADIO_HEADER = "radio_id,kind"

NOISE_FLOOR_DBM = -94.0


class FormatError(ValueError):
    """Raised for files whose header does not match the documented schema."""


@dataclass
class MeasurementRecord:
    """One timestamped RSS report between a transmitter and a receiver."""

    timestamp: float
    tx_id: str
    rx_id: str
    rss: float
    noise: float
    tx_power: float
    frequency: float
    tx_pos: np.ndarray | None = None
    rx_pos: np.ndarray | None = None
    synthetic: bool = False


@dataclass
class PoseStream:
    """Time-sorted pose history of one radio."""

    radio_id: str
    times: np.ndarray
    positions: np.ndarray

    def nearest(self, t: float):
        """(skew, position) of the pose nearest in time to t."""
        i = int(np.searchsorted(self.times, t))
        best, skew = None, math.inf
        for j in (i - 1, i):
            if 0 <= j < len(self.times):
                dt = abs(float(self.times[j]) - t)
                if dt < skew:
                    best, skew = j, dt
        return skew, self.positions[best]


@dataclass
class RadioInfo:
    radio_id: str
    kind: str  # static relay, mobile robot, or base station

    @property
    def is_static(self) -> bool:
        return self.kind in ("static", "base")


class RadioRegistry:
    def __init__(self, radios=()):
        self.radios = {r.radio_id: r for r in radios}

    def __contains__(self, radio_id):
        return radio_id in self.radios

    def is_static(self, radio_id: str) -> bool:
        info = self.radios.get(radio_id)
        return info.is_static if info is not None else False

    def static_ids(self):
        return [r.radio_id for r in self.radios.values() if r.is_static]


@dataclass
class ParsedLogs:
    records: list
    poses: dict
    skipped_measurements: int = 0
    skipped_poses: int = 0


def parse_measurements(path: str):
    """Read the measurement CSV; malformed lines are skipped and counted."""
    records, skipped = [], 0
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != MEASUREMENT_HEADER:
            raise FormatError(f"{path}: expected header "
                              f"{MEASUREMENT_HEADER!r}, got {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 7:
                skipped += 1
                continue
            try:
                rec = MeasurementRecord(
                    timestamp=float(parts[0]), tx_id=parts[1], rx_id=parts[2],
                    rss=float(parts[3]), noise=float(parts[4]),
                    tx_power=float(parts[5]), frequency=float(parts[6]))
            except ValueError:
                skipped += 1
                continue
            if not math.isfinite(rec.timestamp):
                skipped += 1
                continue
            if rec.rss < rec.noise - 5.0:
                warnings.warn(f"rss {rec.rss} dBm more than 5 dB below the "
                              f"noise floor {rec.noise} dBm at t={rec.timestamp}")
            records.append(rec)
    return records, skipped


def parse_poses(path: str):
    """Read the pose CSV into per-radio time-sorted streams."""
    rows, skipped = {}, 0
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != POSE_HEADER:
            raise FormatError(f"{path}: expected header {POSE_HEADER!r}, "
                              f"got {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 9:
                skipped += 1
                continue
            try:
                t = float(parts[0])
                xyz = [float(v) for v in parts[2:5]]
            except ValueError:
                skipped += 1
                continue
            rows.setdefault(parts[1], []).append((t, xyz))
    poses = {}
    for radio_id, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        poses[radio_id] = PoseStream(
            radio_id=radio_id,
            times=np.array([e[0] for e in entries]),
            positions=np.array([e[1] for e in entries]))
    return poses, skipped


def parse_logs(measurement_path: str, pose_path: str) -> ParsedLogs:
    records, skipped_m = parse_measurements(measurement_path)
    poses, skipped_p = parse_poses(pose_path)
    return ParsedLogs(records=records, poses=poses,
                      skipped_measurements=skipped_m, skipped_poses=skipped_p)


def parse_radios(path: str) -> RadioRegistry:
    radios = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != RADIO_HEADER:
            raise FormatError(f"{path}: expected header {RADIO_HEADER!r}, "
                              f"got {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) == 2:
                radios.append(RadioInfo(radio_id=parts[0], kind=parts[1]))
    return RadioRegistry(radios)


def synchronize(records, poses: dict, max_skew: float = 1.0):
    """Attach tx/rx positions from the nearest-in-time poses.

    A record is dropped when either radio has no pose within
    ``max_skew`` seconds (the boundary is inclusive: a pose exactly
    max_skew away is used).
    """
    out = []
    for rec in records:
        tx_stream = poses.get(rec.tx_id)
        rx_stream = poses.get(rec.rx_id)
        if tx_stream is None or rx_stream is None:
            continue
        tx_skew, tx_pos = tx_stream.nearest(rec.timestamp)
        rx_skew, rx_pos = rx_stream.nearest(rec.timestamp)
        if tx_skew > max_skew or rx_skew > max_skew:
            continue
        rec.tx_pos = np.asarray(tx_pos, dtype=float)
        rec.rx_pos = np.asarray(rx_pos, dtype=float)
        out.append(rec)
    return out


def remove_static_outliers(records, registry: RadioRegistry,
                           radius: float = 3.0):
    """Drop records that place a static radio far from its median position.

    The coordinate-wise median of each static radio's attached positions
    is the reference; records placing the radio more than ``radius``
    meters away are localization failures and are removed. Mobile radios
    are untouched.
    """
    positions: dict[str, list] = {}
    for rec in records:
        if rec.tx_pos is None or rec.rx_pos is None:
            continue
        if registry.is_static(rec.tx_id):
            positions.setdefault(rec.tx_id, []).append(rec.tx_pos)
        if registry.is_static(rec.rx_id):
            positions.setdefault(rec.rx_id, []).append(rec.rx_pos)
    medians = {rid: np.median(np.stack(p), axis=0)
               for rid, p in positions.items()}

    def ok(radio_id, pos):
        med = medians.get(radio_id)
        if med is None or pos is None:
            return True
        return float(np.linalg.norm(pos - med)) <= radius

    return [rec for rec in records
            if ok(rec.tx_id, rec.tx_pos) and ok(rec.rx_id, rec.rx_pos)]


def augment_disconnections(records, poses: dict, window_s: float = 120.0,
                           tick_s: float = 10.0,
                           floor_dbm: float = NOISE_FLOOR_DBM,
                           default_tx_power: float = 30.0,
                           default_frequency: float = 2.4e9):
    """Impute noise-floor RSS for certainly-disconnected radio pairs.

    For every unordered pair of radios with pose data, silent intervals
    of at least ``window_s`` seconds inside the pair's common position
    coverage get one synthetic record per ``tick_s`` tick at the noise
    floor. Intervals bounded by a real measurement start ticking one
    tick after it, so no synthetic record ever lands in a window that
    contains a real measurement for the pair. Output is the time-sorted
    merge of real and synthetic records (stable; real first at ties).
    """
    radio_ids = sorted(poses.keys())
    real_times: dict[tuple, list] = {}
    last_power: dict[tuple, tuple] = {}
    for rec in records:
        key = tuple(sorted((rec.tx_id, rec.rx_id)))
        real_times.setdefault(key, []).append(rec.timestamp)
        prev = last_power.get(key)
        if prev is None or rec.timestamp >= prev[0]:
            last_power[key] = (rec.timestamp, rec.tx_power, rec.frequency)

    synthetic = []
    for i, a in enumerate(radio_ids):
        for b in radio_ids[i + 1:]:
            key = (a, b)
            sa, sb = poses[a], poses[b]
            span_lo = max(float(sa.times[0]), float(sb.times[0]))
            span_hi = min(float(sa.times[-1]), float(sb.times[-1]))
            if span_hi <= span_lo:
                continue
            times = sorted(t for t in real_times.get(key, ())
                           if span_lo <= t <= span_hi)
            # Silent intervals: [start, end) with a flag for whether the
            # left bound is a real measurement.
            intervals = []
            prev_t, prev_is_meas = span_lo, False
            for t in times:
                intervals.append((prev_t, t, prev_is_meas))
                prev_t, prev_is_meas = t, True
            intervals.append((prev_t, span_hi, prev_is_meas))
            for lo, hi, after_meas in intervals:
                if hi - lo < window_s:
                    continue
                t = lo + tick_s if after_meas else lo
                power = last_power.get(key, (None, default_tx_power,
                                             default_frequency))
                while t < hi:
                    _, pos_a = sa.nearest(t)
                    _, pos_b = sb.nearest(t)
                    synthetic.append(MeasurementRecord(
                        timestamp=t, tx_id=a, rx_id=b, rss=floor_dbm,
                        noise=floor_dbm, tx_power=power[1],
                        frequency=power[2],
                        tx_pos=np.asarray(pos_a, dtype=float),
                        rx_pos=np.asarray(pos_b, dtype=float),
                        synthetic=True))
                    t += tick_s
    merged = list(records) + synthetic
    merged.sort(key=lambda r: (r.timestamp, r.synthetic))
    return merged


def to_samples(records, grid: OccupancyGrid, radio: RadioSpec,
               rl_floor_db: float | None = None,
               fresnel_spacing: float | None = None):
    """Join records with grid features into PathLossSamples.

    measured_pl = tx_power - rss. Records without attached positions or
    with coincident positions are skipped.
    """
    from .features import RL_FLOOR_DB
    if rl_floor_db is None:
        rl_floor_db = RL_FLOOR_DB
    samples = []
    for rec in records:
        if rec.tx_pos is None or rec.rx_pos is None:
            continue
        if np.array_equal(rec.tx_pos, rec.rx_pos):
            continue
        f = extract(rec.tx_pos, rec.rx_pos, grid, radio,
                    rl_floor_db=rl_floor_db, fresnel_spacing=fresnel_spacing)
        samples.append(PathLossSample(
            features=f, measured_pl=rec.tx_power - rec.rss,
            tx_id=rec.tx_id, rx_id=rec.rx_id, timestamp=rec.timestamp,
            rss=rec.rss, synthetic=rec.synthetic))
    return samples


# -- correlation report -------------------------------------------------------

FEATURE_FIELDS = ("distance", "log10_distance", "strictly_visible",
                  "strictly_not_visible", "n_free", "n_occupied", "n_maybe",
                  "n_unknown", "not_free_meters", "reflection_loss",
                  "diffraction_loss", "worst_v")


@dataclass
class CorrelationEntry:
    feature: str
    r: float
    zero_variance: bool = False


def correlation_report(samples) -> list[CorrelationEntry]:
    """Pearson correlation of every feature against RSS (not path loss)."""
    if len(samples) < 3:
        raise ValueError("need at least 3 samples for a correlation report")
    rss = np.array([s.rss for s in samples], dtype=float)
    if np.any(~np.isfinite(rss)):
        raise ValueError("samples lack RSS values (was the sample list "
                         "produced by to_samples?)")
    out = []
    rss_sd = rss.std()
    for name in FEATURE_FIELDS:
        x = np.array([float(getattr(s.features, name)) for s in samples])
        sd = x.std()
        if sd == 0.0 or rss_sd == 0.0:
            out.append(CorrelationEntry(feature=name, r=0.0,
                                        zero_variance=True))
            continue
        r = float(np.mean((x - x.mean()) * (rss - rss.mean())) / (sd * rss_sd))
        out.append(CorrelationEntry(feature=name, r=r))
    return out


def write_correlation_csv(entries, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("feature,r_vs_rss,zero_variance\n")
        for e in entries:
            fh.write(f"{e.feature},{e.r!r},{int(e.zero_variance)}\n")


# -- writers used by the synthetic world and tests ---------------------------


def write_measurements(records, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MEASUREMENT_HEADER + "\n")
        for r in records:
            fh.write(f"{float(r.timestamp)!r},{r.tx_id},{r.rx_id},"
                     f"{float(r.rss)!r},{float(r.noise)!r},"
                     f"{float(r.tx_power)!r},{float(r.frequency)!r}\n")


def write_poses(pose_rows, path: str):
    """pose_rows: iterable of (t, radio_id, xyz, quat)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(POSE_HEADER + "\n")
        for t, radio_id, xyz, quat in pose_rows:
            x, y, z = (float(v) for v in xyz)
            qx, qy, qz, qw = (float(v) for v in quat)
            fh.write(f"{float(t)!r},{radio_id},{x!r},{y!r},{z!r},"
                     f"{qx!r},{qy!r},{qz!r},{qw!r}\n")


def write_radios(registry: RadioRegistry, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(RADIO_HEADER + "\n")
        for rid in sorted(registry.radios):
            fh.write(f"{rid},{registry.radios[rid].kind}\n")
