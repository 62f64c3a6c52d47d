"""3D predicted signal strength maps over explored space.

For every map cell in explored space (its voxel is not Unknown) the best
received signal strength over all transmitters is predicted with any
fitted model, giving a connectivity map for planning and supervision.
Per-cell predictions are independent and run against an immutable grid
snapshot, so the build is embarrassingly parallel in principle; this
implementation is a straightforward loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import RadioSpec, extract
from .pipeline import NOISE_FLOOR_DBM
from .voxel_grid import OccupancyGrid, VoxelState

# fixed grayscale window for PGM export, dBm
PGM_RSS_LO = -110.0
PGM_RSS_HI = -30.0


@dataclass(frozen=True)
class Transmitter:
    tx_id: str
    position: np.ndarray
    tx_power_dbm: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float).reshape(3))


@dataclass
class SignalMap:
    resolution: float
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    tx_ids: list
    threshold_dbm: float
    rss: np.ndarray        # (nx, ny, nz) best predicted RSS, NaN unexplored
    best_tx: np.ndarray    # (nx, ny, nz) index into tx_ids, -1 unexplored
    explored: np.ndarray   # (nx, ny, nz) bool

    @property
    def shape(self):
        return self.rss.shape

    @property
    def connected(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.explored & (np.nan_to_num(self.rss, nan=-np.inf)
                                    >= self.threshold_dbm)

    def cell_center(self, i: int, j: int, k: int) -> np.ndarray:
        return self.bounds_lo + (np.array([i, j, k]) + 0.5) * self.resolution


def build_map(grid: OccupancyGrid, transmitters, predictor,
              radio: RadioSpec, resolution: float,
              threshold_dbm: float = NOISE_FLOOR_DBM,
              bounds=None) -> SignalMap:
    """Predict best RSS per cell from any transmitter.

    Args:
        grid: occupancy snapshot defining explored space.
        transmitters: list of Transmitter.
        predictor: FeatureVector -> predicted attenuation (dB).
        radio: link parameters used for feature extraction.
        resolution: cell edge length in meters.
        threshold_dbm: connectivity threshold (noise floor by default).
        bounds: optional (lo, hi) world-space override; defaults to the
            grid's touched bounding box.

    A cell whose center coincides with (or sits within the reference
    distance of) a transmitter is evaluated at a link length clamped to
    1 m. Cells outside explored space get NaN RSS and are never
    connected.
    """
    if not transmitters:
        raise ValueError("need at least one transmitter")
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    if bounds is None:
        bounds = grid.bounding_box()
        if bounds is None:
            raise ValueError("grid is empty and no bounds were given")
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    shape = tuple(int(max(1, np.ceil((hi[a] - lo[a]) / resolution - 1e-9)))
                  for a in range(3))
    rss = np.full(shape, np.nan)
    best_tx = np.full(shape, -1, dtype=np.int64)
    explored = np.zeros(shape, dtype=bool)

    centers = np.array([[lo[0] + (i + 0.5) * resolution,
                         lo[1] + (j + 0.5) * resolution,
                         lo[2] + (k + 0.5) * resolution]
                        for i in range(shape[0])
                        for j in range(shape[1])
                        for k in range(shape[2])])
    states = grid.states_at_points(centers)
    flat_explored = states != VoxelState.UNKNOWN

    n = 0
    for i in range(shape[0]):
        for j in range(shape[1]):
            for k in range(shape[2]):
                if not flat_explored[n]:
                    n += 1
                    continue
                c = centers[n]
                explored[i, j, k] = True
                best_val, best_idx = -np.inf, -1
                for t_idx, tx in enumerate(transmitters):
                    rx_eval = _clamped_endpoint(tx.position, c)
                    f = extract(tx.position, rx_eval, grid, radio)
                    val = tx.tx_power_dbm - predictor(f)
                    if val > best_val:
                        best_val, best_idx = val, t_idx
                rss[i, j, k] = best_val
                best_tx[i, j, k] = best_idx
                n += 1
    return SignalMap(resolution=float(resolution), bounds_lo=lo, bounds_hi=hi,
                     tx_ids=[t.tx_id for t in transmitters],
                     threshold_dbm=float(threshold_dbm), rss=rss,
                     best_tx=best_tx, explored=explored)


def _clamped_endpoint(tx_pos: np.ndarray, cell_center: np.ndarray,
                      d0: float = 1.0) -> np.ndarray:
    """Evaluation point at least d0 from the transmitter."""
    delta = cell_center - tx_pos
    d = float(np.linalg.norm(delta))
    if d >= d0:
        return cell_center
    if d == 0.0:
        return tx_pos + np.array([d0, 0.0, 0.0])
    return tx_pos + delta * (d0 / d)


def export_map_csv(smap: SignalMap, path: str):
    """Cell-per-row CSV: x,y,z,rss_dbm,best_tx,connected,explored."""
    connected = smap.connected
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,z,rss_dbm,best_tx,connected,explored\n")
        for i in range(smap.shape[0]):
            for j in range(smap.shape[1]):
                for k in range(smap.shape[2]):
                    c = smap.cell_center(i, j, k)
                    val = smap.rss[i, j, k]
                    rss_txt = repr(float(val)) if np.isfinite(val) else "nan"
                    tx = (smap.tx_ids[smap.best_tx[i, j, k]]
                          if smap.best_tx[i, j, k] >= 0 else "")
                    fh.write(f"{float(c[0])!r},{float(c[1])!r},"
                             f"{float(c[2])!r},{rss_txt},{tx},"
                             f"{int(connected[i, j, k])},"
                             f"{int(smap.explored[i, j, k])}\n")


def export_map_pgm(smap: SignalMap, path_base: str):
    """One ASCII PGM per z slice; 0 marks unexplored cells.

    RSS maps linearly from [-110, -30] dBm onto gray 1..255.

    Returns:
        List of file paths written.
    """
    paths = []
    for k in range(smap.shape[2]):
        path = f"{path_base}_z{k}.pgm"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("P2\n")
            fh.write(f"{smap.shape[0]} {smap.shape[1]}\n255\n")
            for j in range(smap.shape[1] - 1, -1, -1):  # north-up image
                row = []
                for i in range(smap.shape[0]):
                    v = smap.rss[i, j, k]
                    if not np.isfinite(v):
                        row.append(0)
                    else:
                        frac = (v - PGM_RSS_LO) / (PGM_RSS_HI - PGM_RSS_LO)
                        row.append(1 + int(round(254 * min(max(frac, 0.0),
                                                           1.0))))
                fh.write(" ".join(str(g) for g in row) + "\n")
        paths.append(path)
    return paths
