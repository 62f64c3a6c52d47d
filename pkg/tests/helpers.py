"""Shared builders for tests."""

from __future__ import annotations

import math

import numpy as np

from rfprop.features import FeatureVector, PathLossSample
from rfprop.voxel_grid import OccupancyGrid


def make_fv(distance=10.0, strictly_visible=True, strictly_not_visible=False,
            n_free=0, n_occupied=0, n_maybe=0, n_unknown=0,
            not_free_meters=0.0, reflection_loss=0.0, diffraction_loss=0.0,
            worst_v=-math.sqrt(2.0)) -> FeatureVector:
    return FeatureVector(
        distance=distance, log10_distance=math.log10(distance),
        strictly_visible=strictly_visible,
        strictly_not_visible=strictly_not_visible,
        n_free=n_free, n_occupied=n_occupied, n_maybe=n_maybe,
        n_unknown=n_unknown, not_free_meters=not_free_meters,
        reflection_loss=reflection_loss, diffraction_loss=diffraction_loss,
        worst_v=worst_v)


def make_sample(f: FeatureVector, measured_pl: float, tx="tx", rx="rx",
                t=0.0, synthetic=False) -> PathLossSample:
    return PathLossSample(features=f, measured_pl=measured_pl, tx_id=tx,
                          rx_id=rx, timestamp=t, synthetic=synthetic)


def fill_region_free(grid: OccupancyGrid, lo, hi):
    """Mark every voxel whose center lies in [lo, hi) as definitely free."""
    _fill_region(grid, lo, hi, grid.l_min)


def fill_region_occupied(grid: OccupancyGrid, lo, hi):
    _fill_region(grid, lo, hi, grid.l_max)


def _fill_region(grid: OccupancyGrid, lo, hi, value):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    i_lo = grid.world_to_index(lo + grid.voxel_size / 2)
    i_hi = grid.world_to_index(hi - grid.voxel_size / 2)
    for i in range(i_lo[0], i_hi[0] + 1):
        for j in range(i_lo[1], i_hi[1] + 1):
            for k in range(i_lo[2], i_hi[2] + 1):
                grid.set_log_odds((i, j, k), value)
