"""Online learning replay: drive models through time-ordered logs.

A simulated clock advances through measurement records and scans. Scans
update the occupancy grid as they arrive; at every window boundary
(60 s by default) the window's measurements are joined with features
from the current grid snapshot, the neural model takes one online
training step on them, and (every k minutes) the regression models are
re-fit on the last k minutes of samples.

Evaluation is forward-chaining: each window's samples are scored by the
model as it stood before that window's update, so the reported MAE is
predictive rather than in-sample. All measurements are assumed to be
available instantly (no network latency).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .conventional import FitError, fit_shadowing, fit_visibility
from .features import RadioSpec
from .mlp import (VARIANT_DIMS, MlpModel, TrainConfig, evaluate,
                  train_offline, train_online_step)
from .pipeline import to_samples
from .voxel_grid import OccupancyGrid, UpdateParams, integrate_scan


@dataclass
class WindowRow:
    index: int
    t_start: float
    t_end: float
    n_samples: int
    mae_online: float
    mae_frozen: float
    sae_online: float  # sum of absolute errors, for exact aggregation
    sae_frozen: float
    refit: dict | None = None


@dataclass
class ReplayResult:
    rows: list = field(default_factory=list)
    model: MlpModel | None = None
    frozen_model: MlpModel | None = None
    final_refit: dict | None = None

    def aggregate_mae(self, rows, frozen: bool = False) -> float:
        sae = sum(r.sae_frozen if frozen else r.sae_online for r in rows)
        n = sum(r.n_samples for r in rows)
        return sae / n if n else float("nan")

    def write_csv(self, path: str):
        cols = ("window,t_start,t_end,n_samples,mae_online_db,mae_frozen_db,"
                "pl_d0_los,eta_los,pl_d0_nlos,eta_nlos,alpha_db_per_m")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(cols + "\n")
            for r in self.rows:
                refit = r.refit or {}
                vals = [str(r.index), repr(float(r.t_start)),
                        repr(float(r.t_end)), str(r.n_samples),
                        _num(r.mae_online), _num(r.mae_frozen)]
                for key in ("pl_d0_los", "eta_los", "pl_d0_nlos", "eta_nlos",
                            "alpha_db_per_m"):
                    vals.append(_num(refit.get(key)))
                fh.write(",".join(vals) + "\n")


def _num(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def refit_regressions(samples) -> dict:
    """Visibility and shadowing re-fit on one sample window."""
    out = {}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vis = fit_visibility(samples)
            shad = fit_shadowing(samples, vis.los)
        out.update({"pl_d0_los": vis.los.pl_d0, "eta_los": vis.los.eta,
                    "pl_d0_nlos": vis.nlos.pl_d0, "eta_nlos": vis.nlos.eta,
                    "alpha_db_per_m": shad.alpha_db_per_m})
    except FitError as exc:
        warnings.warn(f"regression re-fit skipped: {exc}")
    return out or None


def replay(records, scans, radio: RadioSpec, variant: str = "vox",
           window_s: float = 60.0, k_minutes: int = 1,
           offline_model: MlpModel | None = None,
           train_config: TrainConfig = TrainConfig(),
           grid: OccupancyGrid | None = None,
           update_params: UpdateParams = UpdateParams(),
           voxel_size: float = 0.5) -> ReplayResult:
    """Run the online loop over time-sorted records and scans.

    Args:
        records: MeasurementRecords with positions attached, time-sorted.
        scans: ScanFrames, time-sorted.
        radio: link parameters for feature extraction.
        variant: neural model variant to train online.
        window_s: online step cadence.
        k_minutes: regression re-fit cadence in windows (0 disables);
            the re-fit uses the last k windows of samples.
        offline_model: warm start; when None, the first window's samples
            train the model offline and online stepping starts from the
            second window.
        grid: starting occupancy grid (fresh if None).

    Raises:
        ValueError: records or scans not time-sorted.
    """
    times = [r.timestamp for r in records]
    if times != sorted(times):
        raise ValueError("records must be time-sorted")
    scan_times = [s.timestamp for s in scans]
    if scan_times != sorted(scan_times):
        raise ValueError("scans must be time-sorted")
    if grid is None:
        grid = OccupancyGrid(voxel_size=voxel_size)

    result = ReplayResult()
    if not records:
        result.model = offline_model
        result.frozen_model = offline_model
        return result

    t0 = min(times[0], scan_times[0]) if scan_times else times[0]
    t_end = times[-1]
    model = offline_model.copy() if offline_model is not None else None
    frozen = offline_model.copy() if offline_model is not None else None

    rec_i = 0
    scan_i = 0
    window = 0
    recent_windows = []
    bootstrap_pool = []
    boundary = t0
    while boundary <= t_end:
        window += 1
        w_start, boundary = boundary, t0 + window * window_s
        while scan_i < len(scans) and scans[scan_i].timestamp < boundary:
            integrate_scan(scans[scan_i], grid, update_params)
            scan_i += 1
        window_records = []
        while rec_i < len(records) and records[rec_i].timestamp < boundary:
            window_records.append(records[rec_i])
            rec_i += 1
        samples = to_samples(window_records, grid, radio)
        recent_windows.append(samples)

        mae_online = mae_frozen = float("nan")
        sae_online = sae_frozen = 0.0
        if samples:
            if model is not None:
                res = evaluate(model, samples)
                mae_online, sae_online = res.mae, res.mae * res.n
            if frozen is not None:
                res = evaluate(frozen, samples)
                mae_frozen, sae_frozen = res.mae, res.mae * res.n

        refit = None
        if k_minutes > 0 and window % k_minutes == 0:
            pool = [s for w in recent_windows[-k_minutes:] for s in w]
            if pool:
                refit = refit_regressions(pool)
                if refit:
                    result.final_refit = refit

        result.rows.append(WindowRow(
            index=window, t_start=w_start, t_end=boundary,
            n_samples=len(samples), mae_online=mae_online,
            mae_frozen=mae_frozen, sae_online=sae_online,
            sae_frozen=sae_frozen, refit=refit))

        if samples:
            if model is None:
                # bootstrap: accumulate windows until an offline fit is
                # well-posed, then online stepping takes over
                bootstrap_pool.extend(samples)
                if len(bootstrap_pool) >= 10 * VARIANT_DIMS[variant]:
                    model, _ = train_offline(bootstrap_pool, variant,
                                             train_config)
                    frozen = model.copy()
                    bootstrap_pool = []
            else:
                train_online_step(model, samples, train_config)

    result.model = model
    result.frozen_model = frozen
    return result
