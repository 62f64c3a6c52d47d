"""Physics-grounded path loss predictors with least-squares fitting.

Six predictors map a FeatureVector to attenuation in dB: the
log-distance model, a visibility-partitioned variant, a shadowing
heuristic (dB per meter of not-free space), the two-ray ground
reflection model, knife-edge diffraction, and their combination.

Fitting is single-threaded per dataset; prediction is pure and safe to
run in parallel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .features import CLEAR_ZONE_V, FeatureVector

MODEL_NAMES = ("simple", "visibility", "shadowing", "two-ray", "knife-edge",
               "refl-diff")


class FitError(ValueError):
    """Raised when a least-squares fit is ill-posed."""


@dataclass
class PathLossParams:
    """Log-distance model parameters: PL = pl_d0 + eta*10*log10(d/d0)."""

    pl_d0: float
    eta: float
    d0: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.pl_d0) and math.isfinite(self.eta)):
            raise ValueError("path loss parameters must be finite")
        if not 1.0 <= self.eta <= 8.0:
            warnings.warn(f"path loss exponent {self.eta:.3g} outside the "
                          "typical [1, 8] range", stacklevel=3)


@dataclass
class VisibilityParams:
    los: PathLossParams
    nlos: PathLossParams


@dataclass
class ShadowingParams:
    los: PathLossParams
    alpha_db_per_m: float

    def __post_init__(self):
        if self.alpha_db_per_m < 0.0:
            warnings.warn(f"negative shadowing attenuation "
                          f"{self.alpha_db_per_m:.3g} dB/m", stacklevel=3)


def ols_fit(xs, ys, fit_intercept: bool = True):
    """Ordinary least squares: minimize ||X*coef + intercept - y||^2.

    Args:
        xs: (N, k) design rows (or (N,) for a single feature).
        ys: (N,) targets.
        fit_intercept: include a constant column.

    Returns:
        (coef (k,), intercept) with intercept 0.0 when not fitted.

    Raises:
        FitError: fewer samples than parameters, or rank-deficient
            design (the message carries the condition diagnostic).
    """
    x = np.asarray(xs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(ys, dtype=float)
    n, k = x.shape
    n_params = k + (1 if fit_intercept else 0)
    if n < n_params:
        raise FitError(f"need at least {n_params} samples, got {n}")
    design = np.hstack([x, np.ones((n, 1))]) if fit_intercept else x
    coef, _, rank, svals = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else math.inf
        raise FitError(f"rank-deficient design: rank {rank} < "
                       f"{design.shape[1]}, condition {cond:.3g}")
    if fit_intercept:
        return coef[:-1], float(coef[-1])
    return coef, 0.0


def _log_distance_term(d, d0: float):
    return 10.0 * np.log10(np.maximum(np.asarray(d, dtype=float), d0) / d0)


def predict_simple(params: PathLossParams, f: FeatureVector) -> float:
    """Log-distance path loss; d below the reference distance is clamped."""
    return params.pl_d0 + params.eta * float(_log_distance_term(f.distance,
                                                                params.d0))


def fit_simple(samples, d0: float = 1.0) -> PathLossParams:
    """Fit (pl_d0, eta) with OLS on all samples."""
    x = _log_distance_term([s.features.distance for s in samples], d0)
    y = [s.measured_pl for s in samples]
    coef, intercept = ols_fit(x, y)
    return PathLossParams(pl_d0=intercept, eta=float(coef[0]), d0=d0)


def fit_visibility(samples, d0: float = 1.0) -> VisibilityParams:
    """Fit independent log-distance curves to the LOS and nLOS partitions.

    LOS means strictly visible; everything else (including links blocked
    only by maybe-occupied or unknown voxels) is nLOS. When a partition
    has fewer than 2 samples both curves fall back to a single fit over
    all samples, with a warning.
    """
    los = [s for s in samples if s.features.strictly_visible]
    nlos = [s for s in samples if not s.features.strictly_visible]
    if len(los) < 2 or len(nlos) < 2:
        warnings.warn("empty or tiny visibility partition; falling back to a "
                      "single log-distance fit for both curves")
        p = fit_simple(samples, d0)
        return VisibilityParams(los=p, nlos=PathLossParams(p.pl_d0, p.eta, d0))
    return VisibilityParams(los=fit_simple(los, d0), nlos=fit_simple(nlos, d0))


def predict_visibility(params: VisibilityParams, f: FeatureVector) -> float:
    p = params.los if f.strictly_visible else params.nlos
    return predict_simple(p, f)


def fit_shadowing(samples, los_params: PathLossParams) -> ShadowingParams:
    """Fit the dB-per-meter-of-not-free-space correction.

    Zero-intercept OLS of the residual against not_free_meters, so zero
    obstruction implies zero correction.
    """
    x = np.array([s.features.not_free_meters for s in samples])
    resid = np.array([s.measured_pl - predict_simple(los_params, s.features)
                      for s in samples])
    if np.all(x == 0.0):
        warnings.warn("all samples have zero not-free meters; alpha set to 0")
        return ShadowingParams(los=los_params, alpha_db_per_m=0.0)
    coef, _ = ols_fit(x, resid, fit_intercept=False)
    return ShadowingParams(los=los_params, alpha_db_per_m=float(coef[0]))


def predict_shadowing(params: ShadowingParams, f: FeatureVector) -> float:
    return (predict_simple(params.los, f)
            + params.alpha_db_per_m * f.not_free_meters)


def predict_two_ray(los_params: PathLossParams, f: FeatureVector) -> float:
    """LOS log-distance loss minus the ground reflection term.

    Sign convention: PL is attenuation, so subtracting a destructive
    (negative) reflection loss increases the predicted attenuation.
    """
    return predict_simple(los_params, f) - f.reflection_loss


def predict_knife_edge(los_params: PathLossParams, f: FeatureVector) -> float:
    """LOS log-distance loss minus the (non-positive) diffraction term."""
    return predict_simple(los_params, f) - f.diffraction_loss


def predict_reflection_diffraction(los_params: PathLossParams,
                                   f: FeatureVector) -> float:
    """Combined reflection and diffraction rule.

    A zone with worst-case v <= -0.8 counts as clear and the prediction
    reduces to the two-ray model; otherwise diffraction loss is
    subtracted from the two-ray model with constructive reflective
    interference ignored. Discontinuous at v = -0.8 by construction.
    """
    if f.worst_v <= CLEAR_ZONE_V:
        return predict_two_ray(los_params, f)
    return (predict_simple(los_params, f) - min(f.reflection_loss, 0.0)
            - f.diffraction_loss)


# -- uniform predictor interface ----------------------------------------------


def fit_model(name: str, samples):
    """Fit the named model, returning its parameter object.

    Models built on LOS parameters (shadowing, two-ray, knife-edge,
    refl-diff) take them from the visibility fit's LOS partition.
    """
    if name == "simple":
        return fit_simple(samples)
    if name == "visibility":
        return fit_visibility(samples)
    if name == "shadowing":
        los = fit_visibility(samples).los
        return fit_shadowing(samples, los)
    if name in ("two-ray", "knife-edge", "refl-diff"):
        return fit_visibility(samples).los
    raise ValueError(f"unknown model {name!r} (expected one of {MODEL_NAMES})")


def make_predictor(name: str, params):
    """Bind fitted parameters into a FeatureVector -> PL(dB) callable."""
    if name == "simple":
        return lambda f: predict_simple(params, f)
    if name == "visibility":
        return lambda f: predict_visibility(params, f)
    if name == "shadowing":
        return lambda f: predict_shadowing(params, f)
    if name == "two-ray":
        return lambda f: predict_two_ray(params, f)
    if name == "knife-edge":
        return lambda f: predict_knife_edge(params, f)
    if name == "refl-diff":
        return lambda f: predict_reflection_diffraction(params, f)
    raise ValueError(f"unknown model {name!r} (expected one of {MODEL_NAMES})")


# -- parameter file -----------------------------------------------------------


def _params_dict(name: str, params) -> dict[str, float]:
    if name == "simple":
        return {"pl_d0": params.pl_d0, "eta": params.eta, "d0": params.d0}
    if name == "visibility":
        return {"los.pl_d0": params.los.pl_d0, "los.eta": params.los.eta,
                "nlos.pl_d0": params.nlos.pl_d0, "nlos.eta": params.nlos.eta,
                "d0": params.los.d0}
    if name == "shadowing":
        return {"los.pl_d0": params.los.pl_d0, "los.eta": params.los.eta,
                "alpha_db_per_m": params.alpha_db_per_m, "d0": params.los.d0}
    if name in ("two-ray", "knife-edge", "refl-diff"):
        return {"los.pl_d0": params.pl_d0, "los.eta": params.eta,
                "d0": params.d0}
    raise ValueError(f"unknown model {name!r}")


def append_params(path: str, name: str, params, n_samples: int,
                  data_timestamp: float):
    """Append one fit as a flat key-value block, keeping an audit history.

    The timestamp recorded is the newest sample timestamp used by the
    fit, not wall-clock time, so re-runs are byte-identical.
    """
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(f"[fit {name}]\n")
        fh.write(f"data_timestamp={data_timestamp!r}\n")
        fh.write(f"n_samples={n_samples}\n")
        for key, value in _params_dict(name, params).items():
            fh.write(f"{key}={value!r}\n")
        fh.write("\n")


def load_params(path: str, name: str | None = None):
    """Load the most recent fit block (optionally of a given model).

    Returns:
        (model_name, params object).
    """
    blocks = []
    with open(path, "r", encoding="utf-8") as fh:
        current = None
        for line in fh:
            line = line.strip()
            if line.startswith("[fit ") and line.endswith("]"):
                current = (line[5:-1], {})
                blocks.append(current)
            elif "=" in line and current is not None:
                key, value = line.split("=", 1)
                current[1][key] = value
    if name is not None:
        blocks = [b for b in blocks if b[0] == name]
    if not blocks:
        raise ValueError(f"{path}: no fitted parameters"
                         + (f" for model {name!r}" if name else ""))
    model, kv = blocks[-1]
    d0 = float(kv.get("d0", 1.0))
    if model == "simple":
        return model, PathLossParams(float(kv["pl_d0"]), float(kv["eta"]), d0)
    if model == "visibility":
        return model, VisibilityParams(
            los=PathLossParams(float(kv["los.pl_d0"]), float(kv["los.eta"]), d0),
            nlos=PathLossParams(float(kv["nlos.pl_d0"]), float(kv["nlos.eta"]), d0))
    if model == "shadowing":
        return model, ShadowingParams(
            los=PathLossParams(float(kv["los.pl_d0"]), float(kv["los.eta"]), d0),
            alpha_db_per_m=float(kv["alpha_db_per_m"]))
    if model in ("two-ray", "knife-edge", "refl-diff"):
        return model, PathLossParams(float(kv["los.pl_d0"]),
                                     float(kv["los.eta"]), d0)
    raise ValueError(f"{path}: unknown model {model!r} in params file")
