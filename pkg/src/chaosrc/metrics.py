"""Forecast-quality metrics: normalized error series, Valid Prediction Time,
Valid Ground Truth Time across solver pairs, log-error slope extraction, and
the early-error extrapolation of the validity horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import (
    AlreadyExceededError,
    DimensionMismatchError,
    InsufficientGrowthWindowError,
    NonpositiveSlopeError,
    ZeroVarianceError,
)
from .lorenz_ode import Trajectory

#: Maximum Lyapunov exponent of the Lorenz system at the canonical parameters.
LORENZ_LYAPUNOV = 0.9056
#: Normalized-squared-error threshold defining the validity horizon.
VPT_THRESHOLD = 0.4


@dataclass
class ErrorSeries:
    """Normalized squared error E(k*dt); a non-finite tail flags divergence."""

    dt: float
    values: np.ndarray

    @property
    def horizon(self) -> float:
        return (len(self.values) - 1) * self.dt


@dataclass(frozen=True)
class VptResult:
    crossed: bool
    t_raw: float
    vpt_lyap: float
    threshold: float

    def to_json_dict(self, lyap: float) -> dict:
        return {
            "threshold": self.threshold,
            "lyapunov_exponent": lyap,
            "t_raw": self.t_raw,
            "vpt_lyap": self.vpt_lyap,
            "crossed": self.crossed,
        }


def segment_variance(data: np.ndarray) -> float:
    """Time-mean of the squared deviation from the per-dimension time means,
    summed over dimensions."""
    dev = data - data.mean(axis=1, keepdims=True)
    return float(np.mean(np.sum(dev * dev, axis=0)))


def normalized_error_series(truth: Trajectory, pred: Trajectory) -> ErrorSeries:
    """Squared per-sample deviation between trajectories, normalized by the
    variance of the truth segment being compared."""
    if truth.data.shape != pred.data.shape:
        raise DimensionMismatchError(
            f"trajectory shapes differ: {truth.data.shape} vs {pred.data.shape}"
        )
    if truth.n_samples < 2:
        raise DimensionMismatchError("need at least 2 samples")
    if abs(truth.dt - pred.dt) > 1e-12 * max(truth.dt, pred.dt):
        raise ValueError("trajectories must share dt")
    var = segment_variance(truth.data)
    if var == 0.0:
        raise ZeroVarianceError("truth segment is constant")
    diff = truth.data - pred.data
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.sum(diff * diff, axis=0) / var
    return ErrorSeries(dt=truth.dt, values=e)


def vpt(e: ErrorSeries, threshold: float = VPT_THRESHOLD, lyap: float = LORENZ_LYAPUNOV) -> VptResult:
    """First time the error exceeds the threshold, in raw and Lyapunov times.

    A non-finite value counts as exceeded at its index; if the threshold is
    never exceeded the horizon is reported with crossed=False.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    vals = np.asarray(e.values, dtype=float)
    exceeded = ~(vals <= threshold)  # catches NaN and inf as well
    if exceeded.any():
        k = int(np.argmax(exceeded))
        t_raw = k * e.dt
        return VptResult(True, t_raw, t_raw * lyap, threshold)
    t_raw = (len(vals) - 1) * e.dt
    return VptResult(False, t_raw, t_raw * lyap, threshold)


@dataclass(frozen=True)
class PairCrossing:
    first: int
    second: int
    crossed: bool
    t_raw: float
    vpt_lyap: float


def pairwise_crossings(
    trajs, threshold: float = VPT_THRESHOLD, lyap: float = LORENZ_LYAPUNOV
) -> list[PairCrossing]:
    """Threshold-crossing time for every unordered trajectory pair.

    Both orientations of each pair are evaluated (the normalizing variance
    depends on which member acts as the reference) and the smaller crossing
    time is kept, which makes the result symmetric.
    """
    n = len(trajs)
    if n < 2:
        raise ValueError("need at least two trajectories")
    for t in trajs[1:]:
        if t.data.shape != trajs[0].data.shape:
            raise DimensionMismatchError("trajectories must share their grid")
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            r_ij = vpt(normalized_error_series(trajs[i], trajs[j]), threshold, lyap)
            r_ji = vpt(normalized_error_series(trajs[j], trajs[i]), threshold, lyap)
            best = r_ij if r_ij.t_raw <= r_ji.t_raw else r_ji
            crossed = r_ij.crossed or r_ji.crossed
            out.append(PairCrossing(i, j, crossed, best.t_raw, best.t_raw * lyap))
    return out


def vgtt(trajs, threshold: float = VPT_THRESHOLD, lyap: float = LORENZ_LYAPUNOV) -> VptResult:
    """Valid Ground Truth Time: minimum pairwise crossing time of the solvers."""
    pairs = pairwise_crossings(trajs, threshold, lyap)
    worst = min(pairs, key=lambda pc: pc.t_raw)
    return VptResult(worst.crossed, worst.t_raw, worst.vpt_lyap, threshold)


def log_error_slope(
    e: ErrorSeries, e_low: float = 1e-10, e_high: float = 1e-2, e_saturation: float = 1.0
) -> tuple[float, float]:
    """Least-squares line through (t, ln E(t)) over the growth window.

    Samples strictly inside (e_low, e_high) are fitted, and only before the
    error first saturates at O(1): errors oscillate around their exponential
    trend, so once E has reached e_saturation the occasional later dips back
    below e_high say nothing about the growth rate and would drag the fit
    flat.  Non-finite values count as saturated.
    """
    vals = np.asarray(e.values, dtype=float)
    t = e.dt * np.arange(len(vals))
    with np.errstate(invalid="ignore"):
        saturated = ~(vals < e_saturation)
        k_sat = int(np.argmax(saturated)) if saturated.any() else len(vals)
        window = np.zeros(len(vals), dtype=bool)
        window[:k_sat] = (vals[:k_sat] > e_low) & (vals[:k_sat] < e_high)
    if int(window.sum()) < 10:
        raise InsufficientGrowthWindowError(
            f"only {int(window.sum())} samples inside ({e_low:g}, {e_high:g})"
        )
    return numerics.linear_fit(t[window], np.log(vals[window]))


def ensemble_log_error_slope(
    series, e_low: float = 1e-10, e_high: float = 1e-2, e_saturation: float = 1.0
) -> float:
    """Common growth slope across several error series (natural log per raw
    time unit): one shared slope, one free intercept per series.

    Each series is windowed as in log_error_slope and demeaned in time and
    log-error before the shared least-squares slope is formed, so series
    whose growth phase sits at a different absolute time or error level still
    combine consistently, and series that only graze the window carry little
    weight.  Series with fewer than 10 window samples are skipped; at least
    one usable series is required.
    """
    num = 0.0
    den = 0.0
    used = 0
    for e in series:
        if e is None:
            continue
        vals = np.asarray(e.values, dtype=float)
        t = e.dt * np.arange(len(vals))
        with np.errstate(invalid="ignore"):
            saturated = ~(vals < e_saturation)
            k_sat = int(np.argmax(saturated)) if saturated.any() else len(vals)
            window = np.zeros(len(vals), dtype=bool)
            window[:k_sat] = (vals[:k_sat] > e_low) & (vals[:k_sat] < e_high)
        if int(window.sum()) < 10:
            continue
        tw = t[window]
        yw = np.log(vals[window])
        dtw = tw - tw.mean()
        num += float(dtw @ (yw - yw.mean()))
        den += float(dtw @ dtw)
        used += 1
    if used == 0 or den == 0.0:
        raise InsufficientGrowthWindowError("no series with a usable growth window")
    return num / den


def estimate_vpt_from_initial_error(
    e_k: float,
    t_k: float,
    slope: float,
    threshold: float = VPT_THRESHOLD,
    lyap: float = LORENZ_LYAPUNOV,
) -> float:
    """Extrapolated threshold crossing, in Lyapunov times, assuming E grows
    exponentially at `slope` (natural log per raw time unit) from E(t_k) = e_k."""
    if e_k <= 0:
        raise ValueError("e_k must be positive")
    if e_k >= threshold:
        raise AlreadyExceededError(f"error {e_k:g} already at or above threshold {threshold:g}")
    if slope <= 0:
        raise NonpositiveSlopeError("slope must be positive to extrapolate a crossing")
    return (t_k + (np.log(threshold) - np.log(e_k)) / slope) * lyap
