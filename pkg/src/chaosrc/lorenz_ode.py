"""Lorenz-system ground truth via independent fixed-step and adaptive integrators.

Three schemes are implemented from scratch so trajectories can be
cross-audited against each other: the classical fixed-step RK4, a
fixed-step Adams-Bashforth-Moulton 5(4) predictor-corrector in PECE mode,
and the adaptive Dormand-Prince 5(4) embedded pair with dense output.
All schemes deliver samples on the same uniform grid t0 + k*dt, which is
the common currency between the solvers, the reservoir, and the error
metrics.  The right-hand side is pluggable internally, but only the
Lorenz equations are wired up and tested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NonFiniteStateError, StepUnderflowError

_EPS = float(np.finfo(float).eps)


class SolverMethod(str, Enum):
    RK4_FIXED = "rk4"
    ABM54_PC = "abm54"
    DOPRI54_ADAPTIVE = "dopri54"


@dataclass(frozen=True)
class LorenzParams:
    """Parameters of the Lorenz equations.  `rho_drive` is the drive parameter
    of the flow, distinct from a reservoir's spectral radius."""

    sigma: float = 10.0
    rho_drive: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.rho_drive > 0 and self.beta > 0):
            raise ValueError("Lorenz parameters must all be positive")


@dataclass(frozen=True)
class SolverSpec:
    """Integration scheme plus its step/tolerance settings.

    `dt` is both the internal step of the fixed-step schemes and the output
    sampling interval of every scheme; the tolerances are consulted only by
    the adaptive scheme.
    """

    method: SolverMethod = SolverMethod.ABM54_PC
    dt: float = 1e-3
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not isinstance(self.method, SolverMethod):
            object.__setattr__(self, "method", SolverMethod(self.method))


@dataclass
class Trajectory:
    """Uniformly sampled multivariate time series; sample k sits at t0 + k*dt."""

    dt: float
    t0: float
    data: np.ndarray  # shape (D, M), one column per sample

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    def state_at(self, k: int) -> np.ndarray:
        return self.data[:, k].copy()

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.dt, self.t0 + start * self.dt, self.data[:, start:stop])


def lorenz_rhs(s: np.ndarray, p: LorenzParams) -> np.ndarray:
    """Time derivative of the Lorenz flow at state s = (x, y, z)."""
    x, y, z = s
    return np.array([p.sigma * (y - x), x * (p.rho_drive - z) - y, x * y - p.beta * z])


def n_intervals(t0: float, t_end: float, dt: float) -> int:
    span = t_end - t0
    if span < 0:
        raise ValueError("t_end must not precede t0")
    # nudge guards against 10.0/1e-3 style float droop on exact multiples
    return int(math.floor(span / dt * (1.0 + 4.0 * _EPS) + 1e-9))


def _check_finite(s: np.ndarray, t: float, dt: float, t0: float, data: np.ndarray, filled: int):
    if not np.isfinite(s).all():
        raise NonFiniteStateError(
            f"state left the finite range near t={t:g}",
            partial=Trajectory(dt, t0, data[:, :filled].copy()),
            steps_completed=filled,
        )


def rk4_step(s: np.ndarray, p: LorenzParams, h: float) -> np.ndarray:
    """One classical four-stage Runge-Kutta update of step h."""
    k1 = lorenz_rhs(s, p)
    k2 = lorenz_rhs(s + 0.5 * h * k1, p)
    k3 = lorenz_rhs(s + 0.5 * h * k2, p)
    k4 = lorenz_rhs(s + h * k3, p)
    return s + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def rk4_integrate(s0, p: LorenzParams, spec: SolverSpec, t_end: float, t0: float = 0.0) -> Trajectory:
    """Fixed-step RK4, sampled at every internal step."""
    n = n_intervals(t0, t_end, spec.dt)
    data = np.empty((3, n + 1))
    s = np.asarray(s0, dtype=float).copy()
    data[:, 0] = s
    h = spec.dt
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            s = rk4_step(s, p, h)
            _check_finite(s, t0 + (k + 1) * h, spec.dt, t0, data, k + 1)
            data[:, k + 1] = s
    return Trajectory(spec.dt, t0, data)


# Adams-Bashforth 5-step predictor and Adams-Moulton 4-step corrector weights
_AB5 = np.array([1901.0, -2774.0, 2616.0, -1274.0, 251.0]) / 720.0
_AM4 = np.array([251.0, 646.0, -264.0, 106.0, -19.0]) / 720.0


def abm54_pc_integrate(s0, p: LorenzParams, spec: SolverSpec, t_end: float, t0: float = 0.0) -> Trajectory:
    """Fixed-step Adams-Bashforth-Moulton 5(4) predictor-corrector, PECE mode.

    The first four steps are bootstrapped with RK4; afterwards each step
    predicts with the 5-step Adams-Bashforth formula, evaluates, corrects
    once with the 4-step Adams-Moulton formula using the predicted value,
    and re-evaluates for the next step's history.
    """
    n = n_intervals(t0, t_end, spec.dt)
    data = np.empty((3, n + 1))
    s = np.asarray(s0, dtype=float).copy()
    data[:, 0] = s
    h = spec.dt
    hist = [lorenz_rhs(s, p)]  # f values at the last up-to-5 samples, newest last
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(min(n, 4)):
            s = rk4_step(s, p, h)
            _check_finite(s, t0 + (k + 1) * h, spec.dt, t0, data, k + 1)
            data[:, k + 1] = s
            hist.append(lorenz_rhs(s, p))
        for k in range(4, n):
            f4, f3, f2, f1, f0 = hist  # f0 newest
            pred = s + h * (_AB5[0] * f0 + _AB5[1] * f1 + _AB5[2] * f2 + _AB5[3] * f3 + _AB5[4] * f4)
            fp = lorenz_rhs(pred, p)
            s = s + h * (_AM4[0] * fp + _AM4[1] * f0 + _AM4[2] * f1 + _AM4[3] * f2 + _AM4[4] * f3)
            _check_finite(s, t0 + (k + 1) * h, spec.dt, t0, data, k + 1)
            data[:, k + 1] = s
            hist = [f3, f2, f1, f0, lorenz_rhs(s, p)]
    return Trajectory(spec.dt, t0, data)


# Dormand-Prince 5(4) tableau, 5th-order weights, embedded error weights,
# and Shampine's quartic dense-output coefficients.
_DP_A = (
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
_DP_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


def _dopri_stages(rhs, y, h, f0):
    k = np.empty((7, y.size))
    k[0] = f0
    k[1] = rhs(y + h * (_DP_A[0][0] * k[0]))
    k[2] = rhs(y + h * (_DP_A[1][0] * k[0] + _DP_A[1][1] * k[1]))
    k[3] = rhs(y + h * (_DP_A[2][0] * k[0] + _DP_A[2][1] * k[1] + _DP_A[2][2] * k[2]))
    k[4] = rhs(y + h * (_DP_A[3][0] * k[0] + _DP_A[3][1] * k[1] + _DP_A[3][2] * k[2] + _DP_A[3][3] * k[3]))
    k[5] = rhs(
        y
        + h
        * (_DP_A[4][0] * k[0] + _DP_A[4][1] * k[1] + _DP_A[4][2] * k[2] + _DP_A[4][3] * k[3] + _DP_A[4][4] * k[4])
    )
    ynew = y + h * (_DP_B[:6] @ k[:6])
    k[6] = rhs(ynew)
    return k, ynew


def dense_eval(y, h, k, theta):
    """Evaluate the quartic interpolant of an accepted step at fraction theta."""
    q = k.T @ _DP_P
    tv = np.array([theta, theta**2, theta**3, theta**4])
    return y + h * (q @ tv)


def _initial_step(rhs, y0, f0, atol, rtol, max_step):
    scale = atol + rtol * np.abs(y0)
    d0 = math.sqrt(float(np.mean((y0 / scale) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = rhs(y1)
    d2 = math.sqrt(float(np.mean(((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max_step)


def dopri54_integrate(
    s0,
    p: LorenzParams,
    spec: SolverSpec,
    t_end: float,
    t0: float = 0.0,
    max_step: float | None = None,
    rhs=None,
) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) with dense output on the uniform dt grid.

    Step control is proportional with safety factor 0.9 and growth clamped
    to [0.2, 5.0]; the mixed error norm scales component errors by
    abs_tol + rel_tol*|s|.  `rhs` defaults to the Lorenz flow.
    """
    if rhs is None:
        def rhs(y, _p=p):
            return lorenz_rhs(y, _p)

    dt = spec.dt
    atol, rtol = spec.abs_tol, spec.rel_tol
    n = n_intervals(t0, t_end, dt)
    y = np.asarray(s0, dtype=float).copy()
    data = np.empty((y.size, n + 1))
    data[:, 0] = y
    filled = 1
    if n == 0:
        return Trajectory(dt, t0, data)

    t_final = t0 + n * dt
    if max_step is None:
        max_step = max(dt, t_final - t0)
    t = t0
    f0 = rhs(y)
    h = _initial_step(rhs, y, f0, atol, rtol, max_step)
    rejected = False
    with np.errstate(over="ignore", invalid="ignore"):
        while filled <= n and t < t_final:
            h = min(h, t_final - t)
            if h < 1e3 * _EPS * abs(t):
                raise StepUnderflowError(
                    f"step size {h:g} underflowed at t={t:g}",
                    partial=Trajectory(dt, t0, data[:, :filled].copy()),
                )
            k, ynew = _dopri_stages(rhs, y, h, f0)
            err_vec = h * (_DP_E @ k)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
            err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
            if not math.isfinite(err):
                h *= 0.2
                rejected = True
                continue
            if err <= 1.0:
                tnew = t + h
                while filled <= n:
                    tg = t0 + filled * dt
                    if tg - tnew > 4.0 * _EPS * max(abs(tg), abs(tnew), 1.0):
                        break
                    theta = min(max((tg - t) / h, 0.0), 1.0)
                    data[:, filled] = dense_eval(y, h, k, theta)
                    filled += 1
                y = ynew
                t = tnew
                f0 = k[6]  # FSAL
                _check_finite(y, t, dt, t0, data, filled)
                factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err**-0.2))
                if rejected:
                    factor = min(factor, 1.0)
                h = min(h * factor, max_step)
                rejected = False
            else:
                h *= max(0.2, 0.9 * err**-0.2)
                rejected = True
    # float-rounding corner: the loop can exit with the grid endpoint unfilled
    for j in range(filled, n + 1):
        data[:, j] = y
    return Trajectory(dt, t0, data)


def integrate(s0, p: LorenzParams, spec: SolverSpec, t_end: float, t0: float = 0.0) -> Trajectory:
    """Integrate the Lorenz flow with the scheme named by `spec.method`."""
    if spec.method is SolverMethod.RK4_FIXED:
        return rk4_integrate(s0, p, spec, t_end, t0)
    if spec.method is SolverMethod.ABM54_PC:
        return abm54_pc_integrate(s0, p, spec, t_end, t0)
    if spec.method is SolverMethod.DOPRI54_ADAPTIVE:
        return dopri54_integrate(s0, p, spec, t_end, t0)
    raise ValueError(f"unknown solver method {spec.method!r}")


def attractor_warmup(s0, p: LorenzParams, spec: SolverSpec, warmup_time: float) -> np.ndarray:
    """State after integrating `warmup_time` and discarding the path.

    Training data should live on the attractor, so callers run this before
    generating ground truth; warmup_time = 0 returns s0 unchanged.
    """
    if warmup_time < 0:
        raise ValueError("warmup_time must be nonnegative")
    s = np.asarray(s0, dtype=float).copy()
    if warmup_time == 0:
        return s
    traj = integrate(s, p, spec, t_end=warmup_time)
    return traj.state_at(traj.n_samples - 1)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV export: header t,x,y,z, one row per sample, 17 significant digits."""
    ts = traj.times()
    with open(path, "w", newline="\n") as fh:
        fh.write("t,x,y,z\n")
        for k in range(traj.n_samples):
            x, y, z = traj.data[:, k]
            fh.write(f"{ts[k]:.16e},{x:.16e},{y:.16e},{z:.16e}\n")
