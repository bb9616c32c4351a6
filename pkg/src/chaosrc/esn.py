"""Echo-state-network core: reservoir construction, teacher forcing, readout
training, closed-loop prediction, and the one-step best-case benchmark.

The recurrent matrix is Bernoulli 0/1 with expected degree `expected_degree`
per node (diagonal included), rescaled to a target spectral radius; input
weights are uniform on [-input_scaling, +input_scaling].  Everything is
fully determined by the config seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import numerics
from .errors import InsufficientDataError, NonFiniteStateError, ZeroRadiusInputError
from .lorenz_ode import LorenzParams, SolverSpec, Trajectory, integrate

ACTIVATIONS = ("tanh", "swish")


@dataclass(frozen=True)
class ReservoirConfig:
    n: int = 300
    expected_degree: float = 6.0
    spectral_radius_target: float = 0.5
    input_scaling: float = 0.1
    activation: str = "tanh"
    swish_beta: float = 1.0
    washout_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("reservoir size must be >= 1")
        if not 0 < self.expected_degree <= self.n:
            raise ValueError("expected_degree must lie in (0, n]")
        if self.spectral_radius_target < 0:
            raise ValueError("spectral radius target must be >= 0")
        if self.input_scaling <= 0:
            raise ValueError("input_scaling must be positive")
        if self.washout_steps < 0:
            raise ValueError("washout_steps must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


def _activation_fn(cfg: ReservoirConfig):
    if cfg.activation == "tanh":
        return np.tanh
    beta = cfg.swish_beta

    def swish(x):
        return x * expit(beta * x)

    return swish


@dataclass
class Reservoir:
    a: sp.csr_array  # N x N recurrent weights
    w_in: np.ndarray  # N x D input weights
    state: np.ndarray  # length N, mutated by drive()
    config: ReservoirConfig
    _f: object = field(repr=False, default=None)

    def __post_init__(self):
        if self._f is None:
            self._f = _activation_fn(self.config)

    @property
    def n(self) -> int:
        return self.w_in.shape[0]

    def reset_state(self, state=None) -> None:
        self.state = np.zeros(self.n) if state is None else np.asarray(state, dtype=float).copy()


def _build_once(cfg: ReservoirConfig, input_dim: int) -> Reservoir:
    rng = np.random.default_rng(cfg.seed)
    # draw order is fixed: recurrent mask, input weights, then the power
    # iteration start vector consumes the same stream
    mask = rng.random((cfg.n, cfg.n)) < cfg.expected_degree / cfg.n
    a = sp.csr_array(mask.astype(float))
    w_in = rng.uniform(-cfg.input_scaling, cfg.input_scaling, (cfg.n, input_dim))
    if cfg.spectral_radius_target == 0.0:
        a = a * 0.0
    else:
        a = numerics.rescale_to_radius(a, cfg.spectral_radius_target, rng)
    return Reservoir(a=a, w_in=w_in, state=np.zeros(cfg.n), config=cfg)


def build_reservoir(cfg: ReservoirConfig, input_dim: int = 3) -> Reservoir:
    """Construct the reservoir deterministically from cfg.seed.

    If the sampled recurrent matrix has spectral radius zero while a nonzero
    target is requested, one resample with seed+1 is attempted before the
    failure propagates.
    """
    try:
        return _build_once(cfg, input_dim)
    except ZeroRadiusInputError:
        return _build_once(replace(cfg, seed=cfg.seed + 1), input_dim)


def drive(res: Reservoir, z) -> np.ndarray:
    """One teacher-forced update: state <- f(A state + W_in z)."""
    pre = res.a @ res.state + res.w_in @ np.asarray(z, dtype=float)
    new = res._f(pre)
    if not np.isfinite(new).all():
        raise NonFiniteStateError("reservoir state left the finite range")
    res.state = new
    return new


def collect_states(res: Reservoir, traj: Trajectory, washout: int | None = None):
    """Teacher forcing over a trajectory; returns (states N x T', targets D x T').

    The state reached after consuming sample k is paired with sample k+1;
    the first `washout` pairs are discarded (defaults to the config value).
    Replays drive() step by step, with the input projections hoisted out of
    the loop.
    """
    if washout is None:
        washout = res.config.washout_steps
    m = traj.n_samples
    if m < washout + 2:
        raise InsufficientDataError(f"need at least washout+2 = {washout + 2} samples, got {m}")
    z = traj.data
    u = res.w_in @ z[:, : m - 1]
    states = np.empty((res.n, m - 1))
    a = res.a
    f = res._f
    r = res.state
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(m - 1):
            r = f(a @ r + u[:, k])
            states[:, k] = r
    if not np.isfinite(states).all():
        raise NonFiniteStateError("reservoir state left the finite range during teacher forcing")
    res.state = r
    return states[:, washout:], z[:, washout + 1 :]


@dataclass(frozen=True)
class ReadoutModel:
    w_out: np.ndarray  # D x N
    lambda_used: float


def train_readout(states, targets, lam: float, rcond: float = 1e-14) -> ReadoutModel:
    """Ridge-regression readout over collected states (see numerics.ridge_solve)."""
    return ReadoutModel(w_out=numerics.ridge_solve(states, targets, lam, rcond=rcond), lambda_used=lam)


def predict_autonomous(
    res: Reservoir, model: ReadoutModel, z0, steps: int, dt: float, t0: float = 0.0
) -> Trajectory:
    """Closed-loop prediction: each readout becomes the next input.

    The reservoir state must be the post-training state (teacher forcing is
    continued, not reset).  On divergence a NonFiniteStateError is raised
    carrying the finite prefix in its `partial` attribute, so sweeps can score
    the trial at its divergence time instead of aborting.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z = np.asarray(z0, dtype=float)
    d = model.w_out.shape[0]
    out = np.empty((d, steps))
    a = res.a
    w_in = res.w_in
    w_out = model.w_out
    f = res._f
    r = res.state
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            r = f(a @ r + w_in @ z)
            z = w_out @ r
            if not np.isfinite(z).all():
                res.state = r
                raise NonFiniteStateError(
                    f"autonomous prediction diverged at step {k}",
                    partial=Trajectory(dt, t0, out[:, :k].copy()),
                    steps_completed=k,
                )
            out[:, k] = z
    res.state = r
    return Trajectory(dt, t0, out)


def one_step_benchmark(
    res: Reservoir,
    model: ReadoutModel,
    z0,
    p: LorenzParams,
    spec: SolverSpec,
    horizon: float,
    t0: float = 0.0,
) -> Trajectory:
    """Best-case reference: one RC prediction step, then the true flow.

    The single-step prediction from z0 is handed to the Lorenz equations as
    an initial condition and integrated for `horizon`.  The reservoir is not
    mutated, so this can run before or after the autonomous prediction; the
    returned trajectory starts one sampling interval after t0.
    """
    pre = res.a @ res.state + res.w_in @ np.asarray(z0, dtype=float)
    z1 = model.w_out @ res._f(pre)
    if not np.isfinite(z1).all():
        raise NonFiniteStateError(
            "one-step prediction is not finite",
            partial=Trajectory(spec.dt, t0 + spec.dt, np.empty((3, 0))),
            steps_completed=0,
        )
    return integrate(z1, p, spec, t_end=t0 + spec.dt + horizon, t0=t0 + spec.dt)


def model_to_json_dict(model: ReadoutModel, cfg: ReservoirConfig) -> dict:
    """Reproducibility-audit export: config, lambda, row-major weights, seed."""
    return {
        "config": asdict(cfg),
        "lambda": model.lambda_used,
        "w_out": [float(v) for v in model.w_out.ravel(order="C")],
        "w_out_shape": list(model.w_out.shape),
        "seed": cfg.seed,
    }


def save_model(model: ReadoutModel, cfg: ReservoirConfig, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(model_to_json_dict(model, cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
