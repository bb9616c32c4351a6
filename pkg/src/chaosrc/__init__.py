"""Reservoir-computing study of the Lorenz system: multi-solver ground truth
with agreement audits, echo-state networks trained at the overfitting limit,
validity-horizon metrics, and reproducible hyperparameter sweeps."""

__version__ = "0.1.0"

from .errors import ChaosRcError
from .esn import ReadoutModel, Reservoir, ReservoirConfig, build_reservoir
from .harness import ExperimentProfile, desk_profile, paper_profile, run_trial
from .lorenz_ode import LorenzParams, SolverMethod, SolverSpec, Trajectory, integrate
from .metrics import LORENZ_LYAPUNOV, VPT_THRESHOLD, VptResult

__all__ = [
    "__version__",
    "ChaosRcError",
    "ExperimentProfile",
    "LORENZ_LYAPUNOV",
    "LorenzParams",
    "ReadoutModel",
    "Reservoir",
    "ReservoirConfig",
    "SolverMethod",
    "SolverSpec",
    "Trajectory",
    "VPT_THRESHOLD",
    "VptResult",
    "build_reservoir",
    "desk_profile",
    "integrate",
    "paper_profile",
    "run_trial",
]
