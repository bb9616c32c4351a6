"""Seeded multi-trial experiments: single trials, ridge-coefficient sweeps,
radius-by-size grids, early-error screens, and the solver-agreement audit.

Every trial is fully determined by (profile, trial_index): the trial seed is
base_seed + trial_index, the ground-truth initial condition is jittered from
that seed, and the reservoir is built from it.  Sweep cells that differ only
in the ridge coefficient therefore share reservoirs and data trial-by-trial,
which gives paired comparisons.  Trials are independent work items, so a
worker pool changes wall-clock time but never the results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import metrics
from .errors import (
    AlreadyExceededError,
    InsufficientGrowthWindowError,
    NonFiniteStateError,
    StepUnderflowError,
)
from .esn import (
    ReadoutModel,
    ReservoirConfig,
    build_reservoir,
    collect_states,
    one_step_benchmark,
    predict_autonomous,
    train_readout,
)
from .lorenz_ode import (
    LorenzParams,
    SolverMethod,
    SolverSpec,
    Trajectory,
    attractor_warmup,
    integrate,
    n_intervals,
)
from .metrics import ErrorSeries, VptResult
from .numerics import ridge_solve_multi

DEFAULT_BASE_SEED = 1000
_IC_STREAM_TAG = 0x1C  # sub-stream tag for the initial-condition jitter


@dataclass(frozen=True)
class ExperimentProfile:
    name: str
    lorenz: LorenzParams
    solver: SolverSpec
    warmup_time: float
    train_time: float
    predict_time: float
    reservoir: ReservoirConfig
    ridge_lambda: float
    base_seed: int = DEFAULT_BASE_SEED
    initial_state: tuple = (1.0, 0.0, 0.0)
    ic_jitter: float = 0.5
    vpt_threshold: float = metrics.VPT_THRESHOLD
    lyapunov_exponent: float = metrics.LORENZ_LYAPUNOV
    early_error_step: int = 5
    rcond: float = 1e-14

    def __post_init__(self):
        if self.train_time <= self.reservoir.washout_steps * self.solver.dt:
            raise ValueError("train_time must exceed washout_steps * dt")
        if self.predict_time <= 0:
            raise ValueError("predict_time must be positive")
        if self.ridge_lambda < 0:
            raise ValueError("ridge lambda must be nonnegative")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")


def paper_profile(base_seed: int = DEFAULT_BASE_SEED) -> ExperimentProfile:
    """Full-scale configuration: dt 1e-3, 5000 time units of training, 1250 of
    prediction.  Expect hours per sweep; use desk_profile for day-to-day work."""
    return ExperimentProfile(
        name="paper",
        lorenz=LorenzParams(),
        solver=SolverSpec(method=SolverMethod.ABM54_PC, dt=1e-3),
        warmup_time=20.0,
        train_time=5000.0,
        predict_time=1250.0,
        reservoir=ReservoirConfig(),
        ridge_lambda=0.0,
        base_seed=base_seed,
    )


def desk_profile(base_seed: int = DEFAULT_BASE_SEED) -> ExperimentProfile:
    """Minutes-scale configuration: dt 1e-2, 250 time units of training, a
    60-Lyapunov-time prediction horizon.

    rcond is raised to 1e-6 here: with 25k training samples the state matrix
    directions below ~1e-6 of the leading singular value are too poorly
    sampled to constrain, and keeping them (machine-precision cutoff) makes
    the closed loop unstable at lambda = 0.  The machine-precision default
    remains appropriate for the far larger paper-profile sample counts.
    """
    return ExperimentProfile(
        name="desk",
        lorenz=LorenzParams(),
        solver=SolverSpec(method=SolverMethod.ABM54_PC, dt=1e-2),
        warmup_time=20.0,
        train_time=250.0,
        predict_time=60.0 / metrics.LORENZ_LYAPUNOV,
        reservoir=ReservoirConfig(),
        ridge_lambda=0.0,
        base_seed=base_seed,
        rcond=1e-6,
        # the closed-loop transient lasts ~1 time unit at dt 1e-2, so the
        # early error is read after it has settled (still <2% of the horizon)
        early_error_step=100,
    )


PROFILES = {"paper": paper_profile, "desk": desk_profile}


@dataclass(frozen=True)
class TrialResult:
    seed: int
    vpt_rc: float  # Lyapunov times
    vpt_benchmark: float  # Lyapunov times
    slope_rc: float  # decadic log-error slope per raw time unit (NaN if no window)
    slope_benchmark: float
    early_estimate: float  # Lyapunov times
    diverged: bool
    exceeds_vgtt: bool

    @property
    def ratio(self) -> float:
        return self.vpt_rc / self.vpt_benchmark if self.vpt_benchmark > 0 else math.nan


def _trial_ic(profile: ExperimentProfile, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, _IC_STREAM_TAG])
    jitter = rng.uniform(-profile.ic_jitter, profile.ic_jitter, 3)
    return np.asarray(profile.initial_state, dtype=float) + jitter


def _score_prediction(
    truth_seg: Trajectory,
    pred: Trajectory | None,
    n_expected: int,
    dt: float,
    diverged: bool,
    threshold: float,
    lyap: float,
):
    """VPT plus the error series for a possibly-truncated prediction.

    A diverged prediction gets a NaN appended to its error series so the
    crossing search lands on the divergence time if the threshold was not
    already exceeded before it.
    """
    have = 0 if pred is None else pred.n_samples
    if have >= 2:
        es = metrics.normalized_error_series(truth_seg.slice(0, have), pred)
        if diverged and have < n_expected:
            es = ErrorSeries(dt=es.dt, values=np.append(es.values, np.nan))
        return metrics.vpt(es, threshold, lyap), es
    t_raw = have * dt
    return VptResult(True, t_raw, t_raw * lyap, threshold), None


def _decadic_slope(es: ErrorSeries | None) -> float:
    """Slope of log10(E) per raw time unit, the convention of the figures;
    NaN when the growth window is absent."""
    if es is None:
        return math.nan
    try:
        nat_slope, _ = metrics.log_error_slope(es)
    except InsufficientGrowthWindowError:
        return math.nan
    return nat_slope / math.log(10.0)


def _early_estimate(es: ErrorSeries | None, profile: ExperimentProfile, horizon_lyap: float) -> float:
    k = profile.early_error_step
    if es is None or len(es.values) <= k or not np.isfinite(es.values[k]):
        return 0.0
    e_k = float(es.values[k])
    if e_k <= 0.0:
        return horizon_lyap
    try:
        return metrics.estimate_vpt_from_initial_error(
            e_k,
            k * es.dt,
            slope=profile.lyapunov_exponent,
            threshold=profile.vpt_threshold,
            lyap=profile.lyapunov_exponent,
        )
    except AlreadyExceededError:
        return 0.0


def _grid_counts(profile: ExperimentProfile) -> tuple[int, int]:
    dt = profile.solver.dt
    n_train = n_intervals(0.0, profile.train_time, dt)
    n_pred = n_intervals(0.0, profile.predict_time, dt)
    if n_pred < 1:
        raise ValueError("predict_time must cover at least one step")
    if n_train < profile.reservoir.washout_steps + 1:
        raise ValueError("train_time too short for the configured washout")
    return n_train, n_pred


@dataclass
class TrialArtifacts:
    """Everything a single trial produces, for metric extraction or plotting."""

    seed: int
    truth: Trajectory  # ground truth over the prediction window
    prediction: Trajectory | None
    benchmark: Trajectory | None
    error_rc: ErrorSeries | None
    error_benchmark: ErrorSeries | None
    vpt_rc: VptResult
    vpt_benchmark: VptResult
    rc_diverged: bool
    benchmark_diverged: bool


def run_trial_artifacts(profile: ExperimentProfile, trial_index: int) -> TrialArtifacts:
    """One full experiment pipeline, returning the raw trajectories and error
    series: data generation, training, the one-step benchmark, and the
    closed-loop prediction."""
    seed = profile.base_seed + trial_index
    p, spec = profile.lorenz, profile.solver
    dt = spec.dt
    n_train, n_pred = _grid_counts(profile)
    threshold, lyap = profile.vpt_threshold, profile.lyapunov_exponent

    s_warm = attractor_warmup(_trial_ic(profile, seed), p, spec, profile.warmup_time)
    traj = integrate(s_warm, p, spec, t_end=(n_train + n_pred) * dt)
    train_seg = traj.slice(0, n_train + 1)
    truth_seg = traj.slice(n_train + 1, n_train + n_pred + 1)
    z_last = traj.state_at(n_train)

    res = build_reservoir(replace(profile.reservoir, seed=seed))
    try:
        states, targets = collect_states(res, train_seg)
        model = train_readout(states, targets, profile.ridge_lambda, rcond=profile.rcond)
    except NonFiniteStateError:
        # an unbounded activation can blow up during teacher forcing at large
        # spectral radius; score the trial as immediately diverged so unstable
        # sweep cells stay informative instead of aborting the grid
        dead = VptResult(True, 0.0, 0.0, threshold)
        return TrialArtifacts(
            seed=seed,
            truth=truth_seg,
            prediction=None,
            benchmark=None,
            error_rc=None,
            error_benchmark=None,
            vpt_rc=dead,
            vpt_benchmark=dead,
            rc_diverged=True,
            benchmark_diverged=True,
        )

    bench_diverged = False
    try:
        bench = one_step_benchmark(res, model, z_last, p, spec, horizon=(n_pred - 1) * dt, t0=n_train * dt)
    except (NonFiniteStateError, StepUnderflowError) as exc:
        bench = exc.partial
        bench_diverged = True

    rc_diverged = False
    try:
        pred = predict_autonomous(res, model, z_last, n_pred, dt, t0=(n_train + 1) * dt)
    except NonFiniteStateError as exc:
        pred = exc.partial
        rc_diverged = True

    vpt_rc, es_rc = _score_prediction(truth_seg, pred, n_pred, dt, rc_diverged, threshold, lyap)
    vpt_bm, es_bm = _score_prediction(truth_seg, bench, n_pred, dt, bench_diverged, threshold, lyap)
    return TrialArtifacts(
        seed=seed,
        truth=truth_seg,
        prediction=pred,
        benchmark=bench,
        error_rc=es_rc,
        error_benchmark=es_bm,
        vpt_rc=vpt_rc,
        vpt_benchmark=vpt_bm,
        rc_diverged=rc_diverged,
        benchmark_diverged=bench_diverged,
    )


def run_trial(profile: ExperimentProfile, trial_index: int, vgtt_lyap: float | None = None) -> TrialResult:
    """One full experiment reduced to its per-trial metrics."""
    art = run_trial_artifacts(profile, trial_index)
    _, n_pred = _grid_counts(profile)
    horizon_lyap = n_pred * profile.solver.dt * profile.lyapunov_exponent
    diverged = art.rc_diverged or art.benchmark_diverged
    exceeds = vgtt_lyap is not None and (
        art.vpt_rc.vpt_lyap > vgtt_lyap or art.vpt_benchmark.vpt_lyap > vgtt_lyap
    )
    return TrialResult(
        seed=art.seed,
        vpt_rc=art.vpt_rc.vpt_lyap,
        vpt_benchmark=art.vpt_benchmark.vpt_lyap,
        slope_rc=_decadic_slope(art.error_rc),
        slope_benchmark=_decadic_slope(art.error_benchmark),
        early_estimate=_early_estimate(art.error_rc, profile, horizon_lyap),
        diverged=diverged,
        exceeds_vgtt=exceeds,
    )


@dataclass(frozen=True)
class CellStats:
    mean_vpt_rc: float
    std_vpt_rc: float
    mean_vpt_benchmark: float
    std_vpt_benchmark: float
    ratio_of_means: float
    mean_ratio: float
    std_ratio: float
    diverged_fraction: float
    n_trials: int


def _aggregate(cell: list[TrialResult]) -> CellStats:
    def mean_std(vals):
        arr = np.asarray(vals, dtype=float)
        m = float(arr.mean())
        s = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return m, s

    m_rc, s_rc = mean_std([t.vpt_rc for t in cell])
    m_bm, s_bm = mean_std([t.vpt_benchmark for t in cell])
    ratios = [t.ratio for t in cell if math.isfinite(t.ratio)]
    if ratios:
        m_ratio, s_ratio = mean_std(ratios)
    else:
        m_ratio, s_ratio = math.nan, math.nan
    return CellStats(
        mean_vpt_rc=m_rc,
        std_vpt_rc=s_rc,
        mean_vpt_benchmark=m_bm,
        std_vpt_benchmark=s_bm,
        ratio_of_means=m_rc / m_bm if m_bm > 0 else math.nan,
        mean_ratio=m_ratio,
        std_ratio=s_ratio,
        diverged_fraction=float(np.mean([t.diverged for t in cell])),
        n_trials=len(cell),
    )


@dataclass
class SweepResult:
    kind: str  # "lambda" or "radius_size"
    axis_names: list
    axis_values: list  # one list per axis, input order preserved
    cells: list  # list over cells (row-major in axis order) of list[TrialResult]
    stats: list  # CellStats per cell, same order
    profile: ExperimentProfile
    vgtt_lyap: float | None = None

    def cell_axis_values(self, cell_id: int) -> tuple:
        if len(self.axis_values) == 1:
            return (self.axis_values[0][cell_id],)
        n2 = len(self.axis_values[1])
        return (self.axis_values[0][cell_id // n2], self.axis_values[1][cell_id % n2])


def _trial_job(args):
    profile, trial_index, vgtt_lyap = args
    return run_trial(profile, trial_index, vgtt_lyap)


def _run_cells(cell_profiles, trials_per_cell, vgtt_lyap, workers):
    jobs = [
        (cell_profiles[ci], ti, vgtt_lyap)
        for ci in range(len(cell_profiles))
        for ti in range(trials_per_cell)
    ]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(_trial_job, jobs, chunksize=1))
    else:
        flat = [_trial_job(j) for j in jobs]
    cells = [
        flat[ci * trials_per_cell : (ci + 1) * trials_per_cell] for ci in range(len(cell_profiles))
    ]
    return cells


def run_lambda_sweep(
    profile: ExperimentProfile,
    lambdas,
    trials_per_cell: int,
    vgtt_lyap: float | None = None,
    workers: int = 1,
) -> SweepResult:
    """Grid over the ridge coefficient; reservoir and data seeds are shared
    across cells so trials pair up one-to-one between lambda values."""
    lambdas = list(lambdas)
    if not lambdas:
        raise ValueError("lambdas must be non-empty")
    if trials_per_cell < 1:
        raise ValueError("trials_per_cell must be >= 1")
    cell_profiles = [replace(profile, ridge_lambda=float(lam)) for lam in lambdas]
    cells = _run_cells(cell_profiles, trials_per_cell, vgtt_lyap, workers)
    return SweepResult(
        kind="lambda",
        axis_names=["lambda"],
        axis_values=[[float(v) for v in lambdas]],
        cells=cells,
        stats=[_aggregate(c) for c in cells],
        profile=profile,
        vgtt_lyap=vgtt_lyap,
    )


def run_radius_size_sweep(
    profile: ExperimentProfile,
    radii,
    sizes,
    trials_per_cell: int,
    vgtt_lyap: float | None = None,
    workers: int = 1,
) -> SweepResult:
    """Full grid over spectral radius (axis 1) and reservoir size (axis 2),
    row-major in the input order."""
    radii = [float(r) for r in radii]
    sizes = [int(s) for s in sizes]
    if not radii or not sizes:
        raise ValueError("radii and sizes must be non-empty")
    if trials_per_cell < 1:
        raise ValueError("trials_per_cell must be >= 1")
    cell_profiles = [
        replace(profile, reservoir=replace(profile.reservoir, spectral_radius_target=r, n=n))
        for r in radii
        for n in sizes
    ]
    cells = _run_cells(cell_profiles, trials_per_cell, vgtt_lyap, workers)
    return SweepResult(
        kind="radius_size",
        axis_names=["radius", "size"],
        axis_values=[radii, sizes],
        cells=cells,
        stats=[_aggregate(c) for c in cells],
        profile=profile,
        vgtt_lyap=vgtt_lyap,
    )


@dataclass(frozen=True)
class VgttAudit:
    methods: list
    vgtt: VptResult
    pairs: list  # PairCrossing per unordered method pair

    def pair_rows(self) -> list:
        return [
            {
                "first": self.methods[pc.first],
                "second": self.methods[pc.second],
                "crossed": pc.crossed,
                "t_raw": pc.t_raw,
                "vpt_lyap": pc.vpt_lyap,
            }
            for pc in self.pairs
        ]


def run_vgtt_audit(
    lorenz: LorenzParams,
    s0,
    dt: float,
    abs_tol: float,
    rel_tol: float,
    horizon: float,
    threshold: float = metrics.VPT_THRESHOLD,
    lyap: float = metrics.LORENZ_LYAPUNOV,
) -> VgttAudit:
    """Integrate all three schemes from the same state and report how long
    they agree, pairwise and overall."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    methods = [SolverMethod.RK4_FIXED, SolverMethod.ABM54_PC, SolverMethod.DOPRI54_ADAPTIVE]
    trajs = [
        integrate(s0, lorenz, SolverSpec(method=m, dt=dt, abs_tol=abs_tol, rel_tol=rel_tol), horizon)
        for m in methods
    ]
    pairs = metrics.pairwise_crossings(trajs, threshold, lyap)
    return VgttAudit(
        methods=[m.value for m in methods],
        vgtt=metrics.vgtt(trajs, threshold, lyap),
        pairs=pairs,
    )


@dataclass(frozen=True)
class ScreenEntry:
    rank: int
    lambda_index: int
    ridge_lambda: float
    mean_early_error: float
    mean_estimate: float  # Lyapunov times


def _screen_job(args):
    """Early errors and estimates for every lambda on one trial's data.

    The expensive work (ground truth, teacher forcing, the state-matrix
    factorization) is shared across the lambda values; each lambda only pays
    for its readout solve and a handful of closed-loop steps.  Early errors
    are normalized by the training-segment variance so the few-sample
    comparison window does not have to estimate its own.
    """
    profile, trial_index, lambdas = args
    seed = profile.base_seed + trial_index
    p, spec = profile.lorenz, profile.solver
    dt = spec.dt
    k5 = profile.early_error_step
    n_train, n_pred = _grid_counts(profile)
    n_extra = k5 + 1
    lyap = profile.lyapunov_exponent
    horizon_lyap = n_pred * dt * lyap

    s_warm = attractor_warmup(_trial_ic(profile, seed), p, spec, profile.warmup_time)
    traj = integrate(s_warm, p, spec, t_end=(n_train + n_extra) * dt)
    train_seg = traj.slice(0, n_train + 1)
    truth = traj.data[:, n_train + 1 : n_train + n_extra + 1]
    z_last = traj.state_at(n_train)

    res = build_reservoir(replace(profile.reservoir, seed=seed))
    try:
        states, targets = collect_states(res, train_seg)
    except NonFiniteStateError:
        return [(math.inf, 0.0) for _ in lambdas]
    var_train = metrics.segment_variance(train_seg.data)
    weights = ridge_solve_multi(states, targets, lambdas, rcond=profile.rcond)

    r_post = res.state.copy()
    out = []
    for w_out in weights:
        res.reset_state(r_post)
        model = ReadoutModel(w_out=w_out, lambda_used=math.nan)
        try:
            pred = predict_autonomous(res, model, z_last, n_extra, dt)
            diff = truth[:, k5] - pred.data[:, k5]
            e_k = float(np.sum(diff * diff) / var_train)
        except NonFiniteStateError:
            e_k = math.inf
        if not math.isfinite(e_k):
            out.append((math.inf, 0.0))
            continue
        if e_k <= 0.0:
            out.append((e_k, horizon_lyap))
            continue
        try:
            est = metrics.estimate_vpt_from_initial_error(
                e_k, k5 * dt, slope=lyap, threshold=profile.vpt_threshold, lyap=lyap
            )
        except AlreadyExceededError:
            est = 0.0
        out.append((e_k, est))
    return out


def early_vpt_screen(
    profile: ExperimentProfile, lambdas, trials: int, workers: int = 1
) -> list[ScreenEntry]:
    """Rank ridge coefficients by the mean error a few prediction steps in.

    Cheap proxy for a full sweep: only warmup, training, and
    early_error_step+1 closed-loop steps are computed per trial.  Ties in the
    mean early error keep the input order.
    """
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ValueError("lambdas must be non-empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = [(profile, ti, lambdas) for ti in range(trials)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_screen_job, jobs, chunksize=1))
    else:
        per_trial = [_screen_job(j) for j in jobs]
    entries = []
    for li, lam in enumerate(lambdas):
        errs = [per_trial[ti][li][0] for ti in range(trials)]
        ests = [per_trial[ti][li][1] for ti in range(trials)]
        entries.append((li, lam, float(np.mean(errs)), float(np.mean(ests))))
    order = sorted(range(len(entries)), key=lambda i: entries[i][2])  # stable: ties keep input order
    return [
        ScreenEntry(
            rank=pos + 1,
            lambda_index=entries[i][0],
            ridge_lambda=entries[i][1],
            mean_early_error=entries[i][2],
            mean_estimate=entries[i][3],
        )
        for pos, i in enumerate(order)
    ]


def profile_to_dict(profile: ExperimentProfile) -> dict:
    d = asdict(profile)
    d["solver"]["method"] = profile.solver.method.value
    d["initial_state"] = list(profile.initial_state)
    return d


def profile_from_dict(d: dict) -> ExperimentProfile:
    d = dict(d)
    d["lorenz"] = LorenzParams(**d["lorenz"])
    solver = dict(d["solver"])
    solver["method"] = SolverMethod(solver["method"])
    d["solver"] = SolverSpec(**solver)
    d["reservoir"] = ReservoirConfig(**d["reservoir"])
    d["initial_state"] = tuple(d["initial_state"])
    return ExperimentProfile(**d)


def sweep_to_csv(sweep: SweepResult, path) -> None:
    """Long-format CSV, one row per trial, 17 significant digits."""
    two_axes = len(sweep.axis_values) > 1

    def fmt(v) -> str:
        return f"{float(v):.16e}"

    cols = ["cell_id", "axis1_value"]
    if two_axes:
        cols.append("axis2_value")
    cols += [
        "trial_index",
        "seed",
        "vpt_rc",
        "vpt_benchmark",
        "ratio",
        "slope_rc",
        "slope_benchmark",
        "early_estimate",
        "diverged",
        "exceeds_vgtt",
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for cell_id, cell in enumerate(sweep.cells):
            axes = sweep.cell_axis_values(cell_id)
            for ti, tr in enumerate(cell):
                row = [str(cell_id), fmt(axes[0])]
                if two_axes:
                    row.append(str(axes[1]) if sweep.kind == "radius_size" else fmt(axes[1]))
                row += [
                    str(ti),
                    str(tr.seed),
                    fmt(tr.vpt_rc),
                    fmt(tr.vpt_benchmark),
                    fmt(tr.ratio),
                    fmt(tr.slope_rc),
                    fmt(tr.slope_benchmark),
                    fmt(tr.early_estimate),
                    "true" if tr.diverged else "false",
                    "true" if tr.exceeds_vgtt else "false",
                ]
                fh.write(",".join(row) + "\n")


def sweep_to_json_dict(sweep: SweepResult, tool_version: str) -> dict:
    cells = []
    for cell_id, st in enumerate(sweep.stats):
        axes = sweep.cell_axis_values(cell_id)
        cells.append(
            {
                "cell_id": cell_id,
                "axis_values": {name: axes[i] for i, name in enumerate(sweep.axis_names)},
                **asdict(st),
            }
        )
    return {
        "kind": sweep.kind,
        "axes": {name: sweep.axis_values[i] for i, name in enumerate(sweep.axis_names)},
        "trials_per_cell": sweep.stats[0].n_trials if sweep.stats else 0,
        "vgtt_lyap": sweep.vgtt_lyap,
        "profile": profile_to_dict(sweep.profile),
        "tool_version": tool_version,
        "cells": cells,
    }
