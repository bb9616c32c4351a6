"""Command-line harness: data generation, the solver-agreement audit, single
runs, hyperparameter sweeps, and the early-error screen.

Configuration precedence is built-in profile defaults < JSON config file <
command-line flags.  Every command writes a manifest carrying the fully
resolved configuration; re-running a command with `--config manifest.json`
reproduces its data outputs byte for byte (timestamps and wall-clock live
only in the manifest itself).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import os
import sys
import time

from . import __version__, harness
from .errors import ChaosRcError, ConfigError
from .esn import ReservoirConfig
from .harness import ExperimentProfile
from .lorenz_ode import (
    LorenzParams,
    SolverMethod,
    SolverSpec,
    attractor_warmup,
    integrate,
    write_trajectory_csv,
)

_TOP_KEYS = {
    "profile",
    "seed",
    "trials",
    "workers",
    "out",
    "lorenz",
    "solver",
    "reservoir",
    "lambda",
    "warmup_time",
    "train_time",
    "predict_time",
    "initial_state",
    "ic_jitter",
    "vpt_threshold",
    "lyapunov_exponent",
    "early_error_step",
    "rcond",
    "lambdas",
    "radii",
    "sizes",
    "sweep",
    "horizon",
    "audit_vgtt",
}
_LORENZ_KEYS = {"sigma", "rho", "beta"}
_SOLVER_KEYS = {"method", "dt", "abs_tol", "rel_tol"}
_RESERVOIR_KEYS = {
    "n",
    "expected_degree",
    "spectral_radius",
    "input_scaling",
    "activation",
    "swish_beta",
    "washout",
}


def _check_keys(doc: dict, allowed: set, where: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown config key {where}{key!r}")


def _profile_defaults(name: str) -> dict:
    if name not in harness.PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(harness.PROFILES)}")
    prof = harness.PROFILES[name]()
    return {
        "profile": name,
        "seed": prof.base_seed,
        "trials": 20,
        "workers": None,
        "out": None,
        "lorenz": {
            "sigma": prof.lorenz.sigma,
            "rho": prof.lorenz.rho_drive,
            "beta": prof.lorenz.beta,
        },
        "solver": {
            "method": prof.solver.method.value,
            "dt": prof.solver.dt,
            "abs_tol": prof.solver.abs_tol,
            "rel_tol": prof.solver.rel_tol,
        },
        "reservoir": {
            "n": prof.reservoir.n,
            "expected_degree": prof.reservoir.expected_degree,
            "spectral_radius": prof.reservoir.spectral_radius_target,
            "input_scaling": prof.reservoir.input_scaling,
            "activation": prof.reservoir.activation,
            "swish_beta": prof.reservoir.swish_beta,
            "washout": prof.reservoir.washout_steps,
        },
        "lambda": prof.ridge_lambda,
        "warmup_time": prof.warmup_time,
        "train_time": prof.train_time,
        "predict_time": prof.predict_time,
        "initial_state": list(prof.initial_state),
        "ic_jitter": prof.ic_jitter,
        "vpt_threshold": prof.vpt_threshold,
        "lyapunov_exponent": prof.lyapunov_exponent,
        "early_error_step": prof.early_error_step,
        "rcond": prof.rcond,
        "lambdas": None,
        "radii": None,
        "sizes": None,
        "sweep": "lambda",
        "horizon": 60.0,
        "audit_vgtt": True,
    }


def _merge_config(base: dict, overlay: dict) -> dict:
    _check_keys(overlay, _TOP_KEYS, "")
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for key, val in overlay.items():
        if key in ("lorenz", "solver", "reservoir") and isinstance(val, dict):
            allowed = {"lorenz": _LORENZ_KEYS, "solver": _SOLVER_KEYS, "reservoir": _RESERVOIR_KEYS}[key]
            _check_keys(val, allowed, f"{key}.")
            merged[key].update(val)
        else:
            merged[key] = val
    return merged


def _load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    # a manifest is accepted wherever a config is: use its resolved section
    if "resolved_config" in doc:
        doc = doc["resolved_config"]
        if not isinstance(doc, dict):
            raise ConfigError(f"manifest {path} has a malformed resolved_config")
    return doc


def _parse_float_list(text: str, flag: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def resolve_config(args: argparse.Namespace) -> dict:
    file_doc = _load_config_file(args.config) if args.config else {}
    profile_name = args.profile or file_doc.get("profile", "desk")
    if not isinstance(profile_name, str):
        raise ConfigError("profile must be a string")
    cfg = _profile_defaults(profile_name)
    cfg = _merge_config(cfg, file_doc)
    cfg["profile"] = profile_name

    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trials is not None:
        cfg["trials"] = args.trials
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.out is not None:
        cfg["out"] = args.out
    if getattr(args, "lambdas", None) is not None:
        cfg["lambdas"] = _parse_float_list(args.lambdas, "--lambdas")
    if getattr(args, "radii", None) is not None:
        cfg["radii"] = _parse_float_list(args.radii, "--radii")
    if getattr(args, "sizes", None) is not None:
        cfg["sizes"] = [int(v) for v in _parse_float_list(args.sizes, "--sizes")]
    if getattr(args, "sweep", None) is not None:
        cfg["sweep"] = args.sweep
    if getattr(args, "horizon", None) is not None:
        cfg["horizon"] = args.horizon
    if cfg["out"] is None:
        cfg["out"] = os.environ.get("CHAOSRC_OUT", "chaosrc_out")
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a nonnegative integer")
    need(isinstance(cfg["trials"], int) and cfg["trials"] >= 1, "trials must be a positive integer")
    if cfg["workers"] is not None:
        need(isinstance(cfg["workers"], int) and cfg["workers"] >= 1, "workers must be a positive integer")
    need(cfg["sweep"] in ("lambda", "radius_size"), "sweep must be 'lambda' or 'radius_size'")
    need(float(cfg["horizon"]) >= 0, "horizon must be nonnegative")
    need(len(cfg["initial_state"]) == 3, "initial_state must have three components")


def profile_from_config(cfg: dict) -> ExperimentProfile:
    try:
        return ExperimentProfile(
            name=cfg["profile"],
            lorenz=LorenzParams(
                sigma=float(cfg["lorenz"]["sigma"]),
                rho_drive=float(cfg["lorenz"]["rho"]),
                beta=float(cfg["lorenz"]["beta"]),
            ),
            solver=SolverSpec(
                method=SolverMethod(cfg["solver"]["method"]),
                dt=float(cfg["solver"]["dt"]),
                abs_tol=float(cfg["solver"]["abs_tol"]),
                rel_tol=float(cfg["solver"]["rel_tol"]),
            ),
            warmup_time=float(cfg["warmup_time"]),
            train_time=float(cfg["train_time"]),
            predict_time=float(cfg["predict_time"]),
            reservoir=ReservoirConfig(
                n=int(cfg["reservoir"]["n"]),
                expected_degree=float(cfg["reservoir"]["expected_degree"]),
                spectral_radius_target=float(cfg["reservoir"]["spectral_radius"]),
                input_scaling=float(cfg["reservoir"]["input_scaling"]),
                activation=str(cfg["reservoir"]["activation"]),
                swish_beta=float(cfg["reservoir"]["swish_beta"]),
                washout_steps=int(cfg["reservoir"]["washout"]),
                seed=int(cfg["seed"]),
            ),
            ridge_lambda=float(cfg["lambda"]),
            base_seed=int(cfg["seed"]),
            initial_state=tuple(float(v) for v in cfg["initial_state"]),
            ic_jitter=float(cfg["ic_jitter"]),
            vpt_threshold=float(cfg["vpt_threshold"]),
            lyapunov_exponent=float(cfg["lyapunov_exponent"]),
            early_error_step=int(cfg["early_error_step"]),
            rcond=float(cfg["rcond"]),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _workers(cfg: dict) -> int:
    return cfg["workers"] if cfg["workers"] else (os.cpu_count() or 1)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).replace(microsecond=0).isoformat()


def _write_json(path, doc) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


class Manifest:
    """Run log written before and finalized after every command."""

    def __init__(self, command: str, cfg: dict, out_dir: str):
        self.path = os.path.join(out_dir, "manifest.json")
        self.doc = {
            "tool": "chaosrc",
            "version": __version__,
            "command": command,
            "status": "running",
            "started_utc": _utc_now(),
            "finished_utc": None,
            "wall_clock_seconds": None,
            "out_dir": out_dir,
            "resolved_config": cfg,
        }
        self._t0 = time.perf_counter()
        _write_json(self.path, self.doc)

    def finalize(self, status: str = "completed") -> None:
        self.doc["status"] = status
        self.doc["finished_utc"] = _utc_now()
        self.doc["wall_clock_seconds"] = time.perf_counter() - self._t0
        _write_json(self.path, self.doc)


def _prepare(command: str, args) -> tuple[dict, ExperimentProfile, str, Manifest]:
    cfg = resolve_config(args)
    profile = profile_from_config(cfg)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    manifest = Manifest(command, cfg, out_dir)
    print(f"chaosrc {command} v{__version__}")
    print(f"resolved profile: {json.dumps(cfg, sort_keys=True)}")
    return cfg, profile, out_dir, manifest


def _audit_for(cfg: dict, profile: ExperimentProfile):
    """Solver-agreement audit over the prediction horizon from the warmed,
    unjittered initial state; returns (vgtt in Lyapunov times, audit)."""
    if not cfg["audit_vgtt"]:
        return None, None
    spec = profile.solver
    s_warm = attractor_warmup(profile.initial_state, profile.lorenz, spec, profile.warmup_time)
    audit = harness.run_vgtt_audit(
        profile.lorenz,
        s_warm,
        spec.dt,
        spec.abs_tol,
        spec.rel_tol,
        horizon=profile.predict_time,
        threshold=profile.vpt_threshold,
        lyap=profile.lyapunov_exponent,
    )
    return audit.vgtt.vpt_lyap, audit


def cmd_gen_data(args) -> int:
    cfg, profile, out_dir, manifest = _prepare("gen-data", args)
    spec = profile.solver
    s0 = attractor_warmup(profile.initial_state, profile.lorenz, spec, profile.warmup_time)
    traj = integrate(s0, profile.lorenz, spec, t_end=float(cfg["horizon"]))
    csv_path = os.path.join(out_dir, "trajectory.csv")
    write_trajectory_csv(traj, csv_path)
    meta = {
        "solver": cfg["solver"],
        "lorenz": cfg["lorenz"],
        "initial_state": cfg["initial_state"],
        "warmup_time": cfg["warmup_time"],
        "horizon": cfg["horizon"],
        "n_samples": traj.n_samples,
        "tool_version": __version__,
    }
    _write_json(os.path.join(out_dir, "trajectory_meta.json"), meta)
    manifest.finalize()
    print(f"wrote {traj.n_samples} samples to {csv_path}")
    return 0


def cmd_vgtt(args) -> int:
    cfg, profile, out_dir, manifest = _prepare("vgtt", args)
    spec = profile.solver
    s0 = attractor_warmup(profile.initial_state, profile.lorenz, spec, profile.warmup_time)
    audit = harness.run_vgtt_audit(
        profile.lorenz,
        s0,
        spec.dt,
        spec.abs_tol,
        spec.rel_tol,
        horizon=float(cfg["horizon"]),
        threshold=profile.vpt_threshold,
        lyap=profile.lyapunov_exponent,
    )
    print(f"{'pair':<24}{'crossed':<10}{'t_raw':>14}{'lyap_times':>14}")
    for row in audit.pair_rows():
        name = f"{row['first']}/{row['second']}"
        print(f"{name:<24}{str(row['crossed']).lower():<10}{row['t_raw']:>14.4f}{row['vpt_lyap']:>14.4f}")
    print(f"VGTT: {audit.vgtt.vpt_lyap:.4f} Lyapunov times (crossed={audit.vgtt.crossed})")
    report = {
        "methods": audit.methods,
        "vgtt": audit.vgtt.to_json_dict(profile.lyapunov_exponent),
        "pairs": audit.pair_rows(),
        "horizon": cfg["horizon"],
        "solver": cfg["solver"],
        "tool_version": __version__,
    }
    _write_json(os.path.join(out_dir, "vgtt_report.json"), report)
    manifest.finalize()
    return 0


def _print_sweep_summary(sweep) -> None:
    for cell_id, st in enumerate(sweep.stats):
        axes = sweep.cell_axis_values(cell_id)
        label = ", ".join(f"{n}={v:g}" for n, v in zip(sweep.axis_names, axes))
        ratio = st.ratio_of_means
        ratio_txt = f"{ratio:.3f}" if math.isfinite(ratio) else "nan"
        print(
            f"cell {cell_id} [{label}]: RC VPT {st.mean_vpt_rc:.3f} +/- {st.std_vpt_rc:.3f}, "
            f"benchmark {st.mean_vpt_benchmark:.3f} +/- {st.std_vpt_benchmark:.3f}, "
            f"ratio {ratio_txt}, diverged {st.diverged_fraction:.2f}"
        )


def cmd_run(args) -> int:
    cfg, profile, out_dir, manifest = _prepare("run", args)
    vgtt_lyap, _ = _audit_for(cfg, profile)
    if vgtt_lyap is not None:
        print(f"audited VGTT: {vgtt_lyap:.3f} Lyapunov times")
    sweep = harness.run_lambda_sweep(
        profile, [profile.ridge_lambda], cfg["trials"], vgtt_lyap=vgtt_lyap, workers=_workers(cfg)
    )
    _print_sweep_summary(sweep)
    harness.sweep_to_csv(sweep, os.path.join(out_dir, "trials.csv"))
    _write_json(os.path.join(out_dir, "aggregate.json"), harness.sweep_to_json_dict(sweep, __version__))
    manifest.finalize()
    return 0


def cmd_sweep(args) -> int:
    cfg, profile, out_dir, manifest = _prepare("sweep", args)
    if cfg["sweep"] == "lambda" and not cfg["lambdas"]:
        raise ConfigError("a lambda sweep needs a non-empty 'lambdas' list")
    if cfg["sweep"] == "radius_size" and (not cfg["radii"] or not cfg["sizes"]):
        raise ConfigError("a radius_size sweep needs non-empty 'radii' and 'sizes' lists")
    vgtt_lyap, _ = _audit_for(cfg, profile)
    if vgtt_lyap is not None:
        print(f"audited VGTT: {vgtt_lyap:.3f} Lyapunov times")
    if cfg["sweep"] == "lambda":
        sweep = harness.run_lambda_sweep(
            profile, cfg["lambdas"], cfg["trials"], vgtt_lyap=vgtt_lyap, workers=_workers(cfg)
        )
    else:
        sweep = harness.run_radius_size_sweep(
            profile, cfg["radii"], cfg["sizes"], cfg["trials"], vgtt_lyap=vgtt_lyap, workers=_workers(cfg)
        )
    _print_sweep_summary(sweep)
    harness.sweep_to_csv(sweep, os.path.join(out_dir, "sweep.csv"))
    _write_json(os.path.join(out_dir, "aggregate.json"), harness.sweep_to_json_dict(sweep, __version__))
    manifest.finalize()
    return 0


def cmd_screen(args) -> int:
    cfg, profile, out_dir, manifest = _prepare("screen", args)
    if not cfg["lambdas"]:
        raise ConfigError("the screen needs a non-empty 'lambdas' list")
    ranking = harness.early_vpt_screen(profile, cfg["lambdas"], cfg["trials"], workers=_workers(cfg))
    print(f"{'rank':<6}{'lambda':>14}{'mean_early_error':>20}{'est_vpt_lyap':>16}")
    for entry in ranking:
        print(
            f"{entry.rank:<6}{entry.ridge_lambda:>14.3e}{entry.mean_early_error:>20.6e}"
            f"{entry.mean_estimate:>16.4f}"
        )
    _write_json(
        os.path.join(out_dir, "screen.json"),
        {
            "ranking": [
                {
                    "rank": e.rank,
                    "lambda_index": e.lambda_index,
                    "lambda": e.ridge_lambda,
                    "mean_early_error": e.mean_early_error,
                    "mean_estimate_lyap": e.mean_estimate,
                }
                for e in ranking
            ],
            "trials": cfg["trials"],
            "tool_version": __version__,
        },
    )
    manifest.finalize()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaosrc",
        description="Reservoir-computing experiments on the Lorenz system with solver-audited ground truth.",
    )
    parser.add_argument("--version", action="version", version=f"chaosrc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="JSON config file or a previous run's manifest")
        sp.add_argument("--profile", choices=sorted(harness.PROFILES), help="built-in profile preset")
        sp.add_argument("--seed", type=int, help="base seed for trial seeding")
        sp.add_argument("--trials", type=int, help="trials per cell")
        sp.add_argument("--workers", type=int, help="worker processes (default: core count)")
        sp.add_argument("--out", help="output directory (fallback: $CHAOSRC_OUT)")

    sp = sub.add_parser("gen-data", help="generate a ground-truth trajectory CSV")
    common(sp)
    sp.add_argument("--horizon", type=float, help="trajectory length in time units")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("vgtt", help="audit how long the three solvers agree")
    common(sp)
    sp.add_argument("--horizon", type=float, help="audit horizon in time units")
    sp.set_defaults(func=cmd_vgtt)

    sp = sub.add_parser("run", help="run N trials at the profile's settings")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="lambda or radius-by-size sweep")
    common(sp)
    sp.add_argument("--lambdas", help="comma-separated ridge coefficients")
    sp.add_argument("--radii", help="comma-separated spectral radii")
    sp.add_argument("--sizes", help="comma-separated reservoir sizes")
    sp.add_argument("--sweep", choices=["lambda", "radius_size"], help="sweep kind")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("screen", help="rank lambdas by early prediction error")
    common(sp)
    sp.add_argument("--lambdas", help="comma-separated ridge coefficients")
    sp.set_defaults(func=cmd_screen)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ChaosRcError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
