"""Integrator checks: hand-evaluated right-hand sides, convergence orders
against an adaptive high-accuracy reference, cross-solver agreement, dense
output, and failure modes.

Cross-solver agreement bounds were frozen from oracle measurements: from an
on-attractor state, solver differences are amplified by roughly exp(0.9056*t),
so over 10 time units at dt=1e-3 the schemes agree to a few 1e-5 max-norm.
"""

import math

import numpy as np
import pytest

from chaosrc.errors import NonFiniteStateError, StepUnderflowError
from chaosrc.lorenz_ode import (
    LorenzParams,
    SolverMethod,
    SolverSpec,
    Trajectory,
    _dopri_stages,
    abm54_pc_integrate,
    attractor_warmup,
    dense_eval,
    dopri54_integrate,
    integrate,
    lorenz_rhs,
    n_intervals,
    rk4_integrate,
    rk4_step,
    write_trajectory_csv,
)

P = LorenzParams()
REF_SPEC = SolverSpec(SolverMethod.DOPRI54_ADAPTIVE, dt=1e-3, abs_tol=1e-13, rel_tol=1e-13)


def warmed_state():
    return attractor_warmup([1.0, 0.0, 0.0], P, SolverSpec(SolverMethod.RK4_FIXED, dt=1e-3), 20.0)


class TestRhs:
    def test_origin_fixed_point(self):
        assert np.array_equal(lorenz_rhs(np.zeros(3), P), np.zeros(3))

    def test_direct_substitution(self):
        got = lorenz_rhs(np.array([1.0, 1.0, 1.0]), P)
        assert got == pytest.approx([0.0, 26.0, -5.0 / 3.0], abs=1e-14)

    def test_nontrivial_fixed_point(self):
        c = math.sqrt(P.beta * (P.rho_drive - 1.0))
        got = lorenz_rhs(np.array([c, c, P.rho_drive - 1.0]), P)
        assert np.max(np.abs(got)) < 1e-12

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            LorenzParams(sigma=-1.0)


class TestRk4:
    def test_fixed_point_step(self):
        assert np.array_equal(rk4_step(np.zeros(3), P, 0.37), np.zeros(3))

    def test_one_step_matches_reference_to_h5(self):
        s0 = np.array([1.0, 1.0, 1.0])
        for h in (1e-2, 5e-3):
            ref = dopri54_integrate(s0, P, SolverSpec(SolverMethod.DOPRI54_ADAPTIVE, dt=h, abs_tol=1e-13, rel_tol=1e-13), h).data[:, -1]
            err = np.max(np.abs(rk4_step(s0, P, h) - ref))
            # local truncation ~ C*h^5 with C measured around 2e3 for Lorenz
            assert err < 2e4 * h**5

    def test_halving_step_error_ratios(self):
        s0 = np.array([1.0, 1.0, 1.0])
        # one-step (local) error drops ~32x per halving
        local = []
        for h in (1e-2, 5e-3):
            ref = dopri54_integrate(s0, P, SolverSpec(SolverMethod.DOPRI54_ADAPTIVE, dt=h, abs_tol=1e-13, rel_tol=1e-13), h).data[:, -1]
            local.append(np.max(np.abs(rk4_step(s0, P, h) - ref)))
        assert 20.0 < local[0] / local[1] < 48.0
        # global error over one time unit drops ~16x per halving
        s0 = warmed_state()
        ref = integrate(s0, P, REF_SPEC, 1.0).data[:, -1]
        errs = [
            np.max(np.abs(rk4_integrate(s0, P, SolverSpec(SolverMethod.RK4_FIXED, dt=h), 1.0).data[:, -1] - ref))
            for h in (1e-2, 5e-3)
        ]
        assert 12.0 < errs[0] / errs[1] < 20.0

    def test_nonfinite_blowup_raises_with_partial(self):
        with pytest.raises(NonFiniteStateError) as exc:
            rk4_integrate(np.array([1e160, 1e160, 1e160]), P, SolverSpec(SolverMethod.RK4_FIXED, dt=1e-2), 1.0)
        assert exc.value.partial is not None
        assert exc.value.partial.n_samples >= 1


class TestAbm54:
    def test_origin_constant(self):
        traj = abm54_pc_integrate(np.zeros(3), P, SolverSpec(SolverMethod.ABM54_PC, dt=1e-2), 0.5)
        assert np.array_equal(traj.data, np.zeros_like(traj.data))

    def test_bootstrap_region_is_rk4(self):
        spec = SolverSpec(SolverMethod.ABM54_PC, dt=1e-2)
        s0 = np.array([1.0, 2.0, 3.0])
        traj = abm54_pc_integrate(s0, P, spec, spec.dt)
        assert traj.n_samples == 2
        assert np.array_equal(traj.data[:, 1], rk4_step(s0, P, spec.dt))

    def test_cross_solver_agreement_10_units(self):
        s0 = warmed_state()
        spec = SolverSpec(SolverMethod.ABM54_PC, dt=1e-3)
        abm = abm54_pc_integrate(s0, P, spec, 10.0)
        ref = dopri54_integrate(s0, P, SolverSpec(SolverMethod.DOPRI54_ADAPTIVE, dt=1e-3, abs_tol=1e-12, rel_tol=1e-12), 10.0)
        assert np.max(np.abs(abm.data - ref.data)) < 1e-4  # measured 2.7e-5

    def test_order_at_least_four(self):
        s0 = warmed_state()
        ref = integrate(s0, P, REF_SPEC, 1.0).data[:, -1]
        errs = [
            np.max(np.abs(abm54_pc_integrate(s0, P, SolverSpec(SolverMethod.ABM54_PC, dt=h), 1.0).data[:, -1] - ref))
            for h in (1e-2, 5e-3, 2.5e-3)
        ]
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert all(o >= 4.0 for o in orders)


class TestDopri54:
    def test_origin_constant_with_few_steps(self):
        calls = {"n": 0}

        def rhs(y):
            calls["n"] += 1
            return np.zeros(3)

        spec = SolverSpec(SolverMethod.DOPRI54_ADAPTIVE, dt=0.1)
        traj = dopri54_integrate(np.zeros(3), P, spec, 10.0, rhs=rhs)
        assert np.array_equal(traj.data, np.zeros_like(traj.data))
        # the controller grows h geometrically to its cap, so only a handful
        # of steps (7 evals each) are needed for the whole span
        assert calls["n"] < 200

    def test_grid_count_contract(self):
        spec = SolverSpec(SolverMethod.DOPRI54_ADAPTIVE, dt=1e-3, abs_tol=1e-6, rel_tol=1e-6)
        traj = dopri54_integrate(np.array([1.0, 1.0, 1.0]), P, spec, 0.25)
        assert traj.n_samples == math.floor(0.25 / 1e-3) + 1

    def test_self_convergence_under_tightening(self):
        s0 = warmed_state()
        end = {}
        for tol in (1e-8, 1e-12, 1e-14):
            spec = SolverSpec(SolverMethod.DOPRI54_ADAPTIVE, dt=1e-2, abs_tol=tol, rel_tol=tol)
            end[tol] = dopri54_integrate(s0, P, spec, 10.0).data[:, -1]
        dev_loose = np.max(np.abs(end[1e-8] - end[1e-14]))
        dev_tight = np.max(np.abs(end[1e-12] - end[1e-14]))
        assert dev_tight < dev_loose

    def test_dense_output_endpoint_within_4_ulp(self):
        s0 = warmed_state()
        h = 1e-3
        k, ynew = _dopri_stages(lambda y: lorenz_rhs(y, P), s0, h, lorenz_rhs(s0, P))
        interp = dense_eval(s0, h, k, 1.0)
        ulp = np.spacing(np.abs(ynew))
        assert np.all(np.abs(interp - ynew) <= 4.0 * ulp)

    def test_step_underflow_on_finite_time_blowup(self):
        # y' = y^2 blows up at t=1; the controller must underflow approaching it
        def rhs(y):
            return y * y

        spec = SolverSpec(SolverMethod.DOPRI54_ADAPTIVE, dt=0.01, abs_tol=1e-10, rel_tol=1e-10)
        with pytest.raises((StepUnderflowError, NonFiniteStateError)):
            dopri54_integrate(np.ones(3), P, spec, 2.0, rhs=rhs)


class TestIntegrateDispatch:
    def test_zero_span_single_sample(self):
        for m in SolverMethod:
            traj = integrate(np.array([1.0, 2.0, 3.0]), P, SolverSpec(m, dt=1e-2), 0.0)
            assert traj.n_samples == 1
            assert np.array_equal(traj.data[:, 0], [1.0, 2.0, 3.0])

    def test_rk4_vs_abm54_five_units(self):
        s0 = warmed_state()
        a = integrate(s0, P, SolverSpec(SolverMethod.RK4_FIXED, dt=1e-3), 5.0)
        b = integrate(s0, P, SolverSpec(SolverMethod.ABM54_PC, dt=1e-3), 5.0)
        assert np.max(np.abs(a.data - b.data)) < 1e-5  # measured ~4e-7

    def test_origin_constant_every_method(self):
        for m in SolverMethod:
            traj = integrate(np.zeros(3), P, SolverSpec(m, dt=1e-2), 1.0)
            assert np.array_equal(traj.data, np.zeros_like(traj.data))

    def test_pairwise_agreement_first_10_units(self):
        s0 = warmed_state()
        trajs = [integrate(s0, P, SolverSpec(m, dt=1e-3), 10.0) for m in SolverMethod]
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.max(np.abs(trajs[i].data - trajs[j].data)) < 1e-4  # measured <=4.5e-5

    def test_fixed_points_preserved(self):
        c = math.sqrt(P.beta * (P.rho_drive - 1.0))
        fp = np.array([c, c, P.rho_drive - 1.0])
        for m in SolverMethod:
            traj = integrate(fp, P, SolverSpec(m, dt=1e-3), 1.0)
            assert np.max(np.abs(traj.data - fp[:, None])) < 1e-11


class TestWarmup:
    def test_zero_warmup_identity(self):
        assert np.array_equal(attractor_warmup([1.0, 0.0, 0.0], P, SolverSpec(SolverMethod.RK4_FIXED, dt=1e-3), 0.0), [1.0, 0.0, 0.0])

    def test_origin_stays(self):
        assert np.array_equal(attractor_warmup(np.zeros(3), P, SolverSpec(SolverMethod.RK4_FIXED, dt=1e-2), 5.0), np.zeros(3))

    def test_lands_on_attractor_bounds(self):
        s = attractor_warmup([1.0, 0.0, 0.0], P, SolverSpec(SolverMethod.RK4_FIXED, dt=1e-3), 20.0)
        assert abs(s[0]) <= 25 and abs(s[1]) <= 25 and abs(s[2]) <= 50

    def test_negative_warmup_rejected(self):
        with pytest.raises(ValueError):
            attractor_warmup(np.zeros(3), P, SolverSpec(SolverMethod.RK4_FIXED, dt=1e-2), -1.0)


class TestGridAndCsv:
    def test_n_intervals_exact_multiples(self):
        assert n_intervals(0.0, 10.0, 1e-3) == 10000
        assert n_intervals(0.0, 250.0, 1e-2) == 25000
        assert n_intervals(0.0, 0.0, 1e-3) == 0
        assert n_intervals(0.0, 10.0005, 1e-3) == 10000

    def test_csv_format(self, tmp_path):
        traj = Trajectory(dt=0.5, t0=1.0, data=np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
        path = tmp_path / "t.csv"
        write_trajectory_csv(traj, path)
        raw = path.read_bytes()
        assert b"\r" not in raw
        lines = raw.decode().strip().split("\n")
        assert lines[0] == "t,x,y,z"
        assert len(lines) == 3
        fields = lines[1].split(",")
        assert float(fields[0]) == 1.0 and float(fields[1]) == 1.0
        # 17 significant digits: d.dddddddddddddddde+XX
        assert len(fields[1].split("e")[0].replace("-", "").replace(".", "")) == 17
