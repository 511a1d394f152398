"""Right-hand sides and time stepping: equilibrium fixed point, analytic
slices, cross-formulation consistency, conservation structure, stepping
order, and the potential-sign reconciliation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnpf.dynamics import (
    PerturbationState,
    StepAbort,
    StepperConfig,
    convert,
    convert_back,
    rhs_perturbation,
    rhs_primitive,
    stability_bound,
    step,
)
from pnpf.fields import PhysParams, State
from pnpf.grid import GridSpec, ScalarField, gradient, inner, laplacian, norm
from pnpf.poisson import solve

from .conftest import band_limited, perturbation_state, perturbed_state


class TestSignReconciliation:
    def test_screening_pairing_identity(self, grid3d):
        # With Delta(phi) = v (v = n - p), the paper-level identity
        # <laplacian(v) - 2v, phi> = ||v||^2 + 2||grad phi||^2 must hold
        # with both sides positive; the opposite sign convention flips it.
        v = ScalarField(grid3d, band_limited(grid3d, seed=1, kmax=2))
        phi = solve(v).phi
        lhs_field = ScalarField(grid3d, laplacian(v).values - 2.0 * v.values)
        lhs = inner(lhs_field, phi)
        want = norm(v, "L2") ** 2 + 2.0 * sum(
            inner(ScalarField(grid3d, c), ScalarField(grid3d, c))
            for c in gradient(phi).components
        )
        assert want > 0
        assert abs(lhs - want) <= 1e-12 * want


class TestRhsPrimitive:
    def test_equilibrium_fixed_point(self, grid3d, params):
        dn, dp, dth = rhs_primitive(State.equilibrium(grid3d), params)
        for f in (dn, dp, dth):
            assert np.abs(f.values).max() <= 1e-13

    def test_pure_diffusion_slice(self):
        # n = p = 1, theta = 1 + a sin(2 pi x/L), phi = 0:
        # dn = dp = laplacian(n theta) = -a (2 pi/L)^2 sin(2 pi x/L);
        # expected values evaluated through an independent symbolic path
        import sympy as sp

        grid = GridSpec(dim=3, n=16, length=2.0)
        L, a = grid.length, 0.01
        x = grid.axes_coordinates()[0]
        one = ScalarField.constant(grid, 1.0)
        theta = ScalarField(grid, 1.0 + a * np.sin(2 * np.pi * x / L))
        s = State.from_primitives(one, one, theta)
        dn, dp, _ = rhs_primitive(s, PhysParams())

        xs = sp.symbols("x")
        expr = sp.diff(1 * (1 + a * sp.sin(2 * sp.pi * xs / L)), xs, 2)
        want = sp.lambdify(xs, expr, "numpy")(x)
        assert np.abs(dn.values - want).max() <= 1e-12
        assert np.abs(dp.values - want).max() <= 1e-12

    def test_mass_rates_have_zero_mean(self, grid3d, params):
        s = perturbed_state(grid3d, seed=5, amplitude=1e-2)
        dn, dp, _ = rhs_primitive(s, params)
        assert abs(dn.values.mean()) <= 1e-14
        assert abs(dp.values.mean()) <= 1e-14


class TestRhsPerturbation:
    def test_zero_perturbation(self, grid3d, params):
        du, dv, dtt = rhs_perturbation(PerturbationState.zero(grid3d), params)
        for f in (du, dv, dtt):
            assert np.abs(f.values).max() <= 1e-13

    def test_single_v_mode_linear_part(self):
        # u_tilde = theta_tilde = 0, v = a sin(2 pi x/L) with slaved phi:
        # dv = laplacian(v) - 2v = -a ((2 pi/L)^2 + 2) sin(2 pi x/L)
        grid = GridSpec(dim=3, n=16, length=1.0)
        a = 1e-3
        x = grid.axes_coordinates()[0]
        k = 2 * np.pi / grid.length
        zero = ScalarField.constant(grid, 0.0)
        v = ScalarField(grid, a * np.sin(k * x))
        ps = PerturbationState.from_fields(zero, v, zero)
        _, dv, _ = rhs_perturbation(ps, PhysParams())
        want = -a * (k**2 + 2.0) * np.sin(k * x)
        assert np.abs(dv.values - want).max() <= 1e-12 * a * (k**2 + 2.0)

    def test_rejects_unequal_capacities(self, grid3d):
        ps = PerturbationState.zero(grid3d)
        with pytest.raises(ValueError, match="c_p == c_n"):
            rhs_perturbation(ps, PhysParams(c_p=1.5, c_n=2.0))
        with pytest.raises(ValueError, match="c > 1"):
            rhs_perturbation(ps, PhysParams(c_p=1.0, c_n=1.0))


class TestCrossFormulation:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_rhs_agree_through_conversion(self, seed, params):
        grid = GridSpec(dim=3, n=8, length=1.0)
        ps = perturbation_state(grid, seed=seed * 10 + 3, amplitude=1e-3)
        s = convert_back(ps)
        dn, dp, dth = rhs_primitive(s, params)
        du, dv, dtt = rhs_perturbation(ps, params)
        scale = max(np.abs(du.values).max(), np.abs(dv.values).max(),
                    np.abs(dtt.values).max())
        assert np.abs((dn.values + dp.values) - du.values).max() <= 1e-10 * scale
        assert np.abs((dn.values - dp.values) - dv.values).max() <= 1e-10 * scale
        assert np.abs(dth.values - dtt.values).max() <= 1e-10 * scale

    def test_agreement_is_roundoff_level(self, params):
        # the two discretizations are algebraically parallel; the gap
        # should sit far below the acceptance tolerance
        grid = GridSpec(dim=3, n=8, length=1.0)
        ps = perturbation_state(grid, seed=99, amplitude=1e-2)
        s = convert_back(ps)
        _, _, dth = rhs_primitive(s, params)
        _, _, dtt = rhs_perturbation(ps, params)
        scale = np.abs(dtt.values).max()
        assert np.abs(dth.values - dtt.values).max() <= 1e-12 * scale


class TestConvert:
    def test_equilibrium_maps_to_zero(self, grid3d):
        ps = convert(State.equilibrium(grid3d))
        for f in (ps.u_tilde, ps.v, ps.theta_tilde, ps.phi):
            assert np.abs(f.values).max() == 0.0

    def test_arithmetic_example(self, grid3d):
        n = ScalarField.constant(grid3d, 1.1)
        p = ScalarField.constant(grid3d, 0.9)
        th = ScalarField.constant(grid3d, 1.05)
        with pytest.raises(Exception):
            # constant charge imbalance is non-neutral on the torus
            State.from_primitives(n, p, th)
        # the variable map itself is plain arithmetic; check via a neutral
        # spatially varying state
        s = perturbed_state(grid3d, seed=8, amplitude=1e-2)
        ps = convert(s)
        assert np.abs(ps.u_tilde.values - (s.n.values + s.p.values - 2)).max() == 0.0
        assert np.abs(ps.v.values - (s.n.values - s.p.values)).max() == 0.0
        assert np.abs(ps.theta_tilde.values - (s.theta.values - 1)).max() == 0.0

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_round_trip(self, seed):
        grid = GridSpec(dim=2, n=8, length=1.0)
        s = perturbed_state(grid, seed=seed, amplitude=1e-2)
        back = convert_back(convert(s))
        for a, b in ((back.n, s.n), (back.p, s.p), (back.theta, s.theta)):
            assert np.abs(a.values - b.values).max() <= 1e-15


class TestStep:
    def test_equilibrium_is_fixed_point(self, grid3d, params):
        s = State.equilibrium(grid3d)
        cfg = StepperConfig(scheme="RK4", dt=1e-3, t_end=1e-2)
        out = s
        for _ in range(10):
            out = step(out, cfg, params)
        assert np.abs(out.n.values - 1.0).max() <= 1e-13
        assert np.abs(out.theta.values - 1.0).max() <= 1e-13

    def test_heat_slice_decay_rate(self, params):
        # theta-only evolution with n = p = 1 frozen: the linearized
        # temperature equation decays like exp(-(3/(2c)) k^2 t); integrate
        # only the theta component with a test-local RK4 loop
        grid = GridSpec(dim=1, n=16, length=1.0)
        c = params.c
        (x,) = grid.axes_coordinates()
        k = 2 * np.pi / grid.length
        a = 1e-8
        zero = ScalarField.constant(grid, 0.0)
        tt = a * np.sin(k * x)
        dt, steps = 1e-5, 200

        def rhs_theta(tt_vals):
            ps = PerturbationState.from_fields(
                zero, zero, ScalarField(grid, tt_vals)
            )
            return rhs_perturbation(ps, params)[2].values

        y = tt.copy()
        for _ in range(steps):
            k1 = rhs_theta(y)
            k2 = rhs_theta(y + 0.5 * dt * k1)
            k3 = rhs_theta(y + 0.5 * dt * k2)
            k4 = rhs_theta(y + dt * k3)
            y = y + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

        decay = math.exp(-(3.0 / (2.0 * c)) * k**2 * dt * steps)
        got = np.abs(y).max() / a
        assert abs(got - decay) <= 1e-6 * decay

    def test_rk4_self_convergence_order(self, params):
        # halving dt cuts the step-integration error ~16x (order 4)
        grid = GridSpec(dim=2, n=8, length=2 * np.pi)
        ps0 = perturbation_state(grid, seed=21, amplitude=1e-2, kmax=2)

        def advance(dt, t_end):
            cfg = StepperConfig(scheme="RK4", dt=dt, t_end=t_end)
            out = ps0
            for _ in range(cfg.n_steps):
                out = step(out, cfg, params)
            return out

        t_end = 0.2
        ref = advance(0.00125, t_end)
        coarse = advance(0.02, t_end)
        fine = advance(0.01, t_end)
        err_c = np.abs(coarse.v.values - ref.v.values).max()
        err_f = np.abs(fine.v.values - ref.v.values).max()
        order = math.log2(err_c / err_f)
        assert order >= 3.5

    def test_imex1_self_convergence_order(self, params):
        grid = GridSpec(dim=2, n=8, length=2 * np.pi)
        ps0 = perturbation_state(grid, seed=22, amplitude=1e-2, kmax=2)

        def advance(dt, t_end):
            cfg = StepperConfig(scheme="IMEX1", dt=dt, t_end=t_end)
            out = ps0
            for _ in range(cfg.n_steps):
                out = step(out, cfg, params)
            return out

        t_end = 0.2
        ref = advance(0.0005, t_end)
        coarse = advance(0.02, t_end)
        fine = advance(0.01, t_end)
        err_c = np.abs(coarse.v.values - ref.v.values).max()
        err_f = np.abs(fine.v.values - ref.v.values).max()
        order = math.log2(err_c / err_f)
        assert 0.7 <= order <= 1.5

    def test_imex1_stable_beyond_rk4_limit(self, params):
        # IMEX treats the stiff constant-coefficient block implicitly, so a
        # dt far above the explicit diffusion limit must stay bounded
        grid = GridSpec(dim=1, n=64, length=1.0)
        ps = perturbation_state(grid, seed=30, amplitude=1e-3, kmax=2)
        rk4_limit = stability_bound(grid, params, "RK4", primitive=False)
        cfg = StepperConfig(scheme="IMEX1", dt=50 * rk4_limit, t_end=1.0)
        out = ps
        for _ in range(20):
            out = step(out, cfg, params)
        assert norm(out.v, "L2") <= norm(ps.v, "L2")

    def test_mass_conserved_over_steps(self, params):
        grid = GridSpec(dim=2, n=16, length=2 * np.pi)
        s = perturbed_state(grid, seed=23, amplitude=1e-2)
        cfg = StepperConfig(scheme="RK4", dt=2e-3, t_end=0.2)
        mass_n0 = s.n.values.sum() * grid.cell_volume
        out = s
        for _ in range(100):
            out = step(out, cfg, params)
        mass_n = out.n.values.sum() * grid.cell_volume
        assert abs(mass_n - mass_n0) <= 1e-13 * abs(mass_n0)

    def test_neutrality_preserved(self, params):
        grid = GridSpec(dim=2, n=16, length=2 * np.pi)
        ps = perturbation_state(grid, seed=24, amplitude=1e-2)
        cfg = StepperConfig(scheme="RK4", dt=2e-3, t_end=0.2)
        out = ps
        for _ in range(100):
            out = step(out, cfg, params)
        assert abs(out.v.values.mean()) <= 1e-13

    def test_positivity_abort(self, grid3d, params):
        # a state already hugging the floor must abort, not clamp
        n = ScalarField.constant(grid3d, 2e-8)
        s = State(n, n, ScalarField.constant(grid3d, 1.0), ScalarField.constant(grid3d, 0.0))
        cfg = StepperConfig(scheme="RK4", dt=1.0, t_end=1.0, positivity_floor=1e-4)
        with pytest.raises(StepAbort, match="positivity"):
            step(s, cfg, params)

    def test_rejects_unknown_type(self, params):
        cfg = StepperConfig()
        with pytest.raises(TypeError):
            step(42, cfg, params)


class TestStabilityBound:
    def test_rk4_bound_is_sharp_order_of_magnitude(self, params):
        grid = GridSpec(dim=1, n=32, length=1.0)
        dt_max = stability_bound(grid, params, "RK4", primitive=False)
        ps = perturbation_state(grid, seed=31, amplitude=1e-3, kmax=10)

        def survives(dt):
            cfg = StepperConfig(scheme="RK4", dt=dt, t_end=dt * 60)
            out = ps
            try:
                for _ in range(60):
                    out = step(out, cfg, params)
            except StepAbort:
                return False
            return bool(np.abs(out.v.values).max() < 1.0)

        assert survives(0.6 * dt_max)
        assert not survives(8.0 * dt_max)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="scheme"):
            StepperConfig(scheme="euler")
        with pytest.raises(ValueError, match="positive"):
            StepperConfig(dt=-1.0)
