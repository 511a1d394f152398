"""Variational checks: entropy functional, closed-form forces against
central-difference derivatives, force balance, and the symbolic calculus
identities behind the balance chain."""

import math

import numpy as np
import pytest

from pnpf.fields import PhysParams, PositivityError, State, constitutive_fluxes, energy_density
from pnpf.grid import GridSpec, ScalarField, VectorField, gradient
from pnpf.varcheck import (
    FlowMapProbe,
    check_conservative,
    check_dissipative,
    conservative_force_closed,
    derived_temperature,
    dissipation_functional,
    dissipative_force_closed,
    entropy_functional,
    force_balance_residual,
    random_probe,
    varcheck_report,
)

from .conftest import band_limited, perturbed_state


class TestEntropyFunctional:
    def test_equilibrium_zero(self, grid3d, params):
        one = ScalarField.constant(grid3d, 1.0)
        e = ScalarField.constant(grid3d, params.c_p + params.c_n)
        assert abs(entropy_functional(one, one, e, params)) <= 1e-14

    def test_doubled_energy(self, grid3d, params):
        # p = n = 1 and e = 2(c_p + c_n) give theta = 2 everywhere
        one = ScalarField.constant(grid3d, 1.0)
        e = ScalarField.constant(grid3d, 2.0 * (params.c_p + params.c_n))
        want = (params.c_p + params.c_n) * math.log(2.0) * grid3d.volume
        assert abs(entropy_functional(one, one, e, params) - want) <= 1e-13 * want

    def test_matches_compositional_path(self, grid3d, params):
        # independent path: reconstruct theta, then entropy density + quadrature
        from pnpf.fields import entropy_density

        s = perturbed_state(grid3d, seed=3, amplitude=1e-2)
        e = energy_density(s, params)
        got = entropy_functional(s.p, s.n, e, params)
        theta, phi = derived_temperature(s.p, s.n, e, params)
        assert np.abs(theta - s.theta.values).max() <= 1e-13
        s2 = State(s.n, s.p, ScalarField(grid3d, theta), ScalarField(grid3d, phi))
        want = float(entropy_density(s2, params).values.sum() * grid3d.cell_volume)
        assert abs(got - want) <= 1e-13 * max(1.0, abs(want))

    def test_rejects_nonpositive_derived_theta(self, grid3d, params):
        one = ScalarField.constant(grid3d, 1.0)
        e = ScalarField.constant(grid3d, -1.0)
        with pytest.raises(PositivityError, match="temperature"):
            entropy_functional(one, one, e, params)


class TestConservativeForce:
    def test_equilibrium_zero(self, grid3d, params):
        fs = conservative_force_closed(State.equilibrium(grid3d), params)
        for vf in (fs.f_p, fs.f_n, fs.f_e):
            for c in vf.components:
                assert np.abs(c).max() <= 1e-13

    def test_isothermal_neutral_reduces_to_entropic_force(self, grid3d, params):
        # theta = 1 and n = p: the potential and kernel terms drop, leaving
        # f_p = -grad(log p)
        p = ScalarField(grid3d, 1.0 + band_limited(grid3d, seed=4, kmax=1, amplitude=0.05))
        s = State.from_primitives(p, p, ScalarField.constant(grid3d, 1.0))
        fs = conservative_force_closed(s, params)
        want = gradient(ScalarField(grid3d, np.log(p.values)))
        for got, ref in zip(fs.f_p.components, want.components):
            assert np.abs(got + ref).max() <= 1e-12

    def test_energy_force_is_exact_gradient(self, grid3d, params):
        s = perturbed_state(grid3d, seed=5, amplitude=1e-2)
        fs = conservative_force_closed(s, params)
        want = gradient(ScalarField(grid3d, 1.0 / s.theta.values))
        for got, ref in zip(fs.f_e.components, want.components):
            assert np.array_equal(got, ref)

    def test_fd_pairing(self, grid3d, params):
        s = perturbed_state(grid3d, seed=6, amplitude=1e-3, kmax=1)
        probe = random_probe(grid3d, seed=2)
        res = check_conservative(s, params, probe)
        assert res["best_rel_err"] <= 1e-6
        assert 1.6 <= res["order_estimate"] <= 2.4


class TestDissipativeForce:
    def test_zero_fluxes_zero_forces(self, grid3d, params):
        s = State.equilibrium(grid3d)
        fl = constitutive_fluxes(s, params)
        fs = dissipative_force_closed(s, fl, params)
        for vf in (fs.f_p, fs.f_n, fs.f_e):
            for c in vf.components:
                assert np.abs(c).max() <= 1e-14

    def test_unit_energy_flux_substitution(self, grid3d):
        # j_p = j_n = 0, j_e = e1, theta = 1, k = 1: eliminated q = e1 and
        # the energy force equals e1
        params = PhysParams(k=1.0)
        s = State.equilibrium(grid3d)
        zero = VectorField.zeros(grid3d)
        e1 = VectorField(
            grid3d,
            (np.ones(grid3d.shape),) + tuple(np.zeros(grid3d.shape) for _ in range(2)),
        )

        class Fl:
            j_p, j_n, j_e = zero, zero, e1

        fs = dissipative_force_closed(s, Fl, params)
        assert np.abs(fs.f_e.components[0] - 1.0).max() <= 1e-14
        for c in fs.f_e.components[1:]:
            assert np.abs(c).max() <= 1e-14

    def test_fd_pairing_random_fluxes(self, grid3d, params):
        # arbitrary (non-constitutive) fluxes: the check is an identity of
        # the quadratic functional, exact to rounding
        s = perturbed_state(grid3d, seed=7, amplitude=1e-3)
        base = random_probe(grid3d, seed=3, amplitude=0.5)

        class Fl:
            j_p, j_n, j_e = base.dJ_p, base.dJ_n, base.dJ_e

        probe = random_probe(grid3d, seed=4)
        res = check_dissipative(s, params, probe, fl=Fl)
        assert res["best_rel_err"] <= 1e-6
        assert res["quadratic_exact"] or 1.6 <= res["order_estimate"] <= 2.4

    def test_linearity_in_fluxes(self, grid3d, params):
        s = perturbed_state(grid3d, seed=8, amplitude=1e-3)
        a = random_probe(grid3d, seed=5, amplitude=0.3)
        b = random_probe(grid3d, seed=6, amplitude=0.3)

        def forces(jp, jn, je):
            class Fl:
                j_p, j_n, j_e = jp, jn, je

            return dissipative_force_closed(s, Fl, params)

        fa = forces(a.dJ_p, a.dJ_n, a.dJ_e)
        fb = forces(b.dJ_p, b.dJ_n, b.dJ_e)
        g = grid3d
        summed = forces(
            VectorField(g, tuple(x + y for x, y in zip(a.dJ_p.components, b.dJ_p.components))),
            VectorField(g, tuple(x + y for x, y in zip(a.dJ_n.components, b.dJ_n.components))),
            VectorField(g, tuple(x + y for x, y in zip(a.dJ_e.components, b.dJ_e.components))),
        )
        for fs_ab, fs_a, fs_b in (
            (summed.f_p, fa.f_p, fb.f_p),
            (summed.f_n, fa.f_n, fb.f_n),
            (summed.f_e, fa.f_e, fb.f_e),
        ):
            for cab, ca, cb in zip(fs_ab.components, fs_a.components, fs_b.components):
                scale = max(np.abs(cab).max(), 1e-300)
                assert np.abs(cab - (ca + cb)).max() <= 1e-12 * scale


class TestForceBalance:
    def test_equilibrium(self, grid3d, params):
        assert force_balance_residual(State.equilibrium(grid3d), params) == 0.0

    def test_isothermal_single_point_anchor(self, params):
        # theta-only single mode: both closed forms reduce analytically to
        # c * grad(theta)/theta; this anchors the sign chain before the
        # full-field runs are trusted
        grid = GridSpec(dim=1, n=32, length=2 * np.pi)
        b = 1e-4
        (x,) = grid.axes_coordinates()
        one = ScalarField.constant(grid, 1.0)
        theta = ScalarField(grid, 1.0 + b * np.sin(x))
        s = State.from_primitives(one, one, theta)
        want = params.c * b * np.cos(x) / (1.0 + b * np.sin(x))
        con = conservative_force_closed(s, params)
        dis = dissipative_force_closed(s, constitutive_fluxes(s, params), params)
        assert np.abs(con.f_p.components[0] - want).max() <= 1e-10 * b
        assert np.abs(dis.f_p.components[0] - want).max() <= 1e-10 * b

    def test_single_mode_theta_perturbation(self, params):
        grid = GridSpec(dim=3, n=16, length=1.0)
        x = grid.axes_coordinates()[0]
        one = ScalarField.constant(grid, 1.0)
        theta = ScalarField(grid, 1.0 + 1e-3 * np.sin(2 * np.pi * x))
        s = State.from_primitives(one, one, theta)
        assert force_balance_residual(s, params) <= 1e-8

    def test_random_small_perturbation_16(self, params):
        grid = GridSpec(dim=3, n=16, length=1.0, max_points=2**24)
        s = perturbed_state(grid, seed=9, amplitude=1e-3, kmax=1)
        assert force_balance_residual(s, params) <= 1e-8


class TestSymbolicIdentities:
    """The pointwise calculus steps that make the closed forms balance,
    verified with generic symbolic functions."""

    def test_local_part_identity(self):
        import sympy as sp

        x, c = sp.symbols("x c")
        p = sp.Function("p", positive=True)(x)
        th = sp.Function("theta", positive=True)(x)
        phi = sp.Function("phi")(x)
        # dissipative local terms with Darcy/Fourier inserted
        j_over = -(sp.diff(p * th, x) + p * sp.diff(phi, x)) / (p * th)
        heat_term = ((c + 1) * th + phi) * sp.diff(th, x) / th**2
        local_dis = j_over + heat_term
        # conservative local terms
        local_con = -sp.diff(sp.log(p) - c * sp.log(th) + phi / th, x)
        assert sp.simplify(local_dis - local_con) == 0

    def test_kernel_product_rule_identity(self):
        import sympy as sp

        x = sp.symbols("x")
        phi = sp.Function("phi")(x)
        W = sp.Function("W")(x)
        lhs = phi * sp.diff(W, x, 2) + 2 * sp.diff(phi, x) * sp.diff(W, x)
        rhs = sp.diff(phi * W, x, 2) - W * sp.diff(phi, x, 2)
        assert sp.simplify(lhs - rhs) == 0

    def test_heat_flux_elimination_roundtrip(self, grid3d, params):
        # assembling j_e from (j_p, j_n, q) and eliminating must return q
        s = perturbed_state(grid3d, seed=10, amplitude=1e-2)
        fl = constitutive_fluxes(s, params)
        from pnpf.varcheck import _eliminate_heat_flux

        q, _, _ = _eliminate_heat_flux(
            s, params,
            [c for c in fl.j_p.components],
            [c for c in fl.j_n.components],
            [c for c in fl.j_e.components],
        )
        for got, ref in zip(q, fl.q.components):
            assert np.abs(got - ref).max() <= 1e-13


class TestReport:
    def test_report_passes_on_small_state(self, grid3d, params):
        s = perturbed_state(grid3d, seed=11, amplitude=1e-3, kmax=1)
        rep = varcheck_report(s, params, seed=1)
        assert rep["pass"]
        assert rep["conservative"]["best_rel_err"] <= 1e-6
        assert rep["dissipative"]["best_rel_err"] <= 1e-6
        assert rep["force_balance_residual"] <= 1e-8

    def test_zero_threshold_fails(self, grid3d, params):
        s = perturbed_state(grid3d, seed=12, amplitude=1e-3, kmax=1)
        rep = varcheck_report(s, params, seed=1, fd_tol=0.0, balance_tol=0.0)
        assert not rep["pass"]
