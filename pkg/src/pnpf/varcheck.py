"""
Numerical verification of the variational structure.

The entropy functional S, viewed through the accumulated-flux variables
(state changes enter as delta_field = -div(delta_J)), has closed-form
functional derivatives: the conservative forces

    f_p = -grad[log p - c_p log theta + phi/(2 theta) + G((p-n)/(2 theta))],
    f_n = -grad[log n - c_n log theta - phi/(2 theta) - G((p-n)/(2 theta))],
    f_e =  grad(1/theta),

with G the torus Green's operator of -Delta (zero-mean gauge, constant
mode filtered).  The quadratic entropy-production functional, with the
heat flux eliminated in favor of the energy flux, yields the dissipative
forces

    f_p = j_p/(D_p p theta) - [(c_p+1) theta + phi] R + grad(P)/...,
    f_n = j_n/(D_n n theta) - [(c_n+1) theta - phi] R - ...,
    f_e = R = q/(k theta^2),

whose nonlocal part is (1/2) grad(solve(div(phi R) + R.grad(phi))) with
alternating sign between the two species.  Both closed forms are built
here as the *exact* adjoints of the discretized functionals (spectral
derivatives, pointwise algebra, self-adjoint Green's operator), so the
central-difference checks converge to them at second order in the probe
size all the way down to rounding.

Inserting the Darcy/Fourier constitutive fluxes makes conservative and
dissipative forces coincide identically; force_balance_residual measures
the discrete remainder of that identity.

Sign bookkeeping, fixed once and unit-tested: the published closed-form
forces pair as  sum_flows <f, dJ> = d/d_eps S(perturbed)  (equivalently
they are the derivatives of +S along the flow maps); this is the unique
convention under which force balance reproduces q = -k grad(theta) and
the Darcy fluxes.  The heat-flux elimination and the kernel signs follow
the energy-flux bookkeeping (the first law), whose species coefficients
are [(c_p+1) theta + phi] on j_p and [(c_n+1) theta - phi] on j_n.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import PhysParams, PositivityError, State, constitutive_fluxes, energy_density
from .grid import (
    GridSpec,
    ScalarField,
    VectorField,
    dealias_array,
    divergence_arrays,
    grad_arrays,
)
from .poisson import greens_apply, solve_array

DEFAULT_EPS_SCAN = (1e-3, 1e-4, 1e-5)


@dataclass(frozen=True)
class FlowMapProbe:
    """Perturbation directions for the three flow maps, plus the scan of
    central-difference step sizes."""

    dJ_p: VectorField
    dJ_n: VectorField
    dJ_e: VectorField
    eps_scan: tuple = DEFAULT_EPS_SCAN


@dataclass(frozen=True)
class ForceSet:
    f_p: VectorField
    f_n: VectorField
    f_e: VectorField


def random_probe(grid: GridSpec, seed: int, kmax: int = 2, amplitude: float = 0.1,
                 eps_scan=DEFAULT_EPS_SCAN) -> FlowMapProbe:
    """Band-limited, dealiased probe directions from Philox(seed)."""
    gen = np.random.Generator(np.random.Philox(key=seed))

    def vec():
        comps = []
        for _ in range(grid.dim):
            white = gen.standard_normal(grid.shape)
            spec = grid.fft(white)
            mask = np.zeros(grid.spectral_shape, dtype=bool)
            mask[:] = True
            for ax in range(grid.dim):
                n = grid.n
                m1 = np.fft.rfftfreq(n) * n if ax == grid.dim - 1 else np.fft.fftfreq(n) * n
                shape = [1] * grid.dim
                shape[ax] = m1.size
                mask &= np.abs(m1.reshape(shape)) <= kmax
            vals = grid.ifft(np.where(mask, spec, 0.0))
            peak = np.abs(vals).max()
            comps.append(vals * (amplitude / peak) if peak > 0 else vals)
        return VectorField(grid, tuple(comps))

    return FlowMapProbe(vec(), vec(), vec(), tuple(eps_scan))


# -- entropy functional and conservative forces -------------------------------


def derived_temperature(p: ScalarField, n: ScalarField, e: ScalarField,
                        params: PhysParams) -> tuple[np.ndarray, np.ndarray]:
    """(theta, phi) reconstructed from the extensive variables:
    phi = G(p - n), theta = (e - (p - n) phi/2)/(c_p p + c_n n)."""
    grid = p.grid
    phi = greens_apply(grid, p.values - n.values)
    theta = (e.values - 0.5 * (p.values - n.values) * phi) / (
        params.c_p * p.values + params.c_n * n.values
    )
    return theta, phi


def entropy_functional(p: ScalarField, n: ScalarField, e: ScalarField,
                       params: PhysParams) -> float:
    """Total entropy with the temperature derived from (p, n, e); this
    hidden dependency is what makes the flow-map derivative nontrivial.

    Raises PositivityError if the derived temperature is not positive.
    """
    grid = p.grid
    if abs(float((p.values - n.values).mean())) > 1e-10:
        raise ValueError("entropy functional requires a neutral (p, n) pair")
    theta, _ = derived_temperature(p, n, e, params)
    if float(theta.min()) <= 0.0:
        raise PositivityError(f"derived temperature min {theta.min():.3e} <= 0")
    logth = np.log(theta)
    eta = -p.values * (np.log(p.values) - params.c_p * logth)
    eta -= n.values * (np.log(n.values) - params.c_n * logth)
    # fsum: the central differences divide S by probe sizes down to 1e-5,
    # so accumulation error in the quadrature must stay at one ulp
    return math.fsum(eta.ravel().tolist()) * grid.cell_volume


def conservative_force_closed(s: State, params: PhysParams) -> ForceSet:
    """Closed-form flow-map derivatives of the entropy functional."""
    g = s.grid
    n, p, th, phi = s.n.values, s.p.values, s.theta.values, s.phi.values
    kernel = greens_apply(g, (p - n) / (2.0 * th))
    base_p = np.log(p) - params.c_p * np.log(th) + phi / (2.0 * th) + kernel
    base_n = np.log(n) - params.c_n * np.log(th) - phi / (2.0 * th) - kernel
    f_p = [-c for c in grad_arrays(g, base_p)]
    f_n = [-c for c in grad_arrays(g, base_n)]
    f_e = grad_arrays(g, 1.0 / th)
    return ForceSet(
        VectorField(g, tuple(f_p)), VectorField(g, tuple(f_n)), VectorField(g, tuple(f_e))
    )


# -- entropy production functional and dissipative forces ---------------------


def _eliminate_heat_flux(s: State, params: PhysParams, j_p, j_n, j_e):
    """q from (j_e, j_p, j_n) by the energy-flux bookkeeping, with the
    potential rate solved from the continuity equations."""
    g = s.grid
    th, phi = s.theta.values, s.phi.values
    a = (params.c_p + 1.0) * th + phi
    b = (params.c_n + 1.0) * th - phi
    phi_t = solve_array(g, divergence_arrays(g, [j_p[i] - j_n[i] for i in range(g.dim)]))
    gphi = grad_arrays(g, phi)
    gphi_t = grad_arrays(g, phi_t)
    q = [
        j_e[i] - a * j_p[i] - b * j_n[i] + 0.5 * (phi * gphi_t[i] - phi_t * gphi[i])
        for i in range(g.dim)
    ]
    return q, a, b


def dissipation_functional(s: State, params: PhysParams, j_p, j_n, j_e) -> float:
    """The quadratic entropy production of arbitrary fluxes, with q
    eliminated through the energy-flux relation."""
    g = s.grid
    q, _, _ = _eliminate_heat_flux(s, params, j_p, j_n, j_e)
    th = s.theta.values
    dens = sum(c**2 for c in j_p) / (params.D_p * s.p.values * th)
    dens += sum(c**2 for c in j_n) / (params.D_n * s.n.values * th)
    dens += sum(c**2 for c in q) / (params.k * th**2)
    return float(dens.sum() * g.cell_volume)


def dissipative_force_closed(s: State, fl, params: PhysParams) -> ForceSet:
    """Closed-form half-derivatives of the entropy production with respect
    to (j_p, j_n, j_e); linear in the fluxes.  fl provides (j_p, j_n, j_e)
    (a FluxSet or any object with those attributes)."""
    g = s.grid
    j_p = [c for c in fl.j_p.components]
    j_n = [c for c in fl.j_n.components]
    j_e = [c for c in fl.j_e.components]
    q, a, b = _eliminate_heat_flux(s, params, j_p, j_n, j_e)
    th, phi = s.theta.values, s.phi.values
    R = [q[i] / (params.k * th**2) for i in range(g.dim)]
    gphi = grad_arrays(g, phi)
    r_dot_gphi = sum(R[i] * gphi[i] for i in range(g.dim))
    div_phi_r = divergence_arrays(g, [phi * R[i] for i in range(g.dim)])
    kernel = grad_arrays(g, solve_array(g, div_phi_r + r_dot_gphi))

    f_p = [
        j_p[i] / (params.D_p * s.p.values * th) - a * R[i] + 0.5 * kernel[i]
        for i in range(g.dim)
    ]
    f_n = [
        j_n[i] / (params.D_n * s.n.values * th) - b * R[i] - 0.5 * kernel[i]
        for i in range(g.dim)
    ]
    return ForceSet(
        VectorField(g, tuple(f_p)), VectorField(g, tuple(f_n)), VectorField(g, tuple(R))
    )


def force_balance_residual(s: State, params: PhysParams) -> float:
    """Max relative deviation between conservative and dissipative closed
    forms with the constitutive fluxes inserted; zero at equilibrium."""
    fl = constitutive_fluxes(s, params)
    con = conservative_force_closed(s, params)
    dis = dissipative_force_closed(s, fl, params)
    dev, scale = 0.0, 0.0
    for fc, fd in ((con.f_p, dis.f_p), (con.f_n, dis.f_n), (con.f_e, dis.f_e)):
        for cc, cd in zip(fc.components, fd.components):
            dev = max(dev, float(np.abs(cc - cd).max()))
            scale = max(scale, float(np.abs(cc).max()))
    if scale == 0.0:
        return 0.0
    return dev / scale


# -- central-difference functional-derivative checks --------------------------


def _pair(grid: GridSpec, force: VectorField, probe: VectorField) -> float:
    return float(
        sum((fc * pc).sum() for fc, pc in zip(force.components, probe.components))
        * grid.cell_volume
    )


def _scan_result(pairing: float, rows: list) -> dict:
    errs = [r["rel_err"] for r in rows]
    # a quadratic functional is differentiated exactly by central
    # differences; every scan entry then sits at the rounding floor and a
    # convergence order is not observable (nor needed)
    quadratic_exact = max(errs) < 1e-8
    order = None
    if len(rows) >= 2 and not quadratic_exact:
        e0, e1 = errs[0], errs[1]
        eps0, eps1 = rows[0]["eps"], rows[1]["eps"]
        if e0 > 0 and e1 > 0:
            order = math.log(e0 / e1) / math.log(eps0 / eps1)
    return {
        "pairing": pairing,
        "scan": rows,
        "best_rel_err": min(errs),
        "order_estimate": order,
        "quadratic_exact": quadratic_exact,
    }


def check_conservative(s: State, params: PhysParams, probe: FlowMapProbe) -> dict:
    """Central differences of the entropy functional along the probe
    against the closed-form pairing, over the eps scan."""
    g = s.grid
    forces = conservative_force_closed(s, params)
    pairing = (
        _pair(g, forces.f_p, probe.dJ_p)
        + _pair(g, forces.f_n, probe.dJ_n)
        + _pair(g, forces.f_e, probe.dJ_e)
    )
    e0 = energy_density(s, params)
    div_p = divergence_arrays(g, probe.dJ_p.components)
    div_n = divergence_arrays(g, probe.dJ_n.components)
    div_e = divergence_arrays(g, probe.dJ_e.components)

    def S_at(eps: float) -> float:
        p = ScalarField(g, s.p.values - eps * div_p)
        n = ScalarField(g, s.n.values - eps * div_n)
        e = ScalarField(g, e0.values - eps * div_e)
        return entropy_functional(p, n, e, params)

    rows = []
    for eps in probe.eps_scan:
        fd = (S_at(eps) - S_at(-eps)) / (2.0 * eps)
        rows.append(
            {"eps": eps, "fd": fd, "rel_err": abs(fd - pairing) / max(abs(pairing), 1e-300)}
        )
    return _scan_result(pairing, rows)


def check_dissipative(s: State, params: PhysParams, probe: FlowMapProbe,
                      fl=None) -> dict:
    """Half central differences of the entropy-production functional along
    the probe against the closed-form pairing (linear-response factor
    one-half included)."""
    g = s.grid
    if fl is None:
        fl = constitutive_fluxes(s, params)
    forces = dissipative_force_closed(s, fl, params)
    pairing = (
        _pair(g, forces.f_p, probe.dJ_p)
        + _pair(g, forces.f_n, probe.dJ_n)
        + _pair(g, forces.f_e, probe.dJ_e)
    )
    jp0 = [c for c in fl.j_p.components]
    jn0 = [c for c in fl.j_n.components]
    je0 = [c for c in fl.j_e.components]

    def D_at(eps: float) -> float:
        jp = [jp0[i] + eps * probe.dJ_p.components[i] for i in range(g.dim)]
        jn = [jn0[i] + eps * probe.dJ_n.components[i] for i in range(g.dim)]
        je = [je0[i] + eps * probe.dJ_e.components[i] for i in range(g.dim)]
        return dissipation_functional(s, params, jp, jn, je)

    rows = []
    for eps in probe.eps_scan:
        fd = 0.5 * (D_at(eps) - D_at(-eps)) / (2.0 * eps)
        rows.append(
            {"eps": eps, "fd": fd, "rel_err": abs(fd - pairing) / max(abs(pairing), 1e-300)}
        )
    return _scan_result(pairing, rows)


def varcheck_report(
    s: State,
    params: PhysParams,
    seed: int = 0,
    fd_tol: float = 1e-6,
    balance_tol: float = 1e-8,
    probe_kmax: int = 2,
) -> dict:
    """Run both functional-derivative checks and the force balance on one
    state; the report carries the full eps-scan tables and verdicts."""
    probe = random_probe(s.grid, seed=seed, kmax=probe_kmax)
    con = check_conservative(s, params, probe)
    dis = check_dissipative(s, params, probe)
    balance = force_balance_residual(s, params)
    passed = (
        con["best_rel_err"] <= fd_tol
        and dis["best_rel_err"] <= fd_tol
        and balance <= balance_tol
    )
    return {
        "conservative": con,
        "dissipative": dis,
        "force_balance_residual": balance,
        "thresholds": {"fd_rel_tol": fd_tol, "balance_tol": balance_tol},
        "probe_seed": seed,
        "pass": bool(passed),
    }


def write_report_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
