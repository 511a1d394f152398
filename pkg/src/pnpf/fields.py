"""
State containers and pointwise constitutive quantities.

Charge transport follows Darcy-law ion fluxes and heat follows Fourier's
law; the energy flux collects internal-energy transport, pressure work,
electrostatic transport and the nonlocal electrostatic exchange term.
This module also exposes the linear-response (Onsager) coefficient block
relating fluxes to gradients of mu/theta and 1/theta, with the reciprocal
symmetries built in, plus the reconstruction residual the audits use.

All ion-flux arrays are assembled in expanded form

    j_p = -D_p (theta*grad p + p*grad theta + p*grad phi)

with every spectral derivative acting on a primitive field and all
products pointwise; the time stepper uses the identical arrays, which is
what makes the discrete energy audit an identity rather than an
approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import poisson
from .grid import GridSpec, ScalarField, VectorField, grad_arrays, divergence_arrays

POSITIVITY_FLOOR = 1e-8


class PositivityError(ValueError):
    """A density or temperature dropped below the positivity floor."""


@dataclass(frozen=True)
class PhysParams:
    """
    Physical coefficients: heat capacities c_p, c_n (> 0), ion mobilities
    D_p, D_n (> 0), heat conduction rate k (> 0), dielectric coefficient
    eps (> 0, fixed 1 by default and unused by the final system).
    """

    c_p: float = 1.5
    c_n: float = 1.5
    D_p: float = 1.0
    D_n: float = 1.0
    k: float = 1.0
    eps: float = 1.0

    def __post_init__(self) -> None:
        for name in ("c_p", "c_n", "D_p", "D_n", "k", "eps"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"PhysParams.{name} must be > 0")

    @property
    def c(self) -> float:
        """Common heat capacity; requires c_p == c_n (decay experiments
        additionally need c > 1)."""
        if self.c_p != self.c_n:
            raise ValueError("c is only defined when c_p == c_n")
        return self.c_p


def _check_positive(name: str, values: np.ndarray, floor: float = POSITIVITY_FLOOR):
    m = float(values.min())
    if m < floor:
        raise PositivityError(f"min({name}) = {m:.3e} below floor {floor:.0e}")


@dataclass(frozen=True)
class State:
    """
    Primitive fields (n, p, theta, phi) on one grid.

    Invariants: n, p, theta above the positivity floor; mean(n - p) = 0
    (neutrality); phi is the zero-mean solution of Delta(phi) = n - p.
    """

    n: ScalarField
    p: ScalarField
    theta: ScalarField
    phi: ScalarField

    def __post_init__(self) -> None:
        g = self.grid
        for f in (self.p, self.theta, self.phi):
            if f.grid is not g and f.grid != g:
                raise ValueError("all State fields must share one grid")
        _check_positive("n", self.n.values)
        _check_positive("p", self.p.values)
        _check_positive("theta", self.theta.values)

    @property
    def grid(self) -> GridSpec:
        return self.n.grid

    @classmethod
    def from_primitives(cls, n: ScalarField, p: ScalarField, theta: ScalarField) -> "State":
        """Build a State, solving the Poisson equation for phi.

        Raises NonNeutralSource if mean(n - p) exceeds tolerance and
        PositivityError below the floor; never repairs the input.
        """
        _check_positive("n", n.values)
        _check_positive("p", p.values)
        _check_positive("theta", theta.values)
        rho = ScalarField(n.grid, n.values - p.values)
        sol = poisson.solve(rho)
        return cls(n, p, theta, sol.phi)

    @classmethod
    def equilibrium(cls, grid: GridSpec) -> "State":
        one = ScalarField.constant(grid, 1.0)
        return cls(one, one, ScalarField.constant(grid, 1.0), ScalarField.constant(grid, 0.0))


@dataclass(frozen=True)
class FluxSet:
    """Constitutive fluxes and velocities of one State.

    q = -k*grad(theta) by construction; j_e additionally carries the
    electrostatic exchange term built from phi_t, the potential rate
    obtained by solving Delta(phi_t) = div(j_p - j_n).
    """

    j_p: VectorField
    j_n: VectorField
    q: VectorField
    j_e: VectorField
    v_p: VectorField
    v_n: VectorField
    phi_t: ScalarField


def constitutive_fluxes(s: State, params: PhysParams) -> FluxSet:
    """
    Darcy ion fluxes, Fourier heat flux, and the total energy flux.

        j_p = -D_p [grad(p theta) + p grad(phi)]
        j_n = -D_n [grad(n theta) - n grad(phi)]
        q   = -k grad(theta)
        j_e = [(c_p+1) theta + phi] j_p + [(c_n+1) theta - phi] j_n
              + (phi_t grad(phi) - phi grad(phi_t))/2 + q
    """
    g = s.grid
    n, p, th, phi = s.n.values, s.p.values, s.theta.values, s.phi.values
    gn = grad_arrays(g, n)
    gp = grad_arrays(g, p)
    gth = grad_arrays(g, th)
    gphi = grad_arrays(g, phi)

    j_p = [-params.D_p * (th * gp[i] + p * gth[i] + p * gphi[i]) for i in range(g.dim)]
    j_n = [-params.D_n * (th * gn[i] + n * gth[i] - n * gphi[i]) for i in range(g.dim)]
    q = [-params.k * gth[i] for i in range(g.dim)]

    phi_t = poisson.solve_array(
        g, divergence_arrays(g, [j_p[i] - j_n[i] for i in range(g.dim)])
    )
    gphi_t = grad_arrays(g, phi_t)

    a = (params.c_p + 1.0) * th + phi
    b = (params.c_n + 1.0) * th - phi
    j_e = [
        a * j_p[i] + b * j_n[i] + 0.5 * (phi_t * gphi[i] - phi * gphi_t[i]) + q[i]
        for i in range(g.dim)
    ]

    return FluxSet(
        j_p=VectorField(g, tuple(j_p)),
        j_n=VectorField(g, tuple(j_n)),
        q=VectorField(g, tuple(q)),
        j_e=VectorField(g, tuple(j_e)),
        v_p=VectorField(g, tuple(j_p[i] / p for i in range(g.dim))),
        v_n=VectorField(g, tuple(j_n[i] / n for i in range(g.dim))),
        phi_t=ScalarField(g, phi_t),
    )


def energy_density(s: State, params: PhysParams) -> ScalarField:
    """e = (c_p p + c_n n) theta + ((p - n)/2) phi."""
    e = (params.c_p * s.p.values + params.c_n * s.n.values) * s.theta.values
    e = e + 0.5 * (s.p.values - s.n.values) * s.phi.values
    return ScalarField(s.grid, e)


def entropy_density(s: State, params: PhysParams) -> ScalarField:
    """eta = -p (log p - c_p log theta) - n (log n - c_n log theta)."""
    logth = np.log(s.theta.values)
    eta = -s.p.values * (np.log(s.p.values) - params.c_p * logth)
    eta -= s.n.values * (np.log(s.n.values) - params.c_n * logth)
    return ScalarField(s.grid, eta)


def entropy_production_density(fl: FluxSet, s: State, params: PhysParams) -> ScalarField:
    """
    Pointwise entropy production rate, a weighted sum of squares:

        |j_p|^2/(D_p p theta) + |j_n|^2/(D_n n theta) + |q/theta|^2/k.

    Nonnegative by construction for every admissible state and flux set.
    """
    th = s.theta.values
    jp2 = sum(c**2 for c in fl.j_p.components)
    jn2 = sum(c**2 for c in fl.j_n.components)
    q2 = sum(c**2 for c in fl.q.components)
    out = jp2 / (params.D_p * s.p.values * th)
    out += jn2 / (params.D_n * s.n.values * th)
    out += q2 / (params.k * th**2)
    return ScalarField(s.grid, out)


@dataclass(frozen=True)
class OnsagerBlock:
    """
    Pointwise linear-response coefficients and chemical potentials.

    The reciprocal symmetries are structural: L_ptheta and L_thetap hold
    the same array (one expression evaluated once), likewise L_ntheta and
    L_thetan; the cross block L_pn = L_np is identically zero.
    """

    L_pp: ScalarField
    L_pn: ScalarField
    L_np: ScalarField
    L_nn: ScalarField
    L_ptheta: ScalarField
    L_thetap: ScalarField
    L_ntheta: ScalarField
    L_thetan: ScalarField
    L_thetatheta: ScalarField
    mu_p: ScalarField
    mu_n: ScalarField


def onsager_block(s: State, params: PhysParams) -> OnsagerBlock:
    """
    Coefficients of the flux form

        j_p  = -L_pp grad(mu_p/theta) - L_pn grad(mu_n/theta) + L_ptheta grad(1/theta)

    and its n/e rows.  The paper-level coefficients are

        L_pp = D_p p theta,   L_ptheta = L_thetap = D_p p theta [(c_p+1) theta + phi],
        L_nn = D_n n theta,   L_ntheta = L_thetan = D_n n theta [(c_n+1) theta - phi],
        L_pn = L_np = 0,

    and L_thetatheta is derived so the energy-flux reconstruction is exact
    given the others:

        L_thetatheta = D_p p theta [(c_p+1) theta + phi]^2
                     + D_n n theta [(c_n+1) theta - phi]^2 + k theta^2.

    Chemical potentials: mu_p = theta (log p - c_p log theta) + phi and
    mu_n = theta (log n - c_n log theta) - phi.
    """
    g = s.grid
    n, p, th, phi = s.n.values, s.p.values, s.theta.values, s.phi.values
    L_pp = params.D_p * p * th
    L_nn = params.D_n * n * th
    a = (params.c_p + 1.0) * th + phi
    b = (params.c_n + 1.0) * th - phi
    L_pth = L_pp * a
    L_nth = L_nn * b
    L_thth = L_pp * a**2 + L_nn * b**2 + params.k * th**2
    zero = np.zeros(g.shape)
    logth = np.log(th)
    mu_p = th * (np.log(p) - params.c_p * logth) + phi
    mu_n = th * (np.log(n) - params.c_n * logth) - phi

    f = lambda v: ScalarField(g, v)
    return OnsagerBlock(
        L_pp=f(L_pp), L_pn=f(zero), L_np=f(zero), L_nn=f(L_nn),
        L_ptheta=f(L_pth), L_thetap=f(L_pth),
        L_ntheta=f(L_nth), L_thetan=f(L_nth),
        L_thetatheta=f(L_thth), mu_p=f(mu_p), mu_n=f(mu_n),
    )


def reconstruct_fluxes(
    s: State, params: PhysParams, block: OnsagerBlock | None = None
) -> tuple[VectorField, VectorField, VectorField]:
    """
    Rebuild (j_p, j_n, j_e) from the coefficient block and the gradients of
    mu/theta and 1/theta (quotients pointwise, then spectral gradients).
    j_e additionally restores the electrostatic exchange term, which is not
    expressible through the local coefficient block.
    """
    g = s.grid
    if block is None:
        block = onsager_block(s, params)
    th = s.theta.values
    gmp = grad_arrays(g, block.mu_p.values / th)
    gmn = grad_arrays(g, block.mu_n.values / th)
    ginv = grad_arrays(g, 1.0 / th)

    fl = constitutive_fluxes(s, params)
    phi_t, phi = fl.phi_t.values, s.phi.values
    gphi = grad_arrays(g, phi)
    gphi_t = grad_arrays(g, phi_t)

    j_p = [
        -block.L_pp.values * gmp[i] - block.L_pn.values * gmn[i]
        + block.L_ptheta.values * ginv[i]
        for i in range(g.dim)
    ]
    j_n = [
        -block.L_np.values * gmp[i] - block.L_nn.values * gmn[i]
        + block.L_ntheta.values * ginv[i]
        for i in range(g.dim)
    ]
    j_e = [
        -block.L_thetap.values * gmp[i] - block.L_thetan.values * gmn[i]
        + block.L_thetatheta.values * ginv[i]
        + 0.5 * (phi_t * gphi[i] - phi * gphi_t[i])
        for i in range(g.dim)
    ]
    return (
        VectorField(g, tuple(j_p)),
        VectorField(g, tuple(j_n)),
        VectorField(g, tuple(j_e)),
    )


def flux_reconstruction_residual(
    s: State, params: PhysParams, block: OnsagerBlock | None = None
) -> float:
    """
    Max absolute deviation between the Darcy fluxes and their
    linear-response reconstruction (j_p plus j_n), normalized by the
    largest flux magnitude; returns 0 when all fluxes vanish.
    """
    fl = constitutive_fluxes(s, params)
    j_p_rec, j_n_rec, _ = reconstruct_fluxes(s, params, block)
    dev = 0.0
    scale = 0.0
    for rec, ref in ((j_p_rec, fl.j_p), (j_n_rec, fl.j_n)):
        for cr, cf in zip(rec.components, ref.components):
            dev = max(dev, float(np.abs(cr - cf).max()))
            scale = max(scale, float(np.abs(cf).max()))
    if scale == 0.0:
        return 0.0
    return dev / scale
