"""
Right-hand sides of the coupled charge/temperature system in both the
primitive (n, p, theta) and perturbation (u_tilde, v, theta_tilde)
formulations, plus RK4 and first-order IMEX time stepping.

Discretization choices that the audits rely on:

* the two continuity equations are discretized in divergence form with a
  spectral outer divergence, so the means of dn and dp vanish exactly and
  ion masses are conserved structurally;
* the temperature equation is evaluated pointwise with every spectral
  derivative acting directly on a primitive field (derivatives of
  composite products are expanded by exact calculus identities before
  discretization); for 2/3-dealiased states this makes the semi-discrete
  total energy exactly conserved and makes the two formulations agree to
  rounding;
* the electric potential is never integrated: each right-hand-side
  evaluation re-solves Delta(phi) = n - p (equivalently Delta(phi) = v),
  so phi stays slaved to the charge density at every substage.

Sign convention, fixed once: with v = n - p the potential satisfies
Delta(phi) = v, which is the choice that makes
<laplacian(v) - 2v, phi> = ||v||^2 + 2||grad phi||^2 (unit-tested).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import poisson
from .fields import PhysParams, State
from .grid import GridSpec, ScalarField

_RK4_REAL_AXIS = 2.785  # |lambda| dt limit on the negative real axis


class StepAbort(RuntimeError):
    """Integration aborted: positivity floor breached or non-finite values."""


@dataclass(frozen=True)
class PerturbationState:
    """
    Deviation variables u_tilde = n + p - 2, v = n - p,
    theta_tilde = theta - 1, with phi the zero-mean solution of
    Delta(phi) = v.

    Invariants: mean(v) = 0; 2 + u_tilde and 1 + theta_tilde positive.
    """

    u_tilde: ScalarField
    v: ScalarField
    theta_tilde: ScalarField
    phi: ScalarField

    def __post_init__(self) -> None:
        if abs(float(self.v.values.mean())) > poisson.NEUTRALITY_TOL:
            raise poisson.NonNeutralSource("mean(v) must vanish")
        if float(self.u_tilde.values.min()) <= -2.0:
            raise ValueError("2 + u_tilde must stay positive")
        if float(self.theta_tilde.values.min()) <= -1.0:
            raise ValueError("1 + theta_tilde must stay positive")

    @property
    def grid(self) -> GridSpec:
        return self.v.grid

    @classmethod
    def from_fields(
        cls, u_tilde: ScalarField, v: ScalarField, theta_tilde: ScalarField
    ) -> "PerturbationState":
        phi = poisson.solve(v).phi
        return cls(u_tilde, v, theta_tilde, phi)

    @classmethod
    def zero(cls, grid: GridSpec) -> "PerturbationState":
        z = ScalarField.constant(grid, 0.0)
        return cls(z, z, z, z)


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "RK4"
    dt: float = 1e-3
    t_end: float = 1.0
    dealias: bool = True
    positivity_floor: float = 1e-8

    def __post_init__(self) -> None:
        if self.scheme not in ("RK4", "IMEX1"):
            raise ValueError(f"scheme must be RK4 or IMEX1, got {self.scheme!r}")
        if not (self.dt > 0 and self.t_end > 0):
            raise ValueError("dt and t_end must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


def convert(s: State) -> PerturbationState:
    """(n, p, theta, phi) -> (u_tilde, v, theta_tilde, phi), exact arithmetic."""
    g = s.grid
    return PerturbationState(
        ScalarField(g, s.n.values + s.p.values - 2.0),
        ScalarField(g, s.n.values - s.p.values),
        ScalarField(g, s.theta.values - 1.0),
        s.phi,
    )


def convert_back(ps: PerturbationState) -> State:
    """Exact inverse of convert."""
    g = ps.grid
    ut, v = ps.u_tilde.values, ps.v.values
    return State(
        ScalarField(g, 1.0 + 0.5 * (ut + v)),
        ScalarField(g, 1.0 + 0.5 * (ut - v)),
        ScalarField(g, 1.0 + ps.theta_tilde.values),
        ps.phi,
    )


# -- raw-array right-hand sides ----------------------------------------------


def _rhs_primitive_arrays(grid: GridSpec, n, p, th, params: PhysParams, dealias=True):
    """(dn, dp, dtheta) raw arrays; see the module docstring for the scheme."""
    d = grid.dim
    spec3 = grid.fft(np.stack([n, p, th]))
    nh, ph, thh = spec3[0], spec3[1], spec3[2]
    phih = -grid.inv_k2 * (nh - ph)

    # one batched inverse transform: gradients of n, p, theta, phi and the
    # three Laplacians
    stack = [m * nh for m in grid.grad_mult]
    stack += [m * ph for m in grid.grad_mult]
    stack += [m * thh for m in grid.grad_mult]
    stack += [m * phih for m in grid.grad_mult]
    stack += [-grid.k2 * nh, -grid.k2 * ph, -grid.k2 * thh]
    out = grid.ifft(np.stack(stack))
    gn, gp, gth, gphi = out[0:d], out[d : 2 * d], out[2 * d : 3 * d], out[3 * d : 4 * d]
    lap_n, lap_p, lap_th = out[4 * d], out[4 * d + 1], out[4 * d + 2]

    Dp, Dn, kh = params.D_p, params.D_n, params.k
    rho = n - p  # equals Delta(phi) exactly for the slaved potential
    j_p = [-Dp * (th * gp[i] + p * gth[i] + p * gphi[i]) for i in range(d)]
    j_n = [-Dn * (th * gn[i] + n * gth[i] - n * gphi[i]) for i in range(d)]

    # div(j) expanded with derivatives on primitive fields only
    gp_gth = sum(gp[i] * gth[i] for i in range(d))
    gn_gth = sum(gn[i] * gth[i] for i in range(d))
    gp_gphi = sum(gp[i] * gphi[i] for i in range(d))
    gn_gphi = sum(gn[i] * gphi[i] for i in range(d))
    div_jp = -Dp * (p * lap_th + 2.0 * gp_gth + th * lap_p + gp_gphi + p * rho)
    div_jn = -Dn * (n * lap_th + 2.0 * gn_gth + th * lap_n - gn_gphi - n * rho)

    jp2 = sum(c**2 for c in j_p)
    jn2 = sum(c**2 for c in j_n)
    jp_gp = sum(j_p[i] * gp[i] for i in range(d))
    jn_gn = sum(j_n[i] * gn[i] for i in range(d))
    jheat_gth = sum((params.c_p * j_p[i] + params.c_n * j_n[i]) * gth[i] for i in range(d))

    heat = kh * lap_th + jp2 / (Dp * p) + jn2 / (Dn * n)
    heat -= th * div_jp - (th / p) * jp_gp
    heat -= th * div_jn - (th / n) * jn_gn
    heat -= jheat_gth
    dth = heat / (params.c_p * p + params.c_n * n)

    # continuity equations in divergence form (spectral outer divergence)
    spec_j = grid.fft(np.stack(j_p + j_n + [dth]))
    dp_hat = -sum(grid.grad_mult[i] * spec_j[i] for i in range(d))
    dn_hat = -sum(grid.grad_mult[i] * spec_j[d + i] for i in range(d))
    dth_hat = spec_j[2 * d]
    if dealias:
        mask = grid.dealias_mask
        dn_hat, dp_hat, dth_hat = mask * dn_hat, mask * dp_hat, mask * dth_hat
    res = grid.ifft(np.stack([dn_hat, dp_hat, dth_hat]))
    return res[0], res[1], res[2]


def _rhs_perturbation_arrays(grid: GridSpec, ut, v, tt, params: PhysParams, dealias=True):
    """(du_tilde, dv, dtheta_tilde) raw arrays, literal perturbation system."""
    c = params.c
    d = grid.dim
    spec3 = grid.fft(np.stack([ut, v, tt]))
    uth, vh, tth = spec3[0], spec3[1], spec3[2]
    phih = -grid.inv_k2 * vh

    stack = [m * uth for m in grid.grad_mult]
    stack += [m * vh for m in grid.grad_mult]
    stack += [m * tth for m in grid.grad_mult]
    stack += [m * phih for m in grid.grad_mult]
    stack += [-grid.k2 * uth, -grid.k2 * vh, -grid.k2 * tth]
    out = grid.ifft(np.stack(stack))
    gu, gv, gt, gphi = out[0:d], out[d : 2 * d], out[2 * d : 3 * d], out[3 * d : 4 * d]
    lap_u, lap_v, lap_t = out[4 * d], out[4 * d + 1], out[4 * d + 2]

    gt_gu = sum(gt[i] * gu[i] for i in range(d))
    gt_gv = sum(gt[i] * gv[i] for i in range(d))
    gv_gphi = sum(gv[i] * gphi[i] for i in range(d))
    gu_gphi = sum(gu[i] * gphi[i] for i in range(d))
    gt_gphi = sum(gt[i] * gphi[i] for i in range(d))
    gt2 = sum(gt[i] ** 2 for i in range(d))
    gphi2 = sum(gphi[i] ** 2 for i in range(d))

    du = lap_u + 2.0 * lap_t + tt * lap_u + ut * lap_t + 2.0 * gt_gu - gv_gphi - v * v
    dv = lap_v - 2.0 * v + tt * lap_v + v * lap_t + 2.0 * gt_gv - gu_gphi - ut * v

    w = 2.0 + ut
    dtt = 1.5 * lap_t + 0.5 * lap_u + tt * lap_t
    dtt -= (ut / (2.0 * w)) * lap_t
    dtt += ((2.0 * tt * tt + 4.0 * tt - ut) / (2.0 * w)) * lap_u
    dtt += (c + 1.0) * gt2
    dtt += (c + 3.0) * ((1.0 + tt) / w) * gt_gu
    dtt -= 2.0 * ((1.0 + tt) / w) * gv_gphi
    dtt -= (c + 2.0) * (v / w) * gt_gphi
    dtt -= (1.0 + tt) * v * v / w
    dtt += gphi2
    dtt /= c

    if dealias:
        spec = grid.dealias_mask * grid.fft(np.stack([du, dv, dtt]))
        res = grid.ifft(spec)
        return res[0], res[1], res[2]
    return du, dv, dtt


def _require_perturbation_params(params: PhysParams) -> None:
    if params.c_p != params.c_n or not (params.c_p > 1):
        raise ValueError("perturbation form needs c_p == c_n == c > 1")
    if params.D_p != 1.0 or params.D_n != 1.0 or params.k != 1.0:
        raise ValueError("perturbation form is stated for D_p = D_n = k = 1")


def rhs_primitive(s: State, params: PhysParams, dealias: bool = True):
    """Time derivatives (dn, dp, dtheta) of the primitive system."""
    dn, dp, dth = _rhs_primitive_arrays(
        s.grid, s.n.values, s.p.values, s.theta.values, params, dealias
    )
    g = s.grid
    return ScalarField(g, dn), ScalarField(g, dp), ScalarField(g, dth)


def rhs_perturbation(ps: PerturbationState, params: PhysParams, dealias: bool = True):
    """Time derivatives (du_tilde, dv, dtheta_tilde) of the reformulated
    system (requires c_p == c_n > 1 and unit mobilities/conduction)."""
    _require_perturbation_params(params)
    du, dv, dtt = _rhs_perturbation_arrays(
        ps.grid, ps.u_tilde.values, ps.v.values, ps.theta_tilde.values, params, dealias
    )
    g = ps.grid
    return ScalarField(g, du), ScalarField(g, dv), ScalarField(g, dtt)


# -- stability estimate -------------------------------------------------------


def _linear_rate_factor(params: PhysParams, primitive: bool) -> float:
    """Spectral radius of the constant-coefficient diffusion block at
    |k|^2 = 1 (the implicit block of the IMEX scheme)."""
    if primitive:
        cs = params.c_p + params.c_n
        m = np.array(
            [
                [params.D_n, 0.0, params.D_n],
                [0.0, params.D_p, params.D_p],
                [params.D_n / cs, params.D_p / cs, (params.k + params.D_p + params.D_n) / cs],
            ]
        )
    else:
        c = params.c_p
        m = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [1.0 / (2 * c), 0.0, 3.0 / (2 * c)]])
    return float(np.abs(np.linalg.eigvals(m)).max())


def stability_bound(
    grid: GridSpec,
    params: PhysParams,
    scheme: str,
    theta_max: float = 1.1,
    deviation: float = 0.1,
    primitive: bool = True,
) -> float:
    """
    Estimated maximal stable dt.

    RK4: the stiffest retained mode has |k|^2 = dim*(2*pi*floor(N/3)/L)^2;
    the rate is theta_max * |k|^2 * rho with rho the linear block's
    spectral radius, and dt_max = 2.785/rate.  IMEX1 treats that block
    implicitly, so only the variable-coefficient remainder (size ~
    `deviation`) limits the step, plus the order-one screening term.
    """
    m_cut = grid.n // 3
    k2max = grid.dim * (2.0 * math.pi * m_cut / grid.length) ** 2
    rho = _linear_rate_factor(params, primitive)
    if scheme == "RK4":
        return _RK4_REAL_AXIS / (theta_max * k2max * rho)
    if scheme == "IMEX1":
        return 1.0 / (max(deviation, 1e-6) * k2max * rho + 2.0)
    raise ValueError(f"unknown scheme {scheme!r}")


# -- steppers -----------------------------------------------------------------


def _check_stage(names, arrays, floor, shifts):
    for name, arr, shift in zip(names, arrays, shifts):
        low = float(arr.min()) + shift
        if not np.all(np.isfinite(arr)):
            raise StepAbort(f"non-finite values in {name}")
        if low < floor:
            raise StepAbort(
                f"positivity floor breached: min({name}) = {low:.3e} < {floor:.0e}"
            )


def _rk4(ys, rhs, dt, check):
    k1 = rhs(ys)
    y2 = [y + 0.5 * dt * k for y, k in zip(ys, k1)]
    check(y2)
    k2 = rhs(y2)
    y3 = [y + 0.5 * dt * k for y, k in zip(ys, k2)]
    check(y3)
    k3 = rhs(y3)
    y4 = [y + dt * k for y, k in zip(ys, k3)]
    check(y4)
    k4 = rhs(y4)
    out = [
        y + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        for y, a, b, c, d in zip(ys, k1, k2, k3, k4)
    ]
    check(out)
    return out


def step(state, cfg: StepperConfig, params: PhysParams):
    """
    Advance one time step; returns the same type it receives (State or
    PerturbationState).  Any substage that breaches the positivity floor
    or produces non-finite values raises StepAbort; nothing is clamped.
    """
    if isinstance(state, State):
        return _step_primitive(state, cfg, params)
    if isinstance(state, PerturbationState):
        return _step_perturbation(state, cfg, params)
    raise TypeError(f"cannot step object of type {type(state).__name__}")


def _step_primitive(s: State, cfg: StepperConfig, params: PhysParams) -> State:
    g = s.grid
    names = ("n", "p", "theta")
    shifts = (0.0, 0.0, 0.0)
    check = lambda ys: _check_stage(names, ys, cfg.positivity_floor, shifts)
    rhs = lambda ys: _rhs_primitive_arrays(g, ys[0], ys[1], ys[2], params, cfg.dealias)
    ys = [s.n.values, s.p.values, s.theta.values]
    check(ys)
    if cfg.scheme == "RK4":
        out = _rk4(ys, rhs, cfg.dt, check)
    else:
        out = _imex1_primitive(g, ys, cfg, params, rhs)
        check(out)
    n, p, th = (ScalarField(g, a) for a in out)
    return State.from_primitives(n, p, th)


def _step_perturbation(
    ps: PerturbationState, cfg: StepperConfig, params: PhysParams
) -> PerturbationState:
    _require_perturbation_params(params)
    g = ps.grid
    names = ("2 + u_tilde", "v", "1 + theta_tilde")
    shifts = (2.0, math.inf, 1.0)  # v is unconstrained

    def check(ys):
        for name, arr, shift in zip(names, ys, shifts):
            if not np.all(np.isfinite(arr)):
                raise StepAbort(f"non-finite values in {name}")
            if shift != math.inf and float(arr.min()) + shift < cfg.positivity_floor:
                raise StepAbort(
                    f"positivity floor breached in {name}: "
                    f"{float(arr.min()) + shift:.3e} < {cfg.positivity_floor:.0e}"
                )

    rhs = lambda ys: _rhs_perturbation_arrays(g, ys[0], ys[1], ys[2], params, cfg.dealias)
    ys = [ps.u_tilde.values, ps.v.values, ps.theta_tilde.values]
    check(ys)
    if cfg.scheme == "RK4":
        out = _rk4(ys, rhs, cfg.dt, check)
    else:
        out = _imex1_perturbation(g, ys, cfg, params, rhs)
        check(out)
    ut, v, tt = (ScalarField(g, a) for a in out)
    return PerturbationState.from_fields(ut, v, tt)


def _imex1_perturbation(grid, ys, cfg, params, rhs):
    """Backward Euler on the constant-coefficient Laplacian block
    (coupling u_tilde and theta_tilde, v decoupled), explicit remainder."""
    c = params.c_p
    dt, k2 = cfg.dt, grid.k2
    full = rhs(ys)
    spec_y = grid.fft(np.stack(ys))
    uh, vh, th = spec_y[0], spec_y[1], spec_y[2]
    # linear block applied to the current state
    lin_u = -k2 * (uh + 2.0 * th)
    lin_v = -k2 * vh
    lin_t = -(k2 / (2.0 * c)) * (uh + 3.0 * th)
    spec_f = grid.fft(np.stack(full))
    bu = uh + dt * (spec_f[0] - lin_u)
    bv = vh + dt * (spec_f[1] - lin_v)
    bt = th + dt * (spec_f[2] - lin_t)

    a = dt * k2
    new_v = bv / (1.0 + a)
    a11 = 1.0 + a
    a12 = 2.0 * a
    a21 = a / (2.0 * c)
    a22 = 1.0 + 3.0 * a / (2.0 * c)
    det = a11 * a22 - a12 * a21
    new_u = (a22 * bu - a12 * bt) / det
    new_t = (a11 * bt - a21 * bu) / det
    if cfg.dealias:
        mask = grid.dealias_mask
        new_u, new_v, new_t = mask * new_u, mask * new_v, mask * new_t
    out = grid.ifft(np.stack([new_u, new_v, new_t]))
    return [out[0], out[1], out[2]]


def _imex1_primitive(grid, ys, cfg, params, rhs):
    """Backward Euler on the equilibrium-linearized diffusion block of the
    primitive system, explicit remainder."""
    dt, k2 = cfg.dt, grid.k2
    cs = params.c_p + params.c_n
    kh = (params.k + params.D_p + params.D_n) / cs
    full = rhs(ys)
    spec_y = grid.fft(np.stack(ys))
    nh, ph, th = spec_y[0], spec_y[1], spec_y[2]
    lin_n = -k2 * params.D_n * (nh + th)
    lin_p = -k2 * params.D_p * (ph + th)
    lin_t = -k2 * (params.D_n * nh + params.D_p * ph) / cs - k2 * kh * th
    spec_f = grid.fft(np.stack(full))
    bn = nh + dt * (spec_f[0] - lin_n)
    bp = ph + dt * (spec_f[1] - lin_p)
    bt = th + dt * (spec_f[2] - lin_t)

    an = dt * k2 * params.D_n
    ap = dt * k2 * params.D_p
    g = dt * k2 / cs
    # eliminate n and p rows, solve for theta, back substitute
    denom = 1.0 + dt * k2 * kh - g * params.D_n * an / (1.0 + an) - g * params.D_p * ap / (1.0 + ap)
    rhs_t = bt - g * params.D_n * bn / (1.0 + an) - g * params.D_p * bp / (1.0 + ap)
    new_t = rhs_t / denom
    new_n = (bn - an * new_t) / (1.0 + an)
    new_p = (bp - ap * new_t) / (1.0 + ap)
    if cfg.dealias:
        mask = grid.dealias_mask
        # the k = 0 mode is untouched by the mask's True entry there
        new_n, new_p, new_t = mask * new_n, mask * new_p, mask * new_t
    out = grid.ifft(np.stack([new_n, new_p, new_t]))
    return [out[0], out[1], out[2]]


def integrate(state, cfg: StepperConfig, params: PhysParams, n_steps: int | None = None):
    """
    Generator driving `step`: yields (index, t, state) with index 0 being
    the initial state.  A StepAbort propagates to the caller after the
    already-yielded prefix (partial trajectories keep their audit trail).
    """
    total = cfg.n_steps if n_steps is None else n_steps
    t = 0.0
    yield 0, t, state
    for i in range(1, total + 1):
        state = step(state, cfg, params)
        t = i * cfg.dt
        yield i, t, state
