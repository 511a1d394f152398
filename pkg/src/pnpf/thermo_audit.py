"""
Conserved and monotone functionals along a trajectory, with their
discrete residuals.

On the boundaryless box the ion masses and the total energy are constant
in time, the total entropy S satisfies dS/dt = Delta >= 0 (the integrated
second law: the transport terms are perfect divergences and drop out),
and the linear-response block is symmetric with the Darcy fluxes exactly
reconstructible from it.  Each audit measures how well the *numerical*
trajectory honors the corresponding identity:

* mass/energy drifts are pure time-integration error (the spatial
  semi-discretization conserves both exactly for dealiased states),
* the entropy law is tested by a centered time difference of sampled S
  against the instantaneous entropy production, so the residual shrinks
  quadratically with the sampling interval,
* the reciprocity residual combines the exact coefficient symmetry gap
  with the flux-reconstruction deviation.

Audit rows stream to CSV as they are produced (one-sample lag for the
centered difference) so aborted runs retain their trail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from . import decay
from .dynamics import StepAbort, StepperConfig, convert, integrate
from .fields import (
    PhysParams,
    State,
    constitutive_fluxes,
    energy_density,
    entropy_density,
    entropy_production_density,
    flux_reconstruction_residual,
    onsager_block,
)
from .grid import integrate as quad

DELTA_FLOOR = -1e-14


@dataclass(frozen=True)
class AuditRecord:
    """One audit sample.  dSdt_minus_Delta is the raw centered-difference
    gap (NaN where a neighbor sample is missing); lyapunov is NaN when
    c_p != c_n (the functional's weight needs a common heat capacity)."""

    t: float
    mass_n: float
    mass_p: float
    E: float
    S: float
    Delta: float
    dSdt_minus_Delta: float
    energy_drift_rel: float
    onsager_residual: float
    lyapunov: float

    def __post_init__(self) -> None:
        if self.Delta < DELTA_FLOOR:
            raise ValueError(
                f"entropy production {self.Delta:.3e} below the roundoff floor"
            )
        for f in dataclass_fields(self):
            val = getattr(self, f.name)
            if math.isinf(val):
                raise ValueError(f"AuditRecord.{f.name} is not finite")


CSV_HEADER = ",".join(f.name for f in dataclass_fields(AuditRecord))


def totals(s: State, params: PhysParams):
    """(mass_n, mass_p, E, S, Delta) by exact spectral quadrature."""
    fl = constitutive_fluxes(s, params)
    return (
        quad(s.n),
        quad(s.p),
        quad(energy_density(s, params)),
        quad(entropy_density(s, params)),
        quad(entropy_production_density(fl, s, params)),
    )


def onsager_residual(s: State, params: PhysParams, block=None) -> float:
    """Coefficient-symmetry gap plus Darcy-flux reconstruction residual,
    both relative; zero for an exact block at equilibrium."""
    if block is None:
        block = onsager_block(s, params)
    scale = max(
        np.abs(block.L_ptheta.values).max(),
        np.abs(block.L_thetap.values).max(),
        np.abs(block.L_ntheta.values).max(),
        np.abs(block.L_nn.values).max(),
        1e-300,
    )
    sym = (
        np.abs(block.L_ptheta.values - block.L_thetap.values).max()
        + np.abs(block.L_ntheta.values - block.L_thetan.values).max()
        + np.abs(block.L_pn.values).max()
        + np.abs(block.L_np.values).max()
    ) / scale
    return float(sym + flux_reconstruction_residual(s, params, block))


def clausius_duhem_residual(traj, params: PhysParams) -> np.ndarray:
    """
    For uniformly spaced samples (t_j, State_j): centered-difference dS/dt
    minus Delta at the interior samples, normalized by max(|Delta|, eps).
    Requires at least 3 samples.
    """
    if len(traj) < 3:
        raise ValueError("clausius_duhem_residual needs at least 3 samples")
    ts = np.array([t for t, _ in traj])
    dts = np.diff(ts)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=1e-12):
        raise ValueError("trajectory samples must be uniformly spaced")
    S = np.empty(len(traj))
    D = np.empty(len(traj))
    for j, (_, s) in enumerate(traj):
        S[j] = quad(entropy_density(s, params))
        D[j] = quad(entropy_production_density(constitutive_fluxes(s, params), s, params))
    dt = dts[0]
    dSdt = (S[2:] - S[:-2]) / (2.0 * dt)
    denom = max(float(np.abs(D).max()), np.finfo(float).eps)
    return (dSdt - D[1:-1]) / denom


def energy_conservation_residual(traj, params: PhysParams) -> np.ndarray:
    """|E(t) - E(0)| / |E(0)| at every sample."""
    E = np.array([quad(energy_density(s, params)) for _, s in traj])
    return np.abs(E - E[0]) / abs(E[0])


class AuditWriter:
    """
    Streams AuditRecord rows to a CSV file with full float64 round-trip
    precision (17 significant digits).  Rows are written with a one-sample
    lag so the centered entropy difference can be filled in; close()
    flushes the final row (its residual is NaN, like the first row's).
    """

    def __init__(self, path, params: PhysParams):
        self._fh = open(path, "w")
        self._fh.write(CSV_HEADER + "\n")
        self._params = params
        self._pending: dict | None = None  # newest row, awaiting its successor
        self._prev_S: float | None = None  # S of the last written row
        self._E0 = None
        self.records: list[AuditRecord] = []

    def observe(self, t: float, s: State) -> None:
        params = self._params
        mass_n, mass_p, E, S, Delta = totals(s, params)
        if self._E0 is None:
            self._E0 = E
        lam = math.nan
        if params.c_p == params.c_n:
            lam = decay.lyapunov(convert(s), params)
        row = {
            "t": t,
            "mass_n": mass_n,
            "mass_p": mass_p,
            "E": E,
            "S": S,
            "Delta": Delta,
            "dSdt_minus_Delta": math.nan,
            "energy_drift_rel": abs(E - self._E0) / abs(self._E0),
            "onsager_residual": onsager_residual(s, params),
            "lyapunov": lam,
        }
        if self._pending is not None:
            if self._prev_S is not None:
                dt = row["t"] - self._pending["t"]
                self._pending["dSdt_minus_Delta"] = (
                    (S - self._prev_S) / (2.0 * dt) - self._pending["Delta"]
                )
            self._prev_S = self._pending["S"]
            self._write(self._pending)
        self._pending = row

    def _write(self, row: dict) -> None:
        rec = AuditRecord(**row)
        self.records.append(rec)
        self._fh.write(
            ",".join(f"{getattr(rec, f.name):.17g}" for f in dataclass_fields(AuditRecord))
            + "\n"
        )
        self._fh.flush()

    def close(self) -> None:
        if self._pending is not None:
            self._write(self._pending)
            self._pending = None
        self._fh.close()


def audit_run(
    state: State,
    cfg: StepperConfig,
    params: PhysParams,
    csv_path,
    audit_every: int = 10,
    n_steps: int | None = None,
):
    """Integrate with audits every audit_every steps, streaming rows to
    csv_path.  Returns (final_state, records, aborted_reason, steps_done)."""
    writer = AuditWriter(csv_path, params)
    final = state
    reason = None
    steps_done = 0
    try:
        for i, t, s in integrate(state, cfg, params, n_steps):
            final = s
            steps_done = i
            if i % audit_every == 0:
                writer.observe(t, s)
    except StepAbort as exc:
        reason = str(exc)
    finally:
        writer.close()
    return final, writer.records, reason, steps_done
