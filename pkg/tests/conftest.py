"""Shared fixtures and field builders for the test suite.

Random fields are generated with the counter-based Philox generator so
every test is reproducible from its integer seed.  Band-limited means:
no spectral content outside mode indices |m_i| <= kmax on any axis, so
products of two such fields are alias-free under the 2/3 rule whenever
kmax <= N/3.
"""

import numpy as np
import pytest

from pnpf.grid import GridSpec, ScalarField
from pnpf.fields import PhysParams, State
from pnpf.dynamics import PerturbationState


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def band_limited(grid: GridSpec, seed: int, kmax: int = 2, amplitude: float = 1.0,
                 zero_mean: bool = True) -> np.ndarray:
    """Random real field with modes confined to |m_i| <= kmax, scaled to
    the requested max-abs amplitude."""
    gen = rng(seed)
    white = gen.standard_normal(grid.shape)
    spec = grid.fft(white)
    mask = np.ones(grid.spectral_shape, dtype=bool)
    for ax in range(grid.dim):
        n = grid.n
        m1 = np.fft.rfftfreq(n) * n if ax == grid.dim - 1 else np.fft.fftfreq(n) * n
        shape = [1] * grid.dim
        shape[ax] = m1.size
        mask &= np.abs(m1.reshape(shape)) <= kmax
    spec = np.where(mask, spec, 0.0)
    if zero_mean:
        spec[(0,) * grid.dim] = 0.0
    vals = grid.ifft(spec)
    peak = np.abs(vals).max()
    if peak > 0:
        vals = vals * (amplitude / peak)
    return vals


def scalar(grid: GridSpec, seed: int, kmax: int = 2, amplitude: float = 1.0) -> ScalarField:
    return ScalarField(grid, band_limited(grid, seed, kmax, amplitude))


def perturbed_state(grid: GridSpec, seed: int, amplitude: float = 1e-3,
                    kmax: int = 2) -> State:
    """Random admissible State near equilibrium: neutral, positive,
    band-limited perturbations of (1, 1, 1)."""
    ut = band_limited(grid, seed, kmax, amplitude)
    v = band_limited(grid, seed + 1, kmax, amplitude)
    tt = band_limited(grid, seed + 2, kmax, amplitude)
    n = ScalarField(grid, 1.0 + 0.5 * (ut + v))
    p = ScalarField(grid, 1.0 + 0.5 * (ut - v))
    theta = ScalarField(grid, 1.0 + tt)
    return State.from_primitives(n, p, theta)


def perturbation_state(grid: GridSpec, seed: int, amplitude: float = 1e-3,
                       kmax: int = 2) -> PerturbationState:
    ut = ScalarField(grid, band_limited(grid, seed, kmax, amplitude))
    v = ScalarField(grid, band_limited(grid, seed + 1, kmax, amplitude))
    tt = ScalarField(grid, band_limited(grid, seed + 2, kmax, amplitude))
    return PerturbationState.from_fields(ut, v, tt)


@pytest.fixture
def grid1d() -> GridSpec:
    return GridSpec(dim=1, n=16, length=1.0)


@pytest.fixture
def grid3d() -> GridSpec:
    return GridSpec(dim=3, n=8, length=1.0)


@pytest.fixture
def grid3d_2pi() -> GridSpec:
    return GridSpec(dim=3, n=8, length=2.0 * np.pi)


@pytest.fixture
def params() -> PhysParams:
    return PhysParams()
