"""
Periodic uniform grids with Fourier-spectral calculus.

All fields live on a d-dimensional torus [0, L)^d sampled on N points per
axis (row-major / C order).  Derivatives are exact for resolved Fourier
modes; quadrature is the plain cell sum weighted by (L/N)^d, which is the
exact integral of the trigonometric interpolant.

Conventions fixed here and relied on everywhere else:

* wavenumbers k_i = 2*pi*m_i/L with mode indices m_i from fftfreq,
* first-derivative multipliers zero the Nyquist mode so d/dx maps real
  fields to real fields and is skew-adjoint,
* the Laplacian multiplier is -|k|^2 with the Nyquist mode included, so
  divergence(gradient(f)) == laplacian(f) holds exactly only for fields
  with no Nyquist content (all dealiased fields qualify),
* dealiasing keeps mode indices |m_i| <= floor(N/3) per axis (2/3 rule).

Everything in this module is a pure function of its inputs; grids are
frozen after construction and safe to share across threads.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

_WORKERS = min(os.cpu_count() or 1, 4)

DEFAULT_MAX_POINTS = 2**24


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """
    Periodic uniform grid in dim in {1, 2, 3} dimensions.

    Parameters
    ----------
    dim : int
        Spatial dimension.
    n : int
        Points per axis; power of two, >= 8.
    length : float
        Box side L (> 0), same along every axis.
    max_points : int
        Memory guard: n**dim may not exceed this.

    Spectral tables (wavenumbers, inverse Laplacian multipliers, dealias
    mask, Sobolev weights) are precomputed once and immutable.
    """

    dim: int
    n: int
    length: float
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not _is_power_of_two(self.n) or self.n < 8:
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not (self.length > 0):
            raise ValueError(f"length must be positive, got {self.length}")
        if self.n**self.dim > self.max_points:
            raise ValueError(
                f"{self.n}^{self.dim} points exceed max_points={self.max_points}"
            )

        n, L, d = self.n, float(self.length), self.dim
        object.__setattr__(self, "shape", (n,) * d)
        object.__setattr__(self, "spectral_shape", (n,) * (d - 1) + (n // 2 + 1,))
        object.__setattr__(self, "cell_volume", (L / n) ** d)
        object.__setattr__(self, "volume", L**d)

        k_full = 2.0 * np.pi * np.fft.fftfreq(n, d=L / n)
        k_half = 2.0 * np.pi * np.fft.rfftfreq(n, d=L / n)
        # broadcastable wavenumber component arrays in rfftn layout
        ks = []
        for ax in range(d):
            k1 = k_half if ax == d - 1 else k_full
            shape = [1] * d
            shape[ax] = k1.size
            ks.append(k1.reshape(shape))
        object.__setattr__(self, "k", tuple(ks))

        k2 = sum(ki**2 for ki in ks)
        k2 = np.broadcast_to(k2, self.spectral_shape).copy()
        object.__setattr__(self, "k2", k2)

        inv_k2 = np.zeros_like(k2)
        nz = k2 > 0
        inv_k2[nz] = 1.0 / k2[nz]
        object.__setattr__(self, "inv_k2", inv_k2)

        # first-derivative multipliers: i*k with the Nyquist mode zeroed
        nyq = 2.0 * np.pi * (n // 2) / L
        grad_mult = []
        for ki in ks:
            g = 1j * np.where(np.abs(ki) >= nyq * (1 - 1e-12), 0.0, ki)
            grad_mult.append(g)
        object.__setattr__(self, "grad_mult", tuple(grad_mult))

        m_cut = n // 3
        mask = np.ones(self.spectral_shape, dtype=bool)
        for ax in range(d):
            m1 = np.fft.rfftfreq(n) * n if ax == d - 1 else np.fft.fftfreq(n) * n
            shape = [1] * d
            shape[ax] = m1.size
            mask &= np.abs(m1.reshape(shape)) <= m_cut + 0.5
        object.__setattr__(self, "dealias_mask", mask)

        # Sobolev multipliers: sum over multi-indices |alpha| = 1, 2
        # (mixed second derivatives counted once each)
        w1 = k2
        w2 = sum(ki**4 for ki in ks)
        for a in range(d):
            for b in range(a + 1, d):
                w2 = w2 + ks[a] ** 2 * ks[b] ** 2
        w2 = np.broadcast_to(w2, self.spectral_shape).copy()
        object.__setattr__(self, "h1_weight", w1)
        object.__setattr__(self, "h2_weight", w2)

        # Parseval weights for rfftn layout: conjugate-pair modes on the
        # halved axis count twice
        pw = np.full(self.spectral_shape, 2.0)
        sl = [slice(None)] * d
        sl[d - 1] = 0
        pw[tuple(sl)] = 1.0
        sl[d - 1] = n // 2
        pw[tuple(sl)] = 1.0
        object.__setattr__(self, "parseval_weight", pw)

    # -- transforms ---------------------------------------------------------

    def fft(self, values: np.ndarray) -> np.ndarray:
        """Forward real FFT over the trailing dim axes (batches allowed)."""
        axes = tuple(range(values.ndim - self.dim, values.ndim))
        return scipy.fft.rfftn(values, axes=axes, workers=_WORKERS)

    def ifft(self, spec: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`fft`; returns real arrays."""
        axes = tuple(range(spec.ndim - self.dim, spec.ndim))
        return scipy.fft.irfftn(spec, s=self.shape, axes=axes, workers=_WORKERS)

    def axes_coordinates(self) -> tuple[np.ndarray, ...]:
        """Meshgrid coordinate arrays (ij indexing), one per axis."""
        x1 = np.arange(self.n) * (self.length / self.n)
        return tuple(np.meshgrid(*([x1] * self.dim), indexing="ij"))

    def spectral_l2_sum(self, spec: np.ndarray, weight=None) -> float:
        """vol * sum_k w(k) |f_hat(k)|^2 / n^d, the Parseval form of
        integral(w-weighted |f|^2)."""
        mag2 = (spec.real**2 + spec.imag**2) * self.parseval_weight
        if weight is not None:
            mag2 = mag2 * weight
        return float(mag2.sum() * self.cell_volume / self.n**self.dim)


@dataclass(frozen=True)
class ScalarField:
    """A real scalar sampled on a GridSpec (values shaped (n,)*dim, C order)."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("ScalarField values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))


@dataclass(frozen=True)
class VectorField:
    """dim real scalar components on a shared GridSpec."""

    grid: GridSpec
    components: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self) -> None:
        comps = tuple(np.asarray(c, dtype=np.float64) for c in self.components)
        if len(comps) != self.grid.dim:
            raise ValueError(f"need {self.grid.dim} components, got {len(comps)}")
        for c in comps:
            if c.shape != self.grid.shape:
                raise ValueError("component shape mismatch")
            if not np.all(np.isfinite(c)):
                raise ValueError("VectorField components must be finite")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField":
        return cls(grid, tuple(np.zeros(grid.shape) for _ in range(grid.dim)))


# -- spectral calculus (array-level kernels + field-level wrappers) ----------


def grad_arrays(grid: GridSpec, values: np.ndarray) -> list[np.ndarray]:
    """Spectral gradient; one batched inverse transform for all components."""
    spec = grid.fft(values)
    stack = np.stack([m * spec for m in grid.grad_mult])
    return list(grid.ifft(stack))


def laplacian_array(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return grid.ifft(-grid.k2 * grid.fft(values))


def divergence_arrays(grid: GridSpec, comps) -> np.ndarray:
    spec = grid.fft(np.stack(comps))
    out = sum(m * spec[i] for i, m in enumerate(grid.grad_mult))
    return grid.ifft(out)


def dealias_array(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    return grid.ifft(grid.dealias_mask * grid.fft(values))


def gradient(f: ScalarField) -> VectorField:
    """Spectral gradient of f; each component has exactly zero mean."""
    return VectorField(f.grid, tuple(grad_arrays(f.grid, f.values)))


def laplacian(f: ScalarField) -> ScalarField:
    """Spectral Laplacian (multiplier -|k|^2, Nyquist included)."""
    return ScalarField(f.grid, laplacian_array(f.grid, f.values))


def divergence(v: VectorField) -> ScalarField:
    """Spectral divergence; output mean is exactly zero (torus)."""
    return ScalarField(v.grid, divergence_arrays(v.grid, v.components))


def dealias(f: ScalarField) -> ScalarField:
    """2/3-rule truncation: zero all modes with any |m_i| > floor(N/3)."""
    return ScalarField(f.grid, dealias_array(f.grid, f.values))


def integrate(f: ScalarField) -> float:
    """integral of f over the box: cell sum times (L/N)^dim."""
    return float(f.values.sum() * f.grid.cell_volume)


def mean(f: ScalarField) -> float:
    return float(f.values.mean())


def inner(f: ScalarField, g: ScalarField) -> float:
    """L2 inner product <f, g> with the cell-volume weight."""
    return float((f.values * g.values).sum() * f.grid.cell_volume)


def norm(f: ScalarField, kind: str = "L2", p: float | None = None) -> float:
    """
    Discrete norm of a scalar field.

    kind is one of "L2", "Lp" (requires p >= 1), "H1", "H2".  Sobolev norms
    use spectral derivatives and count every multi-index |alpha| <= k once:

        ||f||_Hk^2 = sum_{|alpha| <= k} ||d^alpha f||_L2^2.
    """
    g = f.grid
    if kind == "L2":
        return math.sqrt(float((f.values**2).sum() * g.cell_volume))
    if kind == "Lp":
        if p is None or p < 1:
            raise ValueError(f"Lp norm needs p >= 1, got {p}")
        return float((np.abs(f.values) ** p).sum() * g.cell_volume) ** (1.0 / p)
    if kind in ("H1", "H2"):
        spec = g.fft(f.values)
        total = g.spectral_l2_sum(spec)
        total += g.spectral_l2_sum(spec, g.h1_weight)
        if kind == "H2":
            total += g.spectral_l2_sum(spec, g.h2_weight)
        return math.sqrt(total)
    raise ValueError(f"unknown norm kind {kind!r}")


def vector_l2(v: VectorField) -> float:
    """sqrt(sum_i ||v_i||_L2^2)."""
    g = v.grid
    return math.sqrt(float(sum((c**2).sum() for c in v.components) * g.cell_volume))
