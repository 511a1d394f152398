"""Pseudospectral solver for the coupled Poisson-Nernst-Planck-Fourier
system on a periodic box, with continuous thermodynamic-structure audits
(conservation, entropy production, reciprocal relations, variational
force identities, Lyapunov decay)."""

from .grid import GridSpec, ScalarField, VectorField
from .fields import PhysParams, State, FluxSet, OnsagerBlock, PositivityError
from .poisson import NonNeutralSource, PoissonSolution
from .dynamics import PerturbationState, StepperConfig, StepAbort

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "PhysParams",
    "State",
    "FluxSet",
    "OnsagerBlock",
    "PositivityError",
    "NonNeutralSource",
    "PoissonSolution",
    "PerturbationState",
    "StepperConfig",
    "StepAbort",
]

__version__ = "0.1.0"
