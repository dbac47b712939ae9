"""Adiabatic quantum-classical dynamics of the 1D Holstein chain.

Exact reference dynamics (free-fermion diagonalization + RK4), an analytic
charge-density-wave response theory, a sparse random-feature surrogate for
the electron density, symmetry-preserving accelerated evolution, and
worst-case error-propagation certificates.
"""

from holsteinml.core import (
    ClassicalState,
    DimensionlessScales,
    HolsteinParams,
    ObservableRecord,
    Trajectory,
    child_seed,
    dimensionless_scales,
    sample_initial_state,
    substream,
)

__all__ = [
    "ClassicalState",
    "DimensionlessScales",
    "HolsteinParams",
    "ObservableRecord",
    "Trajectory",
    "child_seed",
    "dimensionless_scales",
    "sample_initial_state",
    "substream",
]

__version__ = "0.1.0"
