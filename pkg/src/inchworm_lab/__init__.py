"""Inchworm Monte Carlo propagators and stochastic Runge-Kutta schemes.

The package is organized around seven building blocks:

``algebra``
    Complex 2x2 matrix arithmetic, Frobenius norms and a closed-form
    2x2 matrix exponential (used by oracles and the zero-coupling
    reference solution).
``ode_mc``
    Explicit Runge-Kutta integrators whose right-hand side is a Monte
    Carlo average, the direct Dyson-series sampler for linear ODEs, and
    the scalar toy-model experiment.
``mesh``
    The triangular two-time grid with split nodes at the measurement
    time, its dependency-respecting computation order, and piecewise
    linear interpolation of the propagator table.
``bath``
    Discretized Ohmic harmonic bath: mode frequencies and couplings,
    the two-time correlation function and the bath influence functional.
``inchworm``
    Deterministic and Monte Carlo inchworm solvers for the full
    propagator, plus observable extraction.
``bounds``
    Closed-form theoretical error-bound envelopes for overlaying
    against empirical error curves.
``harness``
    Seeded, chunked, reproducible replication engine; convergence
    tables, error-growth curves and CSV/plot-script emission.
"""

from . import algebra, bath, bounds, harness, inchworm, mesh, ode_mc

__all__ = ["algebra", "bath", "bounds", "harness", "inchworm", "mesh", "ode_mc"]
__version__ = "0.1.0"
