"""Discretized Ohmic harmonic bath and its influence functional.

A bath of ``L`` harmonic modes is specified by frequencies ``omega_l``
and couplings ``c_l`` obtained from the Ohmic discretization

    omega_l = -omega_c * ln(1 - (l/L) * (1 - exp(-omega_max/omega_c)))
    c_l     = omega_l * sqrt(xi * omega_c / L * (1 - exp(-omega_max/omega_c)))

for ``l = 1..L``.  The two-time correlation function is

    B(tau1, tau2) = sum_l c_l^2/(2 omega_l) [coth(beta omega_l / 2)
                      * cos(omega_l (tau2 - tau1))
                      - i sin(omega_l (tau2 - tau1))],

which is stationary: it depends on the arguments only through
``tau2 - tau1``.  The influence functional pairs time points into
products of ``B`` factors; only the one- and two-pair cases (odd
interior orders 1 and 3) are implemented here, the general pairing
formula being an extension point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


def _coth_half(x):
    """coth(x/2) evaluated as 1 + 2/(e^x - 1) (overflow-safe for large x)."""
    x = np.asarray(x, dtype=float)
    return 1.0 + 2.0 / np.expm1(x)


@dataclass(frozen=True)
class BathSpec:
    """Discretized harmonic bath with derived mode arrays.

    Attributes
    ----------
    l_modes : int
        Number of harmonic modes ``L``.
    xi : float
        Kondo (coupling strength) parameter; ``xi = 0`` decouples the bath.
    omega_c : float
        Primary frequency of the Ohmic spectral density.
    omega_max : float
        Frequency cutoff; all ``omega_l`` lie in ``(0, omega_max]``.
    beta : float
        Inverse temperature.
    omega : numpy.ndarray
        Mode frequencies (length ``l_modes``, strictly increasing).
    coupling : numpy.ndarray
        Mode couplings ``c_l`` (length ``l_modes``).
    """

    l_modes: int
    xi: float
    omega_c: float
    omega_max: float
    beta: float
    omega: np.ndarray = field(repr=False, compare=False)
    coupling: np.ndarray = field(repr=False, compare=False)

    @property
    def weight(self) -> np.ndarray:
        """Per-mode prefactor ``c_l^2 / (2 omega_l)``."""
        return self.coupling**2 / (2.0 * self.omega)


def build_bath(
    l_modes: int = 200,
    xi: float = 0.6,
    omega_c: float = 3.0,
    omega_max: float = 12.0,
    beta: float = 5.0,
) -> BathSpec:
    """Build a :class:`BathSpec` from the Ohmic discretization formulas.

    Defaults are the spin-boson benchmark parameters ``L = 200``,
    ``omega_c = 3``, ``omega_max = 4 omega_c``, ``xi = 0.6``, ``beta = 5``.
    """
    if l_modes < 1:
        raise ValueError("l_modes must be >= 1")
    if omega_c <= 0 or omega_max <= 0 or beta <= 0 or xi < 0:
        raise ValueError("omega_c, omega_max, beta must be > 0 and xi >= 0")
    ell = np.arange(1, l_modes + 1, dtype=float)
    depletion = 1.0 - np.exp(-omega_max / omega_c)
    omega = -omega_c * np.log(1.0 - (ell / l_modes) * depletion)
    coupling = omega * np.sqrt(xi * omega_c / l_modes * depletion)
    return BathSpec(l_modes, xi, omega_c, omega_max, beta, omega, coupling)


def correlation_B(spec: BathSpec, tau1, tau2):
    """Two-time bath correlation ``B(tau1, tau2)`` by direct summation.

    Broadcasts over array arguments; each evaluation sums all ``L`` modes.
    """
    dtau = np.asarray(tau2, dtype=float) - np.asarray(tau1, dtype=float)
    phase = np.multiply.outer(dtau, spec.omega)
    w = spec.weight
    therm = w * _coth_half(spec.beta * spec.omega)
    re = np.cos(phase) @ therm
    im = -(np.sin(phase) @ w)
    out = re + 1j * im
    return complex(out) if np.ndim(out) == 0 else out


class CorrelationTable:
    """Cubic-spline memoization of ``B`` over the stationary time difference.

    ``B(tau1, tau2) = f(tau2 - tau1)`` with ``f`` smooth, so a dense
    1-D spline of ``f`` on ``[-span, span]`` replaces the per-call
    ``L``-mode summation in Monte Carlo inner loops.  Agreement with
    :func:`correlation_B` is a tolerance (1e-12 relative), not bitwise.
    """

    def __init__(self, spec: BathSpec, span: float, step: float = 4e-4):
        self.spec = spec
        self.span = float(span)
        n = max(int(np.ceil(self.span / step)), 8)
        x = np.linspace(0.0, self.span, n + 1)
        f = correlation_B(spec, 0.0, x)
        # fused complex piecewise-cubic coefficients on the uniform knots
        self._coef = (
            CubicSpline(x, np.real(f)).c + 1j * CubicSpline(x, np.imag(f)).c
        )
        self._dx = self.span / n
        self._n = n

    def _eval_nonneg(self, a):
        """Spline value for difference array ``a >= 0`` (no range check)."""
        i = np.minimum((a * (1.0 / self._dx)).astype(np.int64), self._n - 1)
        u = a - i * self._dx
        c = self._coef
        return ((c[0, i] * u + c[1, i]) * u + c[2, i]) * u + c[3, i]

    def diff_nonneg(self, dtau):
        """``B`` over nonnegative differences (Monte Carlo inner loop path)."""
        return self._eval_nonneg(np.asarray(dtau, dtype=float))

    def diff(self, dtau):
        """``B`` as a function of the difference ``tau2 - tau1``."""
        d = np.asarray(dtau, dtype=float)
        a = np.abs(d)
        if np.any(a > self.span * (1 + 1e-12)):
            raise ValueError("time difference outside memoized span")
        # stationarity: Re even, Im odd in the difference
        v = self._eval_nonneg(a)
        return np.where(d < 0, np.conj(v), v)

    def __call__(self, tau1, tau2):
        return self.diff(np.asarray(tau2, dtype=float) - np.asarray(tau1, dtype=float))


def influence_L(spec_or_table, s_up: float, points) -> complex:
    """Bath influence functional for an odd interior sequence of length 1 or 3.

    ``points`` are the interior times ``s_1 < ... < s_M`` and ``s_up`` is
    the pinned final (largest) time of the pairing:

    * ``M = 1`` -> ``B(s_1, s_up)``
    * ``M = 3`` -> ``B(s_1, s_3) * B(s_2, s_up)``

    Higher odd orders use a pairing formula not implemented here; they
    raise ``NotImplementedError``.
    """
    b = spec_or_table if callable(spec_or_table) else (
        lambda t1, t2: correlation_B(spec_or_table, t1, t2)
    )
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if pts.ndim != 1:
        raise ValueError("points must be a flat sequence of times")
    if pts.size == 1:
        return complex(b(pts[0], s_up))
    if pts.size == 3:
        return complex(b(pts[0], pts[2])) * complex(b(pts[1], s_up))
    raise NotImplementedError(
        f"influence functional implemented for orders 1 and 3, got {pts.size}"
    )
