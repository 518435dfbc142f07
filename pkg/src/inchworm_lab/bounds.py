"""Closed-form error-bound envelopes for overlay against empirical curves.

All envelopes are built from a small set of model constants: bounds on
the coupling operator norm ``W``, the propagator norm ``G``, the bath
correlation magnitude ``Lbar``, the Hamiltonian norm ``H`` and (for the
deterministic part) second/third derivative bounds of the exact
propagator.  The RMS-error envelope of the Monte Carlo scheme is

    theta2 * sqrt(gamma_bar(t)) * exp(theta1 * sqrt(P1(t)) * t) * sqrt(h / N_s)

with fixed constants ``theta1 = 353`` and ``theta2 = sqrt(34)``.  Since
``theta1`` sits in an exponent, envelopes overflow ``float64`` already
for moderate arguments; the ``log_*`` variants stay finite and are
preferred for plotting and dominance checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THETA1 = 353.0
THETA2 = float(np.sqrt(34.0))


def _double_factorial(n: int) -> float:
    if n <= 0:
        return 1.0
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


@dataclass(frozen=True)
class BoundConstants:
    """Model constants entering the envelopes.

    ``w``, ``g``, ``lbar`` bound the coupling norm, the propagator norm
    and the correlation magnitude; ``h_s`` bounds the Hamiltonian norm;
    ``gpp``/``gppp`` bound second/third propagator derivatives (only the
    full envelope uses them); ``mbar`` is the series truncation order.
    """

    w: float
    g: float
    lbar: float
    mbar: int = 1
    h_s: float = 0.0
    gpp: float = 0.0
    gppp: float = 0.0
    theta1: float = THETA1
    theta2: float = THETA2

    def __post_init__(self):
        if min(self.w, self.g, self.lbar) <= 0:
            raise ValueError("w, g, lbar must be positive")
        if self.mbar < 1 or self.mbar % 2 == 0:
            raise ValueError("mbar must be odd and >= 1")


def P1(c: BoundConstants, t):
    """Derivative-scale polynomial: constant for ``mbar = 1``, degree
    ``mbar - 2`` polynomial (times ``1 + t``) above."""
    t = np.asarray(t, dtype=float)
    base = 2.0 * c.w**2 * c.g * c.lbar
    if c.mbar < 3:
        return base * np.ones_like(t)
    x = 2.0 * c.w * c.g * np.sqrt(c.lbar) * t
    s = np.zeros_like(t)
    for m in range(3, c.mbar + 1, 2):
        s = s + (m - 1) * m / _double_factorial(m - 3) * x ** (m - 2)
    return base + 3.0 * c.w**3 * c.g**2 * c.lbar**1.5 * (1.0 + t) * s


def gamma_bar(c: BoundConstants, t):
    """Sampling-variance scale ``2 w g sqrt(L) sum_M (w g sqrt(L) t)^M / (M-1)!!``."""
    t = np.asarray(t, dtype=float)
    x = c.w * c.g * np.sqrt(c.lbar) * t
    s = np.zeros_like(t)
    for m in range(1, c.mbar + 1, 2):
        s = s + x**m / _double_factorial(m - 1)
    return 2.0 * c.w * c.g * np.sqrt(c.lbar) * s


def gamma_bar_limit(c: BoundConstants, t):
    """Closed form of ``gamma_bar`` as ``mbar -> inf``."""
    t = np.asarray(t, dtype=float)
    q = c.w**2 * c.g**2 * c.lbar
    return 2.0 * q * t * np.exp(0.5 * q * t * t)


def p1_limit(c: BoundConstants, t):
    """Closed form of ``P1`` as ``mbar -> inf``."""
    t = np.asarray(t, dtype=float)
    x = 2.0 * c.w * c.g * np.sqrt(c.lbar) * t
    poly = x**5 + 7.0 * x**3 + 6.0 * x
    return (
        2.0 * c.w**2 * c.g * c.lbar
        + 3.0 * c.w**3 * c.g**2 * c.lbar**1.5 * (1.0 + t) * poly
        * np.exp(2.0 * c.w**2 * c.g**2 * c.lbar * t * t)
    )


def log_error_envelope_mc(c: BoundConstants, t, h: float, ns: int):
    """Natural log of the RMS stochastic-error envelope (finite for t > 0)."""
    t = np.asarray(t, dtype=float)
    if h <= 0 or ns < 1:
        raise ValueError("need h > 0 and ns >= 1")
    with np.errstate(divide="ignore"):
        lg = np.log(gamma_bar(c, t))
    return (
        np.log(c.theta2)
        + 0.5 * lg
        + c.theta1 * np.sqrt(P1(c, t)) * t
        + 0.5 * np.log(h / ns)
    )


def error_envelope_mc(c: BoundConstants, t, h: float, ns: int):
    """RMS stochastic-error envelope (may overflow to ``inf``; see log form)."""
    with np.errstate(over="ignore"):
        out = np.exp(log_error_envelope_mc(c, t, h, ns))
    return out


def deterministic_envelope(c: BoundConstants, t, h: float):
    """Second-order deterministic error envelope ``Pe(t) exp(theta1 sqrt(P1) t) h^2``."""
    t = np.asarray(t, dtype=float)
    x = 2.0 * c.w * c.g * np.sqrt(c.lbar) * t
    s = np.zeros_like(t)
    for m in range(1, c.mbar + 1, 2):
        s = s + (m + 1) / _double_factorial(m - 1) * x**m
    pe = (
        (0.25 * c.h_s + 8.0 * P1(c, t)) * c.gpp
        + 5.0 / 12.0 * c.gppp
        + c.w * c.gpp * np.sqrt(c.lbar) * s
    )
    with np.errstate(over="ignore"):
        return pe * np.exp(c.theta1 * np.sqrt(P1(c, t)) * t) * h * h


def error_envelope_full(c: BoundConstants, t, h: float, ns: int):
    """Total envelope: deterministic ``O(h^2)`` part plus stochastic part."""
    return deterministic_envelope(c, t, h) + error_envelope_mc(c, t, h, ns)


def bias_envelope_mc(c: BoundConstants, t, h: float, ns: int, p2=None):
    """Bias envelope ``4 theta2^2 alpha_bar gamma_bar exp(3 theta1 sqrt(P1) t) h/Ns``.

    The factor ``alpha_bar(t) = 16 p2(t) (10t + 16t^2 + 5t^3 + t^4/4)``
    depends on a degree ``mbar - 1`` polynomial ``p2`` whose coefficients
    are model-specific and have no published closed form; callers must
    supply ``p2`` explicitly.
    """
    if p2 is None:
        raise ValueError(
            "the bias envelope needs the polynomial p2; no default exists"
        )
    t = np.asarray(t, dtype=float)
    alpha_bar = 16.0 * np.asarray(p2(t), dtype=float) * (
        10.0 * t + 16.0 * t**2 + 5.0 * t**3 + 0.25 * t**4
    )
    with np.errstate(over="ignore"):
        return (
            4.0 * c.theta2**2 * alpha_bar * gamma_bar(c, t)
            * np.exp(3.0 * c.theta1 * np.sqrt(P1(c, t)) * t) * h / ns
        )


def ode_dyson_variance_bound(dim: int, m_prime: float, t_final: float,
                             u0_norm: float):
    """Variance bound ``[exp(d M'^2 T) - 1] ||u(0)||^2`` for direct Dyson sampling."""
    return float(np.expm1(dim * m_prime**2 * t_final) * u0_norm**2)


def spinboson_dyson_variance_bound(w_norm: float, lbar: float, dt):
    """Variance growth factor ``exp(||W||^4 L^2 (s_up - s_lo)^2 / 2)``."""
    dt = np.asarray(dt, dtype=float)
    out = np.exp(0.5 * w_norm**4 * lbar**2 * dt * dt)
    return float(out) if out.ndim == 0 else out
