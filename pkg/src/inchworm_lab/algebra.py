"""Complex 2x2 matrix arithmetic and the closed-form 2x2 matrix exponential.

All routines operate on ``numpy`` arrays of shape ``(..., 2, 2)`` with
``complex128`` entries, so a single matrix and a batch of matrices share
the same code path.  Entry ``[r, s]`` of a matrix corresponds to row ``r``
and column ``s`` (the superscript convention ``G^(rs)`` of two-time
propagators).
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.eye(2, dtype=complex)
ZERO = np.zeros((2, 2), dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

# Eigenvalue-gap threshold below which the exponential switches to the
# series form of cosh/sinhc (degenerate-limit formula).
_DEGENERATE_GAP = 1e-8


def as_mat2(a) -> np.ndarray:
    """Coerce ``a`` to a complex array of shape ``(..., 2, 2)``."""
    m = np.asarray(a, dtype=complex)
    if m.shape[-2:] != (2, 2):
        raise ValueError(f"expected trailing shape (2, 2), got {m.shape}")
    return m


def mat_add(a, b) -> np.ndarray:
    return as_mat2(a) + as_mat2(b)


def mat_sub(a, b) -> np.ndarray:
    return as_mat2(a) - as_mat2(b)


def mat_mul(a, b) -> np.ndarray:
    """Standard 2x2 matrix product (broadcasts over leading axes)."""
    return as_mat2(a) @ as_mat2(b)


def scalar_mul(z, a) -> np.ndarray:
    return np.asarray(z) * as_mat2(a)


def frobenius_norm(a) -> np.ndarray | float:
    """Frobenius norm ``sqrt(sum |a_ij|^2)`` over the trailing 2x2 block."""
    m = as_mat2(a)
    out = np.sqrt(np.sum(np.abs(m) ** 2, axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out


def dagger(a) -> np.ndarray:
    """Conjugate transpose of the trailing 2x2 block."""
    return np.conj(np.swapaxes(as_mat2(a), -2, -1))


def mat_exp(a) -> np.ndarray:
    """Matrix exponential of a 2x2 complex matrix (closed form).

    Uses the identity

        exp(A) = e^mu [cosh(delta) I + sinhc(delta) (A - mu I)],

    where ``mu = tr(A)/2`` and ``delta^2 = mu^2 - det(A)`` (the two
    eigenvalues are ``mu +- delta``).  Near-degenerate eigenvalues
    (``2|delta|`` below 1e-8) evaluate cosh/sinhc by their Taylor series,
    which is the exact limit formula and avoids dividing by a vanishing
    ``delta``.

    Parameters
    ----------
    a : array_like, shape (..., 2, 2)
        Finite complex matrices.

    Returns
    -------
    numpy.ndarray, shape (..., 2, 2)
    """
    m = as_mat2(a)
    if not np.all(np.isfinite(m)):
        raise ValueError("mat_exp requires finite input")
    tr = m[..., 0, 0] + m[..., 1, 1]
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    mu = 0.5 * tr
    delta = np.sqrt(mu * mu - det + 0j)

    small = np.abs(delta) < 0.5 * _DEGENERATE_GAP
    d2 = delta * delta
    # cosh(delta) and sinh(delta)/delta, series-evaluated where delta ~ 0
    cosh = np.where(small, 1.0 + d2 / 2.0 + d2 * d2 / 24.0, np.cosh(delta))
    sinhc = np.where(
        small,
        1.0 + d2 / 6.0 + d2 * d2 / 120.0,
        np.sinh(np.where(small, 1.0, delta)) / np.where(small, 1.0, delta),
    )
    eye = np.broadcast_to(IDENTITY, m.shape)
    out = cosh[..., None, None] * eye + sinhc[..., None, None] * (
        m - mu[..., None, None] * eye
    )
    return np.exp(mu)[..., None, None] * out


def mat_exp_taylor(a, terms: int = 50) -> np.ndarray:
    """Matrix exponential by direct series summation (test oracle).

    Sums ``sum_k A^k / k!`` term by term.  Intended as an independent
    reference for :func:`mat_exp`; accurate for moderate norms
    (``frobenius_norm(a) <= 10`` with the default 50 terms).
    """
    m = as_mat2(a)
    out = np.broadcast_to(IDENTITY, m.shape).copy()
    term = out.copy()
    for k in range(1, terms + 1):
        term = term @ m / k
        out = out + term
    return out
