"""Dense linear-algebra substrate for the solver.

Matrices are plain float64 ``numpy.ndarray`` objects in row-major layout.
The solver only ever inverts small H x H symmetric positive-definite
matrices (sums of a positive diagonal and a Gram term), so the one
non-trivial kernel here is an SPD inverse via Cholesky with an escalating
diagonal-jitter fallback for numerically semi-definite inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.special

from .errors import DimensionMismatchError, NotPositiveDefiniteError

# Jitter is scaled by trace(m)/dim and escalated x10 per retry.
_JITTER_START = 1e-10
_JITTER_STOP = 1e-4

#: Relative tolerance for the symmetry check on SPD inputs.
SYMMETRY_RTOL = 1e-10


def erfc(x):
    """Complementary error function, (2/sqrt(pi)) * integral_x^inf exp(-t^2) dt.

    Named explicitly so callers cannot confuse it with the odd error
    function ``erf``; the two differ by ``erfc(x) = 1 - erf(x)``.
    Accepts scalars or arrays; decreasing, with range (0, 2).
    """
    return scipy.special.erfc(x)


def erf(x):
    """Odd error function, (2/sqrt(pi)) * integral_0^x exp(-t^2) dt."""
    return scipy.special.erf(x)


def check_symmetric(m: np.ndarray, rtol: float = SYMMETRY_RTOL) -> None:
    """Raise if ``m`` is not square-symmetric to relative tolerance ``rtol``."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got {m.shape}")
    scale = np.abs(m).max()
    if scale == 0.0:
        return
    if np.abs(m - m.T).max() > rtol * scale:
        raise NotPositiveDefiniteError("matrix is not symmetric")


def spd_inverse(m: np.ndarray, return_jitter: bool = False):
    """Invert a symmetric positive-definite matrix.

    Uses a Cholesky solve against the identity.  If the factorization
    fails, retries with additive diagonal jitter ``1e-10 * trace(m)/dim``,
    escalating by x10 up to ``1e-4 * trace(m)/dim``.

    Parameters
    ----------
    m : (n, n) ndarray
        Symmetric matrix, positive definite possibly up to rounding.
    return_jitter : bool
        If True, also return the jitter magnitude that was added
        (0.0 when the plain factorization succeeded).

    Raises
    ------
    NotPositiveDefiniteError
        If every jitter level fails.
    """
    m = np.asarray(m, dtype=np.float64)
    check_symmetric(m)
    n = m.shape[0]
    eye = np.eye(n)

    jitter = 0.0
    base = np.trace(m) / n
    level = _JITTER_START
    while True:
        try:
            c, low = scipy.linalg.cho_factor(m + jitter * eye, lower=True,
                                             check_finite=False)
            inv = scipy.linalg.cho_solve((c, low), eye, check_finite=False)
            break
        except scipy.linalg.LinAlgError:
            if level > _JITTER_STOP or not np.isfinite(base) or base <= 0.0:
                raise NotPositiveDefiniteError(
                    f"Cholesky failed up to jitter {jitter:g}") from None
            jitter = level * base
            level *= 10.0
    # Cho_solve output is symmetric only up to rounding; enforce it.
    inv = 0.5 * (inv + inv.T)
    if return_jitter:
        return inv, jitter
    return inv
