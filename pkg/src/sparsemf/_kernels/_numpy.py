"""NumPy implementation of the per-iteration solver kernel.

This is the fallback backend; ``_core`` (Cython) implements the same
``solver_step`` contract with fused loops.  Both must agree to rounding.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.special

from ..errors import NonPositiveInverseDiagonalError
from ..linalg import spd_inverse
from . import status

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def solver_step(v, a_bar, b_bar, sigma_b, k, sigma, c_a_diag, eps, tuned,
                use_stale_a, zb_exit=0.0):
    """Advance every solver quantity by one full iteration.

    Stage order: hat_sigma_a -> sigma_a -> a_bar -> hat_sigma_b -> omega
    -> k -> z_b -> sigma_b -> b_bar.  The two hat matrices are index-free
    (no l or m dependence), so each is built once and shared.

    ``tuned`` gates both the k update and the negative-z_b abort: with a
    fixed k the run is expected to cross the zero point and keep going,
    so only non-finite values stop it.

    ``zb_exit`` (tuned mode): when z_b lands in [0, zb_exit] the Laplace
    corrections are 1/z_b-amplified beyond the calibrated exit strength,
    so the b-side update is skipped and ZB_CONVERGED returned; the a-side
    outputs (which never involve z_b) are valid and final.

    Returns a dict with a ``status`` code; except for ZB_CONVERGED, any
    non-OK status means the caller must discard the partial outputs and
    keep the previous state.
    """
    l_dim, _ = v.shape
    s2 = sigma * sigma

    hat_a = b_bar @ b_bar.T
    hat_a[np.diag_indices_from(hat_a)] += s2 / c_a_diag + sigma_b.sum(axis=1)
    inv_a, jitter_a = spd_inverse(hat_a, return_jitter=True)
    sigma_a_diag = s2 * np.diag(inv_a).copy()
    a_new = (v @ b_bar.T) @ inv_a.T

    hat_b = a_new.T @ a_new
    hat_b[np.diag_indices_from(hat_b)] += l_dim * sigma_a_diag
    inv_b, jitter_b = spd_inverse(hat_b, return_jitter=True)
    d = np.diag(inv_b).copy()
    if np.any(d <= 0.0):
        raise NonPositiveInverseDiagonalError(
            "hat_sigma_b inverse has a non-positive diagonal entry")

    t_mat = inv_b @ (a_new.T @ v)
    scale = np.sqrt(2.0 * s2 * d)
    omega = t_mat / scale[:, None]
    gexp = np.exp(-omega * omega)
    gerf = scipy.special.erf(omega)
    s_sum = float(np.sum(scale[:, None] * _INV_SQRT_PI * gexp + t_mat * gerf))

    out = {
        "status": status.OK,
        "a_bar": a_new,
        "sigma_a_diag": sigma_a_diag,
        "hat_sigma_a": hat_a,
        "hat_sigma_b": hat_b,
        "hat_sigma_b_inv": inv_b,
        "omega": omega,
        "s_sum": s_sum,
        "k": k,
        "z_b": math.nan,
        "b_bar": None,
        "sigma_b_raw": None,
        "jitter": max(jitter_a, jitter_b),
    }
    if not math.isfinite(s_sum):
        out["status"] = status.NONFINITE
        return out

    k_new = (1.0 - eps) * k + eps * s_sum if tuned else k
    out["k"] = k_new
    if tuned and k_new <= 0.0:
        out["status"] = status.K_NONPOSITIVE
        return out

    z_b = 1.0 - s_sum / k_new
    out["z_b"] = z_b
    if not math.isfinite(z_b) or (tuned and z_b < 0.0):
        out["status"] = status.ZB_NEGATIVE
        return out
    if tuned and z_b <= zb_exit:
        out["status"] = status.ZB_CONVERGED
        return out

    kz = k_new * z_b
    if abs(kz) < 1e-300:
        out["status"] = status.KZ_UNDERFLOW
        return out

    # Laplace corrections; coefficient rows are indexed by the summed h'.
    coef2 = (s2 / kz) * inv_b
    corr2 = coef2.T @ gerf
    coef1 = np.sqrt(2.0 / (math.pi * s2 * d))[:, None] * (s2 * inv_b) ** 2 / kz
    corr1 = coef1.T @ gexp

    if use_stale_a:
        ridge = inv_b @ (a_bar.T @ v)
    else:
        ridge = t_mat
    b_new = ridge - corr2
    sigma_b_raw = s2 * d[:, None] - corr1 - corr2 * corr2

    if not (np.isfinite(a_new).all() and np.isfinite(b_new).all()
            and np.isfinite(sigma_b_raw).all()):
        out["status"] = status.NONFINITE
        return out
    out["b_bar"] = b_new
    out["sigma_b_raw"] = sigma_b_raw
    return out
