"""Compiled solver kernel: one full iteration with fused loops.

Mirrors ``_numpy.solver_step`` exactly (same stage order, same jitter
policy for the SPD inverses) but fuses the special-function stage and the
Laplace-correction contractions, and calls BLAS/LAPACK directly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, fabs, isfinite, sqrt
from scipy.linalg.cython_blas cimport dgemm
from scipy.linalg.cython_lapack cimport dpotrf, dpotri

from ..errors import NonPositiveInverseDiagonalError, NotPositiveDefiniteError
from . import status as _status

cnp.import_array()

cdef double M_PI = 3.14159265358979323846
cdef double INV_SQRT_PI = 1.0 / sqrt(M_PI)
cdef double JITTER_START = 1e-10
cdef double JITTER_STOP = 1e-4


cdef void _gemm(char ta, char tb, int m, int n, int k, double alpha,
                double* a, int lda, double* b, int ldb, double beta,
                double* c, int ldc) noexcept nogil:
    # Row-major product via the column-major identity C^T = B^T A^T.
    dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef int _spd_inverse(double[:, ::1] m, double[:, ::1] out,
                      double* jitter_used) noexcept nogil:
    """Cholesky inverse with escalating diagonal jitter; 0 on success."""
    cdef int n = m.shape[0]
    cdef int info, i, j
    cdef double base = 0.0, jitter = 0.0, level = JITTER_START
    cdef char lo = 76  # 'L'
    for i in range(n):
        base += m[i, i]
    base /= n
    while True:
        for i in range(n):
            for j in range(n):
                out[i, j] = m[i, j]
            out[i, i] += jitter
        # Column-major 'L' of this buffer is the row-major upper triangle.
        dpotrf(&lo, &n, &out[0, 0], &n, &info)
        if info == 0:
            dpotri(&lo, &n, &out[0, 0], &n, &info)
            if info == 0:
                break
        if level > JITTER_STOP or base <= 0.0 or not isfinite(base):
            return -1
        jitter = level * base
        level *= 10.0
    # potri filled the row-major upper triangle; mirror it down.
    for i in range(n):
        for j in range(i + 1, n):
            out[j, i] = out[i, j]
    jitter_used[0] = jitter
    return 0


def solver_step(double[:, ::1] v, double[:, ::1] a_bar, double[:, ::1] b_bar,
                double[:, ::1] sigma_b, double k, double sigma,
                double[::1] c_a_diag, double eps, bint tuned,
                bint use_stale_a, double zb_exit=0.0):
    """Compiled twin of ``_numpy.solver_step``; same inputs and outputs."""
    cdef int l_dim = v.shape[0], m_dim = v.shape[1], h_dim = b_bar.shape[0]
    cdef double s2 = sigma * sigma
    cdef int h, hp, m, l
    cdef double acc, w, e, g, sc, val

    out_np = {
        "status": _status.OK, "a_bar": None, "sigma_a_diag": None,
        "hat_sigma_a": None, "hat_sigma_b": None, "hat_sigma_b_inv": None,
        "omega": None, "s_sum": 0.0, "k": k, "z_b": float("nan"),
        "b_bar": None, "sigma_b_raw": None, "jitter": 0.0,
    }

    hat_a_np = np.empty((h_dim, h_dim))
    inv_a_np = np.empty((h_dim, h_dim))
    cdef double[:, ::1] hat_a = hat_a_np, inv_a = inv_a_np
    cdef double jit_a = 0.0, jit_b = 0.0

    # hat_sigma_a = diag(s2/c_a + rowsum(sigma_b)) + b_bar b_bar^T
    _gemm(b'N', b'T', h_dim, h_dim, m_dim, 1.0, &b_bar[0, 0], m_dim,
          &b_bar[0, 0], m_dim, 0.0, &hat_a[0, 0], h_dim)
    for h in range(h_dim):
        acc = 0.0
        for m in range(m_dim):
            acc += sigma_b[h, m]
        hat_a[h, h] += s2 / c_a_diag[h] + acc
    if _spd_inverse(hat_a, inv_a, &jit_a) != 0:
        raise NotPositiveDefiniteError("hat_sigma_a inversion failed")

    sigma_a_np = np.empty(h_dim)
    cdef double[::1] sigma_a_diag = sigma_a_np
    for h in range(h_dim):
        sigma_a_diag[h] = s2 * inv_a[h, h]

    # a_new = (v @ b_bar^T) @ inv_a^T
    w_np = np.empty((l_dim, h_dim))
    a_new_np = np.empty((l_dim, h_dim))
    cdef double[:, ::1] w_mat = w_np, a_new = a_new_np
    _gemm(b'N', b'T', l_dim, h_dim, m_dim, 1.0, &v[0, 0], m_dim,
          &b_bar[0, 0], m_dim, 0.0, &w_mat[0, 0], h_dim)
    _gemm(b'N', b'T', l_dim, h_dim, h_dim, 1.0, &w_mat[0, 0], h_dim,
          &inv_a[0, 0], h_dim, 0.0, &a_new[0, 0], h_dim)

    # hat_sigma_b = L diag(sigma_a_diag) + a_new^T a_new
    hat_b_np = np.empty((h_dim, h_dim))
    inv_b_np = np.empty((h_dim, h_dim))
    cdef double[:, ::1] hat_b = hat_b_np, inv_b = inv_b_np
    _gemm(b'T', b'N', h_dim, h_dim, l_dim, 1.0, &a_new[0, 0], h_dim,
          &a_new[0, 0], h_dim, 0.0, &hat_b[0, 0], h_dim)
    for h in range(h_dim):
        hat_b[h, h] += l_dim * sigma_a_diag[h]
    if _spd_inverse(hat_b, inv_b, &jit_b) != 0:
        raise NotPositiveDefiniteError("hat_sigma_b inversion failed")
    for h in range(h_dim):
        if inv_b[h, h] <= 0.0:
            raise NonPositiveInverseDiagonalError(
                "hat_sigma_b inverse has a non-positive diagonal entry")

    out_np["a_bar"] = a_new_np
    out_np["sigma_a_diag"] = sigma_a_np
    out_np["hat_sigma_a"] = hat_a_np
    out_np["hat_sigma_b"] = hat_b_np
    out_np["hat_sigma_b_inv"] = inv_b_np
    out_np["jitter"] = jit_a if jit_a > jit_b else jit_b

    # t = inv_b @ (a_new^T v); omega, exp/erf tables, and S in one pass
    atv_np = np.empty((h_dim, m_dim))
    t_np = np.empty((h_dim, m_dim))
    cdef double[:, ::1] atv = atv_np, t_mat = t_np
    _gemm(b'T', b'N', h_dim, m_dim, l_dim, 1.0, &a_new[0, 0], h_dim,
          &v[0, 0], m_dim, 0.0, &atv[0, 0], m_dim)
    _gemm(b'N', b'N', h_dim, m_dim, h_dim, 1.0, &inv_b[0, 0], h_dim,
          &atv[0, 0], m_dim, 0.0, &t_mat[0, 0], m_dim)

    omega_np = np.empty((h_dim, m_dim))
    gexp_np = np.empty((h_dim, m_dim))
    gerf_np = np.empty((h_dim, m_dim))
    cdef double[:, ::1] omega = omega_np, gexp = gexp_np, gerf = gerf_np
    cdef double s_sum = 0.0
    with nogil:
        for h in range(h_dim):
            sc = sqrt(2.0 * s2 * inv_b[h, h])
            for m in range(m_dim):
                w = t_mat[h, m] / sc
                omega[h, m] = w
                e = exp(-w * w)
                g = erf(w)
                gexp[h, m] = e
                gerf[h, m] = g
                s_sum += sc * INV_SQRT_PI * e + t_mat[h, m] * g

    out_np["omega"] = omega_np
    out_np["s_sum"] = s_sum
    if not isfinite(s_sum):
        out_np["status"] = _status.NONFINITE
        return out_np

    cdef double k_new = (1.0 - eps) * k + eps * s_sum if tuned else k
    out_np["k"] = k_new
    if tuned and k_new <= 0.0:
        out_np["status"] = _status.K_NONPOSITIVE
        return out_np
    cdef double z_b = 1.0 - s_sum / k_new
    out_np["z_b"] = z_b
    if not isfinite(z_b) or (tuned and z_b < 0.0):
        out_np["status"] = _status.ZB_NEGATIVE
        return out_np
    if tuned and z_b <= zb_exit:
        out_np["status"] = _status.ZB_CONVERGED
        return out_np
    cdef double kz = k_new * z_b
    if fabs(kz) < 1e-300:
        out_np["status"] = _status.KZ_UNDERFLOW
        return out_np

    # Correction coefficients, rows indexed by the summed h'.
    coef1_np = np.empty((h_dim, h_dim))
    coef2_np = np.empty((h_dim, h_dim))
    cdef double[:, ::1] coef1 = coef1_np, coef2 = coef2_np
    for hp in range(h_dim):
        sc = sqrt(2.0 / (M_PI * s2 * inv_b[hp, hp]))
        for h in range(h_dim):
            val = s2 * inv_b[hp, h]
            coef2[hp, h] = val / kz
            coef1[hp, h] = sc * val * val / kz

    corr1_np = np.empty((h_dim, m_dim))
    corr2_np = np.empty((h_dim, m_dim))
    cdef double[:, ::1] corr1 = corr1_np, corr2 = corr2_np
    _gemm(b'T', b'N', h_dim, m_dim, h_dim, 1.0, &coef1[0, 0], h_dim,
          &gexp[0, 0], m_dim, 0.0, &corr1[0, 0], m_dim)
    _gemm(b'T', b'N', h_dim, m_dim, h_dim, 1.0, &coef2[0, 0], h_dim,
          &gerf[0, 0], m_dim, 0.0, &corr2[0, 0], m_dim)

    cdef double[:, ::1] ridge = t_mat
    ridge_np = None
    if use_stale_a:
        ridge_np = np.empty((h_dim, m_dim))
        ridge = ridge_np
        _gemm(b'T', b'N', h_dim, m_dim, l_dim, 1.0, &a_bar[0, 0], h_dim,
              &v[0, 0], m_dim, 0.0, &atv[0, 0], m_dim)
        _gemm(b'N', b'N', h_dim, m_dim, h_dim, 1.0, &inv_b[0, 0], h_dim,
              &atv[0, 0], m_dim, 0.0, &ridge[0, 0], m_dim)

    b_new_np = np.empty((h_dim, m_dim))
    sigma_b_raw_np = np.empty((h_dim, m_dim))
    cdef double[:, ::1] b_new = b_new_np, sigma_b_raw = sigma_b_raw_np
    cdef bint ok = True
    with nogil:
        for h in range(h_dim):
            val = s2 * inv_b[h, h]
            for m in range(m_dim):
                g = ridge[h, m] - corr2[h, m]
                e = val - corr1[h, m] - corr2[h, m] * corr2[h, m]
                b_new[h, m] = g
                sigma_b_raw[h, m] = e
                if not (isfinite(g) and isfinite(e)):
                    ok = False
        if ok:
            for l in range(l_dim):
                for h in range(h_dim):
                    if not isfinite(a_new[l, h]):
                        ok = False
                        break
                if not ok:
                    break
    if not ok:
        out_np["status"] = _status.NONFINITE
        return out_np
    out_np["b_bar"] = b_new_np
    out_np["sigma_b_raw"] = sigma_b_raw_np
    return out_np
