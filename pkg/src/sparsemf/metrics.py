"""Reconstruction quality measures that quotient out MF degeneracies.

A factorization is only identified up to a column permutation of A (with
the matching row permutation of B), per-column sign flips, and per-column
rescaling {c_h a_lh, b_hm / c_h}.  The A-side error therefore compares
each ground-truth column against the best-matching estimate column after
unit-RMS normalization and an optimal sign; the B-side error reuses the
A-side signs.  Concretely:

    rmse_a = sqrt( (1/LH) sum_h min_{h', s} sum_l (a*_lh - s a_bar_lh'/N_h')^2 )
    rmse_b = sqrt( (1/HM) sum_h min_{h'}   sum_m (b*_hm - s'_h N_h' b_bar_h'm)^2 )
    N_h'   = sqrt( sum_l a_bar_lh'^2 / L )

The per-h minimum is deliberately independent across h (it is not forced
to be a one-to-one assignment); ``brute_force_alignment`` also reports the
best permutation assignment for comparison.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ZeroColumnError

#: Entries of the normalized sparse factor below this count as zero.
SPARSITY_THRESHOLD = 1e-2


@dataclass(frozen=True)
class Alignment:
    """Per-row matching of ground-truth columns to estimate columns."""

    assignment: np.ndarray  # (H,) index into estimate columns
    signs: np.ndarray       # (H,) entries in {-1.0, +1.0}
    col_norms: np.ndarray   # (H',) unit-RMS normalizers of every estimate column


@dataclass(frozen=True)
class MetricsReport:
    rmse_a: float
    rmse_b: float
    rmse_v: float
    sparsity_b: float
    alignment: Alignment


def column_norms(a_bar: np.ndarray) -> np.ndarray:
    """Per-column RMS normalizers N_h = sqrt(sum_l a_lh^2 / L)."""
    norms = np.sqrt((a_bar * a_bar).sum(axis=0) / a_bar.shape[0])
    if np.any(norms == 0.0):
        raise ZeroColumnError("estimate factor has a zero column")
    return norms


def align_and_rmse_a(a_star: np.ndarray,
                     a_bar: np.ndarray) -> tuple[float, Alignment]:
    """A-side RMSE with per-column best match over (column, sign).

    For each ground-truth column h independently, picks the estimate
    column h' and sign s minimizing the squared distance to the unit-RMS
    scaled column s * a_bar[:, h'] / N_h'.
    """
    if a_star.shape != a_bar.shape:
        raise DimensionMismatchError(
            f"shape mismatch: {a_star.shape} vs {a_bar.shape}")
    l_dim, h_dim = a_star.shape
    norms = column_norms(a_bar)
    unit = a_bar / norms  # columns with sum_l u^2 = L
    # cost(h, h', s) = |a*_h|^2 + L - 2 s <a*_h, u_h'>, so the best pair
    # maximizes |<a*_h, u_h'>|; the winning cost is then recomputed from
    # the actual differences, which stays exact when the match is perfect.
    gram = a_star.T @ unit
    best = np.abs(gram).argmax(axis=1)
    inner = gram[np.arange(h_dim), best]
    signs = np.where(inner >= 0.0, 1.0, -1.0)
    diff = a_star - signs * unit[:, best]
    total = float((diff * diff).sum())
    rmse = np.sqrt(total / (l_dim * h_dim))
    return float(rmse), Alignment(assignment=best, signs=signs,
                                  col_norms=norms)


def rmse_b(b_star: np.ndarray, b_bar: np.ndarray, align: Alignment) -> float:
    """B-side RMSE; per-row best column match with the A-side sign fixed.

    Compares b*_hm against s'_h * N_h' * b_bar_h'm, minimizing over h'
    only: the sign s'_h comes from the paired A-side alignment.
    """
    if b_star.shape[1] != b_bar.shape[1] or b_star.shape[0] != len(align.signs):
        raise DimensionMismatchError(
            f"shape mismatch: {b_star.shape} vs {b_bar.shape}")
    h_dim, m_dim = b_star.shape
    scaled = align.col_norms[:, None] * b_bar       # (H', M)
    total = 0.0
    for h in range(h_dim):
        diff = b_star[h] - align.signs[h] * scaled
        total += float((diff * diff).sum(axis=1).min())
    return float(np.sqrt(total / (h_dim * m_dim)))


def rmse_v(v: np.ndarray, a_bar: np.ndarray, b_bar: np.ndarray) -> float:
    """Residual RMSE of the reconstructed product; alignment-free."""
    if v.shape != (a_bar.shape[0], b_bar.shape[1]):
        raise DimensionMismatchError(
            f"shape mismatch: {v.shape} vs {a_bar.shape} x {b_bar.shape}")
    resid = v - a_bar @ b_bar
    return float(np.sqrt((resid * resid).mean()))


def sparsity_b(a_bar: np.ndarray, b_bar: np.ndarray,
               threshold: float = SPARSITY_THRESHOLD) -> float:
    """Fraction of near-zero entries of B after scale normalization.

    Rescales {a/N, N b} so the A columns have unit RMS, then counts
    entries with |N_h b_hm| < threshold.  Invariant under the degeneracy
    group because N_h absorbs any per-column rescaling.
    """
    norms = column_norms(a_bar)
    return float((np.abs(norms[:, None] * b_bar) < threshold).mean())


def evaluate(v: np.ndarray, a_star: np.ndarray, b_star: np.ndarray,
             a_bar: np.ndarray, b_bar: np.ndarray,
             threshold: float = SPARSITY_THRESHOLD) -> MetricsReport:
    """All measures against a known ground truth."""
    err_a, align = align_and_rmse_a(a_star, a_bar)
    return MetricsReport(
        rmse_a=err_a,
        rmse_b=rmse_b(b_star, b_bar, align),
        rmse_v=rmse_v(v, a_bar, b_bar),
        sparsity_b=sparsity_b(a_bar, b_bar, threshold),
        alignment=align,
    )


@dataclass(frozen=True)
class BruteForceResult:
    rmse: float                      # per-h independent minimum (as above)
    alignment: Alignment
    permutation_rmse: float          # best one-to-one assignment
    permutation: tuple[int, ...]


def brute_force_alignment(a_star: np.ndarray, a_bar: np.ndarray,
                          max_h: int = 8) -> BruteForceResult:
    """Exhaustive reference for ``align_and_rmse_a``.

    Enumerates every (column, sign) choice per h with explicit difference
    sums, and additionally searches all H! one-to-one assignments.  The
    per-h relaxation can map two ground-truth columns onto one estimate
    column, so its objective is never above the permutation objective.
    """
    l_dim, h_dim = a_star.shape
    if h_dim > max_h:
        raise ValueError(f"H={h_dim} too large for exhaustive search "
                         f"(limit {max_h})")
    norms = column_norms(a_bar)

    cost = np.empty((h_dim, a_bar.shape[1], 2))
    for h in range(h_dim):
        for hp in range(a_bar.shape[1]):
            for si, s in enumerate((1.0, -1.0)):
                diff = a_star[:, h] - s * a_bar[:, hp] / norms[hp]
                cost[h, hp, si] = (diff * diff).sum()

    per_h = cost.min(axis=2)                 # (H, H') over signs
    assignment = per_h.argmin(axis=1)
    signs = np.empty(h_dim)
    total = 0.0
    for h in range(h_dim):
        hp = assignment[h]
        si = cost[h, hp].argmin()
        signs[h] = 1.0 if si == 0 else -1.0
        total += cost[h, hp, si]
    rmse = float(np.sqrt(total / (l_dim * h_dim)))

    best_perm = None
    best_total = np.inf
    for perm in itertools.permutations(range(a_bar.shape[1]), h_dim):
        t = sum(per_h[h, perm[h]] for h in range(h_dim))
        if t < best_total:
            best_total = t
            best_perm = perm
    perm_rmse = float(np.sqrt(best_total / (l_dim * h_dim)))

    return BruteForceResult(
        rmse=rmse,
        alignment=Alignment(assignment=assignment, signs=signs,
                            col_norms=norms),
        permutation_rmse=perm_rmse,
        permutation=best_perm,
    )
