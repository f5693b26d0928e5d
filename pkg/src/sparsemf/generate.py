"""Ground-truth factor generation and noisy observation.

Synthetic protocol: a dense L x H factor with i.i.d. N(0, 1) entries, a
sparse H x M factor with i.i.d. Bernoulli-Gaussian entries (zero with
probability 1 - rho, otherwise N(0, 1)), and an observation
V = A* B* + E with E ~ N(0, sigma^2).

Reproducibility: one root seed fans out into two independent streams
(factors, noise) via ``numpy.random.SeedSequence.spawn``, so a noise sweep
can reuse a single factor ensemble while staying bit-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class GroundTruth:
    """Factor pair plus the parameters that generated it."""

    a_star: np.ndarray  # (L, H), dense Gaussian
    b_star: np.ndarray  # (H, M), Bernoulli-Gaussian
    rho: float          # weight of the Gaussian slab = P(entry != 0)
    sigma: float        # noise level used by observe()
    seed: int

    @property
    def shape(self) -> tuple[int, int, int]:
        (l, h), (_, m) = self.a_star.shape, self.b_star.shape
        return l, m, h

    def zero_fraction(self) -> float:
        """Fraction of exactly-zero entries in the sparse factor."""
        return float((self.b_star == 0.0).mean())


@dataclass(frozen=True)
class ObservationMatrix:
    """The observed L x M matrix and where it came from."""

    v: np.ndarray
    provenance: str = "external"  # "synthetic" | "image" | "external"
    ground_truth: Optional[GroundTruth] = field(default=None, repr=False)
    source_path: Optional[str] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.v.shape


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    factors, noise = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(factors), np.random.default_rng(noise)


def sample_ground_truth(l_dim: int, m_dim: int, h_dim: int, rho: float,
                        seed: int) -> GroundTruth:
    """Draw a ground-truth factor pair.

    Parameters
    ----------
    l_dim, m_dim, h_dim : int
        Observation rows, observation columns, inner dimension.
    rho : float in (0, 1]
        Probability that a sparse-factor entry is nonzero.
    seed : int
        Root seed; identical arguments reproduce bit-identical output.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    if min(l_dim, m_dim, h_dim) < 1:
        raise ValueError("dimensions must be >= 1")
    rng, _ = _streams(seed)
    a_star = rng.standard_normal((l_dim, h_dim))
    mask = rng.random((h_dim, m_dim)) < rho
    values = rng.standard_normal((h_dim, m_dim))
    b_star = np.where(mask, values, 0.0)
    return GroundTruth(a_star=a_star, b_star=b_star, rho=rho, sigma=0.0,
                       seed=seed)


def observe(gt: GroundTruth, sigma: Optional[float] = None,
            noiseless: bool = False) -> ObservationMatrix:
    """Produce V = A* B* + E with E ~ N(0, sigma^2).

    The noise stream is derived from ``gt.seed`` independently of the
    factor stream.  ``noiseless=True`` skips the noise draw entirely and
    returns the exact product (sigma = 0 is not representable in the
    solver, which divides by sigma^2).
    """
    if sigma is None:
        sigma = gt.sigma
    product = gt.a_star @ gt.b_star
    if noiseless:
        v = product
        sigma = 0.0
    else:
        if sigma <= 0.0:
            raise ValueError("sigma must be > 0 unless noiseless=True")
        _, noise_rng = _streams(gt.seed)
        v = product + sigma * noise_rng.standard_normal(product.shape)
    gt_out = GroundTruth(a_star=gt.a_star, b_star=gt.b_star, rho=gt.rho,
                         sigma=sigma, seed=gt.seed)
    return ObservationMatrix(v=v, provenance="synthetic", ground_truth=gt_out)
