"""Variational-Bayes matrix factorization with Laplace-prior scale tuning.

Model: V = A B + E with V in R^{L x M}, A in R^{L x H} dense under a
Gaussian prior with per-component variances (C_A)_hh, B in R^{H x M}
sparse under a Laplace prior exp(-|b|/k), and E i.i.d. N(0, sigma^2).
The factorized trial posterior has closed-form mean/variance updates when
the Laplace factor is expanded to first order in 1/k; the expansion makes
every sparsity-inducing term carry a 1/(k z_b) factor, where

    z_b = 1 - S/k,
    S   = sum_{m,h} [ sqrt(2 sigma^2 d_h / pi) exp(-omega_hm^2)
                      + t_hm erf(omega_hm) ],

with d_h the diagonal of hat_sigma_b^{-1}, t the ridge estimate of B, and
omega = t / sqrt(2 sigma^2 d).  S is the trial-posterior expectation of
sum |b_hm|, so z_b is the first-order normalization of the sparse prior.

Scale tuning drives k to the zero point of z_b by the damped fixed-point
iteration k <- (1 - eps) k + eps S.  As z_b -> 0+ the corrections grow
until they dominate and sparsify B; the loop stops once z_b falls below a
threshold, before the expansion turns unstable.

One iteration updates, in order: hat_sigma_a, sigma_a, a_bar, hat_sigma_b,
omega, k, z_b, sigma_b, b_bar.  Both hat matrices are index-free (the same
H x H matrix serves every row l, resp. column m).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.special

from . import _kernels
from ._kernels import status as _status
from .errors import (
    NonPositiveInverseDiagonalError,
    NonPositiveKError,
    NotPositiveDefiniteError,
    ZeroDenominatorError,
)
from .linalg import spd_inverse

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass
class SolverConfig:
    """Solver parameters.

    sigma is the known noise magnitude (it appears in denominators, so it
    must be positive; use a small surrogate such as 0.03 for noiseless
    data).  mode is "tuned" (zero-point scale tuning) or "fixed_k"
    (ablation: the k update is removed and ``fixed_k`` is used throughout).
    """

    sigma: float
    c_a_diag: Optional[np.ndarray] = None  # (H,) positive; None -> all ones
    epsilon: float = 0.1                   # damping of the k update
    k0: float = 1e3                        # initial k in tuned mode
    zb_threshold: float = 1e-5
    max_iters: int = 1_000_000
    mode: str = "tuned"                    # "tuned" | "fixed_k"
    fixed_k: Optional[float] = None
    init_seed: int = 0
    # Use the pre-update a_bar in the ridge term of the b_bar update
    # (the other stages always see the current a_bar).  Off by default;
    # kept as a switch for A/B comparison of the two staging variants.
    use_stale_a_in_b_update: bool = False
    backend: str = "auto"                  # "auto" | "compiled" | "numpy"

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError("sigma must be > 0")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must be in (0, 1]")
        if self.zb_threshold <= 0.0:
            raise ValueError("zb_threshold must be > 0")
        if self.k0 <= 0.0:
            raise ValueError("k0 must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mode not in ("tuned", "fixed_k"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "fixed_k":
            if self.fixed_k is None or self.fixed_k <= 0.0:
                raise ValueError("fixed_k mode requires fixed_k > 0")
        if self.c_a_diag is not None:
            self.c_a_diag = np.asarray(self.c_a_diag, dtype=np.float64)
            if np.any(self.c_a_diag <= 0.0):
                raise ValueError("c_a_diag entries must be > 0")

    def resolve_c_a(self, h_dim: int) -> np.ndarray:
        if self.c_a_diag is None:
            return np.ones(h_dim)
        if self.c_a_diag.shape != (h_dim,):
            raise ValueError(f"c_a_diag has shape {self.c_a_diag.shape}, "
                             f"expected ({h_dim},)")
        return np.ascontiguousarray(self.c_a_diag)


@dataclass
class FactorState:
    """Every per-iteration solver quantity.

    sigma_a_diag is a single H-vector: the A-side posterior variance is
    the same for every row l.  sigma_b_diag holds one H-vector per column
    m, floored at zero before reuse; the unfloored values are kept in
    sigma_b_raw for diagnostics.
    """

    a_bar: np.ndarray          # (L, H)
    b_bar: np.ndarray          # (H, M)
    sigma_a_diag: np.ndarray   # (H,)
    sigma_b_diag: np.ndarray   # (H, M), clamped >= 0
    hat_sigma_a: np.ndarray    # (H, H)
    hat_sigma_b: np.ndarray    # (H, H)
    hat_sigma_b_inv: np.ndarray
    omega: np.ndarray          # (H, M)
    k: float
    z_b: float
    iter: int = 0
    sigma_b_raw: Optional[np.ndarray] = field(default=None, repr=False)
    clamp_count: int = 0       # negative sigma_b entries floored this iter

    @property
    def shape(self) -> tuple[int, int, int]:
        (l, h), (_, m) = self.a_bar.shape, self.b_bar.shape
        return l, m, h


class Termination(enum.Enum):
    ZB_BELOW_THRESHOLD = "zb_below_threshold"
    ZB_NONFINITE_OR_NEGATIVE = "zb_nonfinite_or_negative"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


@dataclass
class TraceRecord:
    iter: int
    k: float
    z_b: float
    rmse_a: Optional[float] = None
    rmse_b: Optional[float] = None
    rmse_v: Optional[float] = None
    sparsity_b: Optional[float] = None
    clamp_count: int = 0


@dataclass
class RunTrace:
    records: list[TraceRecord] = field(default_factory=list)
    termination: Optional[Termination] = None
    error: Optional[str] = None
    total_clamped: int = 0


def init_state(cfg: SolverConfig, l_dim: int, m_dim: int,
               h_dim: int) -> FactorState:
    """Random initial state: a_bar, b_bar ~ N(0,1), sigma_b = identity
    diagonals (all ones), z_b = +inf so the loop guard always admits the
    first iteration."""
    if min(l_dim, m_dim, h_dim) < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.init_seed))
    a_bar = rng.standard_normal((l_dim, h_dim))
    b_bar = rng.standard_normal((h_dim, m_dim))
    return state_from_factors(a_bar, b_bar, cfg)


def state_from_factors(a_bar: np.ndarray, b_bar: np.ndarray,
                       cfg: SolverConfig,
                       sigma_b_diag: Optional[np.ndarray] = None
                       ) -> FactorState:
    """Iteration-0 state around given factors (warm starts).

    sigma_b defaults to all ones, matching the random initialization; pass
    zeros to start from factors treated as exact.
    """
    h_dim, m_dim = b_bar.shape
    if a_bar.shape[1] != h_dim:
        raise ValueError(f"factor shapes {a_bar.shape} x {b_bar.shape} "
                         "do not chain")
    if sigma_b_diag is None:
        sigma_b_diag = np.ones((h_dim, m_dim))
    k = cfg.fixed_k if cfg.mode == "fixed_k" else cfg.k0
    eye = np.eye(h_dim)
    return FactorState(
        a_bar=np.ascontiguousarray(a_bar, dtype=np.float64),
        b_bar=np.ascontiguousarray(b_bar, dtype=np.float64),
        sigma_a_diag=np.ones(h_dim),
        sigma_b_diag=np.ascontiguousarray(sigma_b_diag, dtype=np.float64),
        hat_sigma_a=eye.copy(),
        hat_sigma_b=eye.copy(),
        hat_sigma_b_inv=eye.copy(),
        omega=np.zeros((h_dim, m_dim)),
        k=float(k),
        z_b=math.inf,
        iter=0,
    )


# ---------------------------------------------------------------------------
# Single-stage updates.  These are the reference implementations of the
# individual solver equations; run() uses the selected kernel backend,
# which is checked against compositions of these in the tests.
# ---------------------------------------------------------------------------

def update_a(state: FactorState, v: np.ndarray, cfg: SolverConfig):
    """A-side stage: hat_sigma_a, sigma_a_diag, a_bar.

    hat_sigma_a = diag(sigma^2 / c_a + sum_m sigma_b[:, m]) + b_bar b_bar^T,
    sigma_a_diag = sigma^2 diag(hat_sigma_a^{-1}),
    a_bar = V b_bar^T hat_sigma_a^{-T}.
    """
    h_dim = state.b_bar.shape[0]
    s2 = cfg.sigma ** 2
    c_a = cfg.resolve_c_a(h_dim)
    hat_a = state.b_bar @ state.b_bar.T
    hat_a[np.diag_indices_from(hat_a)] += s2 / c_a + state.sigma_b_diag.sum(axis=1)
    inv_a = spd_inverse(hat_a)
    sigma_a_diag = s2 * np.diag(inv_a).copy()
    a_bar = (v @ state.b_bar.T) @ inv_a.T
    return hat_a, sigma_a_diag, a_bar


def update_hat_sigma_b(state: FactorState) -> np.ndarray:
    """hat_sigma_b = L diag(sigma_a_diag) + a_bar^T a_bar (index-free in m)."""
    l_dim = state.a_bar.shape[0]
    hat_b = state.a_bar.T @ state.a_bar
    hat_b[np.diag_indices_from(hat_b)] += l_dim * state.sigma_a_diag
    return hat_b


def compute_omega(state: FactorState, v: np.ndarray,
                  cfg: SolverConfig) -> np.ndarray:
    """omega = hat_sigma_b^{-1} (a_bar^T V) / sqrt(2 sigma^2 d), row-wise."""
    inv_b = state.hat_sigma_b_inv
    d = np.diag(inv_b)
    if np.any(d <= 0.0):
        raise NonPositiveInverseDiagonalError(
            "hat_sigma_b inverse has a non-positive diagonal entry")
    t_mat = inv_b @ (state.a_bar.T @ v)
    return t_mat / np.sqrt(2.0 * cfg.sigma ** 2 * d)[:, None]


def zb_sum(state: FactorState, v: np.ndarray, cfg: SolverConfig) -> float:
    """The scalar S: trial-posterior expectation of sum_{h,m} |b_hm|.

    Serves both the normalization z_b = 1 - S/k and the zero-point target
    of the k update.
    """
    inv_b = state.hat_sigma_b_inv
    d = np.diag(inv_b)
    t_mat = inv_b @ (state.a_bar.T @ v)
    scale = np.sqrt(2.0 * cfg.sigma ** 2 * d)
    omega = state.omega
    terms = (scale[:, None] * _INV_SQRT_PI * np.exp(-omega * omega)
             + t_mat * scipy.special.erf(omega))
    return float(terms.sum())


def update_k(state: FactorState, s_sum: float, cfg: SolverConfig) -> float:
    """Damped move of k toward S; a no-op in fixed_k mode."""
    if cfg.mode == "fixed_k":
        return float(cfg.fixed_k)
    k_new = (1.0 - cfg.epsilon) * state.k + cfg.epsilon * s_sum
    if k_new <= 0.0:
        raise NonPositiveKError(f"k update produced {k_new!r}")
    return k_new


def compute_zb(k: float, s_sum: float) -> float:
    """z_b = 1 - S/k; exactly zero when k equals S.

    May be negative for small k; negativity is a termination signal for
    the run loop, not an arithmetic error.
    """
    return 1.0 - s_sum / k


def update_b(state: FactorState, v: np.ndarray, cfg: SolverConfig,
             ridge_a: Optional[np.ndarray] = None):
    """B-side stage: means and variance diagonals with Laplace corrections.

    b_bar = t - sum_{h'} [sigma^2 inv_b[h', h] / (k z_b)] erf(omega[h', m]),
    sigma_b = sigma^2 d
              - sum_{h'} sqrt(2/(pi sigma^2 d_h')) (sigma^2 inv_b[h', h])^2
                / (k z_b) exp(-omega[h', m]^2)
              - (the b_bar correction)^2.

    ``ridge_a`` overrides the a_bar used in the ridge term only (the
    stale-update variant); omega and the corrections always reflect the
    state's current a_bar.
    """
    kz = state.k * state.z_b
    if abs(kz) < 1e-300:
        raise ZeroDenominatorError(f"|k z_b| underflowed: {kz!r}")
    inv_b = state.hat_sigma_b_inv
    d = np.diag(inv_b)
    s2 = cfg.sigma ** 2
    omega = state.omega
    gexp = np.exp(-omega * omega)
    gerf = scipy.special.erf(omega)
    coef2 = (s2 / kz) * inv_b
    corr2 = coef2.T @ gerf
    coef1 = np.sqrt(2.0 / (math.pi * s2 * d))[:, None] * (s2 * inv_b) ** 2 / kz
    corr1 = coef1.T @ gexp
    a_for_ridge = state.a_bar if ridge_a is None else ridge_a
    ridge = inv_b @ (a_for_ridge.T @ v)
    b_bar = ridge - corr2
    sigma_b_raw = s2 * d[:, None] - corr1 - corr2 * corr2
    return b_bar, sigma_b_raw


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------

_STATUS_TO_TERMINATION = {
    _status.ZB_NEGATIVE: Termination.ZB_NONFINITE_OR_NEGATIVE,
    _status.K_NONPOSITIVE: Termination.DIVERGED,
    _status.KZ_UNDERFLOW: Termination.DIVERGED,
    _status.NONFINITE: Termination.DIVERGED,
}

_STATUS_MESSAGE = {
    _status.ZB_NEGATIVE: "z_b became negative or non-finite",
    _status.K_NONPOSITIVE: "k update crossed zero",
    _status.KZ_UNDERFLOW: "|k z_b| underflowed",
    _status.NONFINITE: "non-finite value in the state",
}

MetricHook = Callable[[FactorState], dict]


def run(v, cfg: SolverConfig, h_dim: int,
        metric_hook: Optional[MetricHook] = None,
        trace_stride: int = 1,
        initial_state: Optional[FactorState] = None
        ) -> tuple[FactorState, RunTrace]:
    """Run the full iteration loop on an observation.

    In tuned mode the loop admits an iteration while z_b > cfg.zb_threshold
    and stops on: z_b at or below the threshold (success), z_b negative or
    non-finite (the state of the last completed iteration is returned),
    the iteration cap, or divergence (non-finite state, k <= 0, |k z_b|
    underflow, SPD breakdown).  Any abnormal iteration is rolled back,
    never kept.

    On a successful landing (z_b in [0, threshold]) the final iteration
    keeps its a-side update but not its b-side one: near the zero point
    z_b oscillates and can undershoot the threshold by orders of
    magnitude, which would amplify the 1/(k z_b) corrections far past
    their calibrated exit strength and wreck the factors on the very last
    step.  The a-side never involves z_b, so it is always safe to keep.

    In fixed_k mode the z_b exits do not apply: the zero point is expected
    to be crossed, so the run continues to the iteration cap unless the
    state diverges.

    ``metric_hook`` is called on recorded iterations (every
    ``trace_stride``-th, plus iteration 0 and the final one) and returns a
    dict with any of rmse_a/rmse_b/rmse_v/sparsity_b to merge into the
    trace.

    ``initial_state`` replaces the random initialization (warm starts,
    known-factor experiments); it is used as iteration 0.

    Returns the final state and the trace; the trace's ``termination``
    field says why the loop stopped.
    """
    v_arr = np.ascontiguousarray(getattr(v, "v", v), dtype=np.float64)
    if trace_stride < 1:
        raise ValueError("trace_stride must be >= 1")
    l_dim, m_dim = v_arr.shape

    backend = _kernels.get_backend(cfg.backend)
    c_a = cfg.resolve_c_a(h_dim)
    if initial_state is None:
        state = init_state(cfg, l_dim, m_dim, h_dim)
    else:
        state = initial_state
        if state.shape != (l_dim, m_dim, h_dim):
            raise ValueError(f"initial state shape {state.shape} does not "
                             f"match ({l_dim}, {m_dim}, {h_dim})")
    tuned = cfg.mode == "tuned"

    trace = RunTrace()

    def record(st: FactorState):
        rec = TraceRecord(iter=st.iter, k=st.k, z_b=st.z_b,
                          clamp_count=st.clamp_count)
        if metric_hook is not None:
            for key, val in metric_hook(st).items():
                setattr(rec, key, val)
        trace.records.append(rec)

    record(state)
    termination = None
    while not tuned or state.z_b > cfg.zb_threshold:
        if state.iter >= cfg.max_iters:
            termination = Termination.MAX_ITERS
            break
        try:
            out = backend.solver_step(
                v_arr, state.a_bar, state.b_bar, state.sigma_b_diag,
                state.k, cfg.sigma, c_a, cfg.epsilon, tuned,
                cfg.use_stale_a_in_b_update,
                cfg.zb_threshold if tuned else 0.0)
        except (NotPositiveDefiniteError, NonPositiveInverseDiagonalError) as exc:
            termination = Termination.DIVERGED
            trace.error = str(exc)
            break
        code = out["status"]
        if code == _status.ZB_CONVERGED:
            state = FactorState(
                a_bar=out["a_bar"],
                b_bar=state.b_bar,
                sigma_a_diag=out["sigma_a_diag"],
                sigma_b_diag=state.sigma_b_diag,
                hat_sigma_a=out["hat_sigma_a"],
                hat_sigma_b=out["hat_sigma_b"],
                hat_sigma_b_inv=out["hat_sigma_b_inv"],
                omega=out["omega"],
                k=out["k"],
                z_b=out["z_b"],
                iter=state.iter + 1,
                sigma_b_raw=state.sigma_b_raw,
                clamp_count=0,
            )
            termination = Termination.ZB_BELOW_THRESHOLD
            break
        if code != _status.OK:
            termination = _STATUS_TO_TERMINATION[code]
            trace.error = _STATUS_MESSAGE[code]
            break
        raw = out["sigma_b_raw"]
        clamp_count = int((raw < 0.0).sum())
        state = FactorState(
            a_bar=out["a_bar"],
            b_bar=out["b_bar"],
            sigma_a_diag=out["sigma_a_diag"],
            sigma_b_diag=np.maximum(raw, 0.0),
            hat_sigma_a=out["hat_sigma_a"],
            hat_sigma_b=out["hat_sigma_b"],
            hat_sigma_b_inv=out["hat_sigma_b_inv"],
            omega=out["omega"],
            k=out["k"],
            z_b=out["z_b"],
            iter=state.iter + 1,
            sigma_b_raw=raw,
            clamp_count=clamp_count,
        )
        trace.total_clamped += clamp_count
        if state.iter % trace_stride == 0:
            record(state)
    else:
        termination = Termination.ZB_BELOW_THRESHOLD

    if trace.records[-1].iter != state.iter:
        record(state)
    trace.termination = termination
    return state, trace
