"""Run-loop semantics: termination, rollback, tracing, determinism."""

import numpy as np
import pytest

from sparsemf import _kernels
from sparsemf._kernels import status as kstatus
from sparsemf.errors import NotPositiveDefiniteError
from sparsemf.generate import observe, sample_ground_truth
from sparsemf.solver import SolverConfig, Termination, run


def small_problem(seed=0, l_dim=30, m_dim=30, h_dim=3, rho=0.5, sigma=0.1):
    gt = sample_ground_truth(l_dim, m_dim, h_dim, rho, seed=seed)
    return gt, observe(gt, sigma=sigma)


def test_run_is_deterministic(backend):
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1, k0=1e5, max_iters=40, init_seed=5,
                       backend=backend)
    s1, t1 = run(obs, cfg, h_dim=3)
    s2, t2 = run(obs, cfg, h_dim=3)
    assert np.array_equal(s1.a_bar, s2.a_bar)
    assert np.array_equal(s1.b_bar, s2.b_bar)
    assert s1.k == s2.k and s1.z_b == s2.z_b
    assert [(r.iter, r.k, r.z_b) for r in t1.records] == \
           [(r.iter, r.k, r.z_b) for r in t2.records]


def test_threshold_above_initial_zb_stops_after_one_iteration():
    _, obs = small_problem()
    # k0 huge puts the first z_b near 1, below the absurd threshold 2.0.
    cfg = SolverConfig(sigma=0.1, k0=1e12, zb_threshold=2.0, max_iters=100,
                       init_seed=1)
    state, trace = run(obs, cfg, h_dim=3)
    assert state.iter == 1
    assert trace.termination is Termination.ZB_BELOW_THRESHOLD


def test_negative_zb_rolls_back_to_previous_iteration():
    _, obs = small_problem()
    # k0 far below the first S: z_b < 0 on iteration 1, init state returned.
    cfg = SolverConfig(sigma=0.1, k0=1e-3, max_iters=100, init_seed=1)
    state, trace = run(obs, cfg, h_dim=3)
    assert trace.termination is Termination.ZB_NONFINITE_OR_NEGATIVE
    assert state.iter == 0
    assert state.z_b == np.inf
    assert trace.records[-1].iter == 0


def test_max_iters_termination():
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1, k0=1e9, max_iters=7, init_seed=2)
    state, trace = run(obs, cfg, h_dim=3)
    assert state.iter == 7
    assert trace.termination is Termination.MAX_ITERS


def test_fixed_k_runs_through_zero_point():
    _, obs = small_problem()
    # k far below S: z_b is negative throughout, but fixed-k mode keeps
    # iterating to the cap.
    cfg = SolverConfig(sigma=0.1, mode="fixed_k", fixed_k=5.0, max_iters=50,
                       init_seed=3)
    state, trace = run(obs, cfg, h_dim=3)
    assert state.iter == 50
    assert trace.termination is Termination.MAX_ITERS
    assert state.z_b < 0


def test_trace_stride_and_final_record():
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1, k0=1e9, max_iters=25, init_seed=2)
    _, trace = run(obs, cfg, h_dim=3, trace_stride=10)
    iters = [r.iter for r in trace.records]
    assert iters == [0, 10, 20, 25]  # stride hits plus the final iteration
    assert iters == sorted(iters)


def test_metric_hook_merged_into_trace():
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1, k0=1e9, max_iters=5, init_seed=2)
    calls = []

    def hook(state):
        calls.append(state.iter)
        return {"rmse_v": float(state.iter)}

    _, trace = run(obs, cfg, h_dim=3, metric_hook=hook, trace_stride=2)
    assert calls == [0, 2, 4, 5]
    assert [r.rmse_v for r in trace.records] == [0.0, 2.0, 4.0, 5.0]
    assert all(r.rmse_a is None for r in trace.records)


def test_invalid_trace_stride():
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1)
    with pytest.raises(ValueError):
        run(obs, cfg, h_dim=3, trace_stride=0)


def test_ground_truth_warm_start_is_noiseless_fixed_point(backend):
    # Exact factors, zero-variance start, near-zero solver sigma, huge
    # fixed k: the first iteration reproduces V exactly (up to rounding).
    from sparsemf.generate import observe, sample_ground_truth
    from sparsemf.metrics import rmse_v
    from sparsemf.solver import state_from_factors

    gt = sample_ground_truth(40, 30, 3, 0.5, seed=21)
    obs = observe(gt, noiseless=True)
    cfg = SolverConfig(sigma=1e-150, mode="fixed_k", fixed_k=1e300,
                       max_iters=1, backend=backend)
    warm = state_from_factors(gt.a_star, gt.b_star, cfg,
                              sigma_b_diag=np.zeros((3, 30)))
    state, trace = run(obs, cfg, h_dim=3, initial_state=warm)
    assert state.iter == 1
    assert rmse_v(obs.v, state.a_bar, state.b_bar) < 1e-10


def test_initial_state_shape_validated():
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1, max_iters=2)
    bad = SolverConfig(sigma=0.1)
    from sparsemf.solver import init_state
    wrong = init_state(bad, 10, 10, 3)
    with pytest.raises(ValueError):
        run(obs, cfg, h_dim=3, initial_state=wrong)


def test_accepts_raw_arrays_and_observation_objects():
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1, k0=1e9, max_iters=3, init_seed=4)
    s1, _ = run(obs, cfg, h_dim=3)
    s2, _ = run(obs.v, cfg, h_dim=3)
    assert np.array_equal(s1.b_bar, s2.b_bar)


class _StubBackend:
    """Backend double emitting scripted step outcomes."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)

    def solver_step(self, v, a_bar, b_bar, sigma_b, k, sigma, c_a_diag,
                    eps, tuned, use_stale_a, zb_exit=0.0):
        out = self.outcomes.pop(0)
        if isinstance(out, Exception):
            raise out
        full = {
            "status": kstatus.OK, "a_bar": a_bar, "sigma_a_diag": np.ones(3),
            "hat_sigma_a": np.eye(3), "hat_sigma_b": np.eye(3),
            "hat_sigma_b_inv": np.eye(3), "omega": np.zeros_like(b_bar),
            "s_sum": 1.0, "k": k, "z_b": 0.5, "b_bar": b_bar,
            "sigma_b_raw": np.zeros_like(sigma_b), "jitter": 0.0,
        }
        full.update(out)
        return full


def _run_with_stub(monkeypatch, outcomes, **cfg_kw):
    stub = _StubBackend(outcomes)
    monkeypatch.setattr(_kernels, "get_backend", lambda name: stub)
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1, init_seed=0, **cfg_kw)
    return run(obs, cfg, h_dim=3)


def test_sigma_b_clamping_is_counted(monkeypatch):
    raw = np.full((3, 30), -0.25)
    raw[0, :5] = 1.0
    state, trace = _run_with_stub(
        monkeypatch,
        [{"sigma_b_raw": raw.copy(), "z_b": 0.5}], max_iters=1)
    assert state.clamp_count == 85
    assert trace.total_clamped == 85
    assert (state.sigma_b_diag >= 0).all()
    assert np.array_equal(state.sigma_b_raw, raw)
    assert state.sigma_b_diag[0, 0] == 1.0 and state.sigma_b_diag[1, 0] == 0.0


def test_nonfinite_status_diverges_with_rollback(monkeypatch):
    state, trace = _run_with_stub(
        monkeypatch,
        [{"z_b": 0.5}, {"status": kstatus.NONFINITE}], max_iters=10)
    assert trace.termination is Termination.DIVERGED
    assert state.iter == 1  # the bad second iteration was discarded


def test_kz_underflow_diverges(monkeypatch):
    state, trace = _run_with_stub(
        monkeypatch, [{"status": kstatus.KZ_UNDERFLOW}], max_iters=10)
    assert trace.termination is Termination.DIVERGED
    assert state.iter == 0


def test_k_nonpositive_diverges(monkeypatch):
    state, trace = _run_with_stub(
        monkeypatch, [{"status": kstatus.K_NONPOSITIVE}], max_iters=10)
    assert trace.termination is Termination.DIVERGED


def test_spd_failure_diverges(monkeypatch):
    state, trace = _run_with_stub(
        monkeypatch,
        [{"z_b": 0.8}, NotPositiveDefiniteError("boom")], max_iters=10)
    assert trace.termination is Termination.DIVERGED
    assert trace.error == "boom"
    assert state.iter == 1


def test_all_entries_finite_after_run(backend):
    _, obs = small_problem()
    cfg = SolverConfig(sigma=0.1, k0=1e7, max_iters=60, init_seed=8,
                       backend=backend)
    state, _ = run(obs, cfg, h_dim=3)
    for arr in (state.a_bar, state.b_bar, state.sigma_a_diag,
                state.sigma_b_diag, state.omega):
        assert np.isfinite(arr).all()
    assert state.sigma_a_diag.min() > 0
