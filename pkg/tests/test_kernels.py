"""Compiled kernel vs NumPy fallback: identical step semantics."""

import numpy as np
import pytest

from sparsemf._kernels import HAVE_COMPILED, get_backend, status

pytestmark = pytest.mark.skipif(not HAVE_COMPILED,
                                reason="compiled kernels not built")

ARRAY_KEYS = ("a_bar", "sigma_a_diag", "hat_sigma_a", "hat_sigma_b",
              "hat_sigma_b_inv", "omega", "b_bar", "sigma_b_raw")
SCALAR_KEYS = ("s_sum", "k", "z_b")


def random_inputs(rng, l_dim, m_dim, h_dim):
    return dict(
        v=rng.standard_normal((l_dim, m_dim)),
        a_bar=rng.standard_normal((l_dim, h_dim)),
        b_bar=rng.standard_normal((h_dim, m_dim)),
        sigma_b=np.abs(rng.standard_normal((h_dim, m_dim))),
        c_a_diag=0.5 + rng.random(h_dim),
    )


def assert_steps_agree(out_np, out_c, rtol=1e-11):
    assert out_np["status"] == out_c["status"]
    for key in SCALAR_KEYS:
        ref = out_np[key]
        if np.isfinite(ref):
            assert abs(out_c[key] - ref) <= rtol * max(abs(ref), 1.0), key
    if out_np["status"] != status.OK:
        return
    for key in ARRAY_KEYS:
        ref, got = out_np[key], out_c[key]
        scale = max(np.abs(ref).max(), 1e-30)
        assert np.abs(got - ref).max() <= rtol * scale, key


@pytest.mark.parametrize("tuned", [True, False])
@pytest.mark.parametrize("stale", [True, False])
def test_step_agreement_across_modes(tuned, stale):
    rng = np.random.default_rng(100)
    for trial in range(20):
        dims = (int(rng.integers(2, 16)), int(rng.integers(2, 16)),
                int(rng.integers(1, 5)))
        kw = random_inputs(rng, *dims)
        k = float(10 ** rng.uniform(1, 6))
        args = (kw["v"], kw["a_bar"], kw["b_bar"], kw["sigma_b"], k, 0.1,
                kw["c_a_diag"], 0.2, tuned, stale)
        out_np = get_backend("numpy").solver_step(*args)
        out_c = get_backend("compiled").solver_step(*args)
        assert_steps_agree(out_np, out_c)


def test_agreement_over_many_chained_iterations():
    rng = np.random.default_rng(7)
    kw = random_inputs(rng, 20, 18, 3)
    k_np = k_c = 1e5
    a_np = a_c = kw["a_bar"]
    b_np = b_c = kw["b_bar"]
    sb_np = sb_c = kw["sigma_b"]
    numpy_backend = get_backend("numpy")
    compiled = get_backend("compiled")
    for _ in range(200):
        o1 = numpy_backend.solver_step(kw["v"], a_np, b_np, sb_np, k_np,
                                       0.08, kw["c_a_diag"], 0.1, True, False)
        o2 = compiled.solver_step(kw["v"], a_c, b_c, sb_c, k_c, 0.08,
                                  kw["c_a_diag"], 0.1, True, False)
        assert o1["status"] == o2["status"] == status.OK
        a_np, b_np = o1["a_bar"], o1["b_bar"]
        sb_np, k_np = np.maximum(o1["sigma_b_raw"], 0), o1["k"]
        a_c, b_c = o2["a_bar"], o2["b_bar"]
        sb_c, k_c = np.maximum(o2["sigma_b_raw"], 0), o2["k"]
    # Drift stays at rounding level over 200 chained iterations.
    assert np.abs(b_np - b_c).max() <= 1e-8 * np.abs(b_np).max()


def test_zb_negative_status_agreement():
    rng = np.random.default_rng(9)
    kw = random_inputs(rng, 10, 10, 3)
    args = (kw["v"], kw["a_bar"], kw["b_bar"], kw["sigma_b"], 1e-3, 0.1,
            kw["c_a_diag"], 0.5, True, False)
    out_np = get_backend("numpy").solver_step(*args)
    out_c = get_backend("compiled").solver_step(*args)
    assert out_np["status"] == out_c["status"] == status.ZB_NEGATIVE


def test_jitter_path_agreement():
    # Duplicated columns make hat_sigma_b singular: both backends must
    # recover via the same escalating jitter.
    rng = np.random.default_rng(11)
    kw = random_inputs(rng, 8, 8, 2)
    kw["a_bar"][:, 1] = kw["a_bar"][:, 0]
    kw["b_bar"][1] = kw["b_bar"][0]
    kw["sigma_b"][:] = 0.0
    args = (kw["v"], kw["a_bar"], kw["b_bar"], kw["sigma_b"], 1e4, 1e-8,
            kw["c_a_diag"], 0.1, True, False)
    out_np = get_backend("numpy").solver_step(*args)
    out_c = get_backend("compiled").solver_step(*args)
    assert out_np["jitter"] > 0
    assert out_c["jitter"] > 0
    assert out_np["status"] == out_c["status"]


def test_h_equals_one():
    rng = np.random.default_rng(13)
    kw = random_inputs(rng, 6, 7, 1)
    args = (kw["v"], kw["a_bar"], kw["b_bar"], kw["sigma_b"], 1e4, 0.2,
            kw["c_a_diag"], 0.3, True, False)
    assert_steps_agree(get_backend("numpy").solver_step(*args),
                       get_backend("compiled").solver_step(*args))


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        get_backend("fortran")
