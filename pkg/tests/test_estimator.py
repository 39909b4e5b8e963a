import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopse.estimator import BilinearTransitions, EstimationError, LtvProblem, build_ltv, rts_smooth
from koopse.features import KernelSpec, Linear, SquaredExponential, sample_basis
from koopse.sysid import Hyperparams, Transitions, fit_transitions, khatri_rao
from oracles import batch_ltv, random_ltv, random_spd


def is_psd(M, tol=1e-10):
    return np.linalg.eigvalsh(0.5 * (M + M.T))[0] >= -tol * max(1.0, np.abs(M).max())


@pytest.fixture(scope="module")
def small_model():
    rng = np.random.default_rng(0)
    states = np.column_stack([rng.uniform(0, 5, 301), rng.uniform(0, 5, 301), rng.uniform(-3, 3, 301)])
    tr = Transitions.from_trajectory(states, rng.standard_normal((300, 2)), rng.uniform(0, 9, (301, 5)))
    return fit_transitions(tr, sample_basis(KernelSpec(SquaredExponential((2.0, 2.0, 1.0)), 16), 1),
                           sample_basis(KernelSpec(Linear(2)), 2),
                           sample_basis(KernelSpec(SquaredExponential((3.0,) * 5), 8), 3), Hyperparams())


def test_zero_bilinear_term_gives_constant_transition(rng):
    A = rng.standard_normal((4, 4))
    seq = BilinearTransitions(A, np.zeros((2, 4, 4)), rng.standard_normal((5, 2)))
    assert len(seq) == 5
    for Ak in seq:
        np.testing.assert_array_equal(Ak, A)


def test_unit_input_selects_one_block(rng):
    A, Hb = rng.standard_normal((3, 3)), rng.standard_normal((2, 3, 3))
    seq = BilinearTransitions(A, Hb, np.eye(2))
    np.testing.assert_allclose(seq[0], A + Hb[0], atol=1e-15)
    np.testing.assert_allclose(seq[1], A + Hb[1], atol=1e-15)
    assert len(seq[0:2]) == 2


def test_transition_matches_kron_form(small_model, rng):
    m = small_model
    u = rng.standard_normal((4, m.input_rank))
    seq = BilinearTransitions(m.A, m.H_blocks(), u)
    for k in range(4):
        x = rng.standard_normal(m.state_rank)
        ref = m.A @ x + m.H @ np.kron(u[k], x)
        np.testing.assert_allclose(seq[k] @ x, ref, rtol=1e-12, atol=1e-12)
        ref_kr = m.H @ khatri_rao(u[k][:, None], x[:, None])[:, 0]
        np.testing.assert_allclose(seq[k] @ x - m.A @ x, ref_kr, rtol=1e-12, atol=1e-12)


def test_matches_batch_oracle(rng):
    for _ in range(5):
        prob = random_ltv(rng, K=7, n=4, m=3)
        res = rts_smooth(prob)
        mean, covs = batch_ltv(prob)
        np.testing.assert_allclose(res.smoothed.means, mean, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(res.smoothed.covariances, covs, rtol=1e-8, atol=1e-8)


def test_missing_measurements_match_batch_oracle(rng):
    prob = random_ltv(rng, K=10, n=3, m=2, missing=0.4)
    prob.measurements[3] = np.nan
    res = rts_smooth(prob)
    mean, covs = batch_ltv(prob)
    np.testing.assert_allclose(res.smoothed.means, mean, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(res.smoothed.covariances, covs, rtol=1e-8, atol=1e-8)
    # nothing observed at step 3: filtered equals predicted there
    np.testing.assert_array_equal(res.filtered.means[3], res.prior.means[3])


def test_covariance_ordering(rng):
    prob = random_ltv(rng, K=8, n=4, m=2)
    res = rts_smooth(prob)
    for k in range(prob.steps + 1):
        assert is_psd(res.prior.covariances[k] - res.filtered.covariances[k])
        assert is_psd(res.filtered.covariances[k] - res.smoothed.covariances[k])
        assert is_psd(res.smoothed.covariances[k])


def test_final_smoothed_equals_filtered(rng):
    res = rts_smooth(random_ltv(rng))
    np.testing.assert_array_equal(res.smoothed.means[-1], res.filtered.means[-1])


def test_measurement_dominated_limit(rng):
    n, K = 3, 5
    prob = LtvProblem([np.eye(n)] * K, np.zeros((K, n)), rng.standard_normal((K + 1, n)), np.eye(n),
                      np.eye(n), 1e-12 * np.eye(n), np.zeros(n), np.eye(n))
    res = rts_smooth(prob)
    np.testing.assert_allclose(res.smoothed.means, prob.measurements, atol=1e-9)


def test_single_measurement_with_vague_prior(rng):
    n = 3
    R = random_spd(rng, n, 0.1)
    y = rng.standard_normal((1, n))
    prob = LtvProblem([], np.zeros((0, n)), y, np.eye(n), np.eye(n), R, np.zeros(n), 1e10 * np.eye(n))
    res = rts_smooth(prob)
    np.testing.assert_allclose(res.smoothed.means[0], y[0], atol=1e-8)
    np.testing.assert_allclose(res.smoothed.covariances[0], R, atol=1e-8)


def test_keep_all_false_gives_same_smoothed(rng):
    prob = random_ltv(rng, K=9)
    a = rts_smooth(prob, keep_all=True)
    b = rts_smooth(prob, keep_all=False)
    assert b.prior is None and b.filtered is None
    np.testing.assert_array_equal(a.smoothed.means, b.smoothed.means)
    np.testing.assert_array_equal(a.smoothed.covariances, b.smoothed.covariances)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_orthogonal_reparametrization(seed):
    rng = np.random.default_rng(seed)
    prob = random_ltv(rng, K=4, n=3, m=2)
    T, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    rot = LtvProblem([T @ A @ T.T for A in prob.transitions], prob.offsets @ T.T, prob.measurements,
                     prob.C @ T.T, T @ prob.Q @ T.T, prob.R, T @ prob.x0, T @ prob.P0 @ T.T)
    a, b = rts_smooth(prob).smoothed, rts_smooth(rot).smoothed
    np.testing.assert_allclose(b.means, a.means @ T.T, atol=1e-9)
    np.testing.assert_allclose(b.covariances, T @ a.covariances @ T.T, atol=1e-9)


def test_indefinite_innovation_reports_step(rng):
    prob = random_ltv(rng, K=4, n=3, m=2)
    prob.measurements[:2] = np.nan
    prob.R = -100.0 * np.eye(2)
    with pytest.raises(EstimationError, match="step 2") as info:
        rts_smooth(prob)
    assert info.value.step == 2


def test_validate_rejects_bad_shapes(rng):
    prob = random_ltv(rng, K=4, n=3, m=2)
    prob.offsets = np.zeros((3, 3))
    with pytest.raises(ValueError, match="offsets"):
        rts_smooth(prob)
    prob = random_ltv(rng, K=4, n=3, m=2)
    prob.measurements = prob.measurements[:-1]
    with pytest.raises(ValueError, match="measurements"):
        rts_smooth(prob)


def test_build_ltv_shapes_and_fallback(small_model, rng):
    m = small_model
    inputs = rng.standard_normal((6, 2))
    meas = rng.uniform(0, 9, (7, 5))
    meas[2] = np.nan
    prob = build_ltv(m, inputs, meas)
    assert prob.steps == 6 and prob.dim == m.state_rank
    assert np.all(np.isnan(prob.measurements[2]))
    np.testing.assert_array_equal(prob.x0, m.x_mean)
    np.testing.assert_allclose(prob.offsets, inputs @ m.B.T)
    res = rts_smooth(build_ltv(m, inputs, meas, initial_state=[1.0, 1.0, 0.0]))
    assert res.smoothed.means.shape == (7, m.state_rank)
    with pytest.raises(ValueError, match="K inputs"):
        build_ltv(m, inputs[:5], meas)


def test_single_step_trajectory(small_model):
    prob = build_ltv(small_model, np.zeros((0, 2)), np.full((1, 5), 4.0), [1.0, 1.0, 0.0])
    assert rts_smooth(prob).smoothed.means.shape == (1, small_model.state_rank)


def test_doubling_state_dimension_costs_at_most_tenfold():
    rng = np.random.default_rng(5)
    best = {}
    for n in (128, 256):
        prob = random_ltv(rng, K=20, n=n, m=n // 2)
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            rts_smooth(prob, keep_all=False)
            times.append(time.perf_counter() - t0)
        best[n] = min(times)
    assert best[256] <= 10 * best[128]
