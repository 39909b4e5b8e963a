import numpy as np
import pytest

from conftest import random_dataset, rel_err
from koopse.estimator import BilinearTransitions, LtvProblem, rts_smooth
from koopse.kernel_oracle import check_belief_span, check_span_structure, solve_dual
from koopse.sysid import Hyperparams, fit, lift_blocks

HP = Hyperparams(1e-2, 2e-2, 5e-2, 1e-2, 1e-4, 2e-4, 1e-6)


def test_single_point_scalar_dual(rng):
    data = random_dataset(rng, p=1, rx=5)
    sol = solve_dual(data, HP)
    kx = float(data.X_prev[:, 0] @ data.X_prev[:, 0])
    ku = float(data.U[:, 0] @ data.U[:, 0])
    expected = 1.0 / (kx / HP.lam_A + ku / HP.lam_B + ku * kx / HP.lam_H + 1.0)
    np.testing.assert_allclose(sol.L, [[expected]], rtol=1e-14)
    np.testing.assert_allclose(sol.A, np.outer(data.X[:, 0], data.X_prev[:, 0]) * expected / HP.lam_A, rtol=1e-12)


def test_huge_ridge_shrinks_to_zero(rng):
    data = random_dataset(rng, p=20)
    sol = solve_dual(data, Hyperparams(1e12, 1e12, 1e12, 1e12, 1e-4, 1e-4, 1e-6))
    for M in (sol.A, sol.B, sol.H, sol.C):
        assert np.abs(M).max() < 1e-9
    np.testing.assert_allclose(sol.L, np.eye(20), atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_dual_matches_primal(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(5, 60))
    data = random_dataset(rng, p=p, rx=int(rng.integers(3, 15)), ru=int(rng.integers(1, 4)),
                          ry=int(rng.integers(2, 7)))
    m, d = fit(data, HP), solve_dual(data, HP)
    for name in ("A", "B", "H", "C", "Q", "R"):
        assert rel_err(getattr(d, name), getattr(m, name)) < 1e-8, name


def test_bilinear_term_matches_H_blocks(rng):
    data = random_dataset(rng, p=30, rx=6, ru=3)
    m, d = fit(data, HP), solve_dual(data, HP)
    u = rng.standard_normal(3)
    np.testing.assert_allclose(d.bilinear_term(u), np.tensordot(u, m.H_blocks(), axes=1), rtol=1e-8, atol=1e-12)


def test_dual_size_limit(rng):
    with pytest.raises(ValueError, match="limited"):
        solve_dual(random_dataset(rng, p=30), HP, max_points=10)


def test_span_structure_holds_when_rank_exceeds_points(rng):
    data = random_dataset(rng, p=10, rx=25, ru=2, ry=18)
    rep = check_span_structure(fit(data, HP), data)
    assert rep.ok, rep.residuals


def test_span_check_flags_foreign_component(rng):
    data = random_dataset(rng, p=10, rx=25, ru=2, ry=18)
    m = fit(data, HP)
    Pi_off = np.eye(25) - np.linalg.pinv(data.X.T) @ data.X.T
    m.A = m.A + 1e-2 * Pi_off @ rng.standard_normal((25, 25))
    m.Q = m.Q + 1e-3 * Pi_off
    rep = check_span_structure(m, data)
    assert "A.columns" in rep.violations and "Q.columns" in rep.violations
    assert not rep.ok


def test_zero_feature_row(rng):
    data = random_dataset(rng, p=8, rx=12)
    for M in (data.X_prev, data.X):
        M[4] = 0.0
    data = lift_blocks(data.X_prev, data.X, data.U, data.Y, data.Xi_star)
    m = fit(data, HP)
    assert np.all(m.A[4] == 0) and np.all(m.A[:, 4] == 0)
    np.testing.assert_allclose(m.Q[4], HP.lam_Q * np.eye(12)[4], atol=1e-15)
    assert check_span_structure(m, data).ok


def test_belief_span_after_smoothing(rng):
    p, rx = 12, 30
    data = random_dataset(rng, p=p, rx=rx, ru=2, ry=5)
    m = fit(data, HP)
    K = 15
    U = rng.standard_normal((K, 2))
    Y = rng.standard_normal((K + 1, 5))
    x0 = data.X @ rng.standard_normal(p) / p
    prob = LtvProblem(BilinearTransitions(m.A, m.H_blocks(), U), U @ m.B.T, Y, m.C, m.Q, m.R, x0, m.Q.copy())
    res = rts_smooth(prob)
    joint = np.hstack([data.X_prev, data.X])
    for seq in (res.prior, res.filtered):
        assert check_belief_span(data.X, seq.means, seq.covariances).ok
    for seq in (res.prior, res.filtered, res.smoothed):
        rep = check_belief_span(joint, seq.means, seq.covariances)
        assert rep.ok, {k: v for k, v in rep.residuals.items() if not k.startswith("c.")}
    prior = check_belief_span(data.X, res.prior.means, res.prior.covariances)
    # the off-span part of every prior covariance is exactly the process-noise floor
    assert all(abs(prior.residuals[f"c.{k}"] - HP.lam_Q) < 1e-12 for k in range(1, K + 1))
