"""Independent reference solutions used by the tests."""
import numpy as np

from koopse.estimator import LtvProblem


def batch_ltv(problem):
    """Dense least-squares solution of the whole LTV problem at once.

    Stacks the prior, motion and measurement residuals into one weighted system,
    forms the full information matrix, and inverts it. Returns smoothed means
    (K+1, n) and marginal covariances (K+1, n, n).
    """
    K, n = problem.steps, problem.dim
    N = (K + 1) * n
    rows, rhs, weights = [], [], []

    def block_row(pairs, width):
        r = np.zeros((width, N))
        for k, M in pairs:
            r[:, k * n:(k + 1) * n] = M
        return r

    rows.append(block_row([(0, np.eye(n))], n))
    rhs.append(problem.x0)
    weights.append(np.linalg.inv(problem.P0))
    Qi = np.linalg.inv(problem.Q)
    for k in range(1, K + 1):
        A = np.asarray(problem.transitions[k - 1])
        rows.append(block_row([(k - 1, -A), (k, np.eye(n))], n))
        rhs.append(problem.offsets[k - 1])
        weights.append(Qi)
    Ri = np.linalg.inv(problem.R)
    m = problem.C.shape[0]
    for k in range(K + 1):
        y = problem.measurements[k]
        if np.all(np.isfinite(y)):
            rows.append(block_row([(k, problem.C)], m))
            rhs.append(y)
            weights.append(Ri)

    Hm = np.vstack(rows)
    z = np.concatenate(rhs)
    W = np.zeros((Hm.shape[0], Hm.shape[0]))
    i = 0
    for w in weights:
        W[i:i + w.shape[0], i:i + w.shape[0]] = w
        i += w.shape[0]
    info = Hm.T @ W @ Hm
    cov = np.linalg.inv(info)
    mean = cov @ (Hm.T @ W @ z)
    covs = np.stack([cov[k * n:(k + 1) * n, k * n:(k + 1) * n] for k in range(K + 1)])
    return mean.reshape(K + 1, n), covs


def random_spd(rng, n, scale=1.0):
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T / n + 0.1 * np.eye(n))


def random_ltv(rng, K=6, n=4, m=3, missing=0.0):
    As = [np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n) for _ in range(K)]
    Y = rng.standard_normal((K + 1, m))
    Y[rng.random(K + 1) < missing] = np.nan
    return LtvProblem(As, rng.standard_normal((K, n)), Y, rng.standard_normal((m, n)),
                      random_spd(rng, n, 0.1), random_spd(rng, m, 0.2), rng.standard_normal(n),
                      random_spd(rng, n))
