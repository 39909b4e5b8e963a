"""Dual (Gram-matrix) closed forms of the lifted model, used to cross-check the primal fit.

Everything here inverts ``P x P`` matrices and is only meant for small datasets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .sysid import Hyperparams, LiftedDataset, LiftedModel

MAX_DUAL_POINTS = 2000


@dataclass
class DualSolution:
    """Model matrices in factored form, e.g. ``A = X W_A X_prev^T``.

    ``L = (Xp^T Xp / lA + U^T U / lB + V^T V / lH + I)^-1`` and
    ``W_A = L / lA``, ``W_B = L / lB``, ``W_H = L / lH``, ``W_C = (X^T X + lC I)^-1``,
    ``W_Q = L / P``, ``W_R = lC W_C / P``.
    """

    L: np.ndarray
    W_A: np.ndarray
    W_B: np.ndarray
    W_H: np.ndarray
    W_C: np.ndarray
    W_Q: np.ndarray
    W_R: np.ndarray
    data: LiftedDataset
    hp: Hyperparams

    @property
    def A(self) -> np.ndarray:
        return self.data.X @ self.W_A @ self.data.X_prev.T

    @property
    def B(self) -> np.ndarray:
        return self.data.X @ self.W_B @ self.data.U.T

    @property
    def H(self) -> np.ndarray:
        return self.data.X @ self.W_H @ self.data.V.T

    @property
    def C(self) -> np.ndarray:
        return self.data.Y @ self.W_C @ self.data.X.T

    @property
    def Q(self) -> np.ndarray:
        M = self.data.X @ self.W_Q @ self.data.X.T
        return M + self.hp.lam_Q * np.eye(M.shape[0])

    @property
    def R(self) -> np.ndarray:
        M = self.data.Y @ self.W_R @ self.data.Y.T
        return M + self.hp.lam_R * np.eye(M.shape[0])

    def bilinear_term(self, u: np.ndarray) -> np.ndarray:
        """``H (u kron I)`` via kernel evaluations only: ``X W_H diag(U^T u) Xp^T``."""
        weights = self.data.U.T @ np.asarray(u, dtype=float)
        return (self.data.X @ self.W_H * weights) @ self.data.X_prev.T


def solve_dual(data: LiftedDataset, hp: Hyperparams, max_points: int = MAX_DUAL_POINTS) -> DualSolution:
    p = data.count
    if p > max_points:
        raise ValueError(f"dual solve limited to {max_points} points, dataset has {p}")
    Kx = data.X_prev.T @ data.X_prev
    Ku = data.U.T @ data.U
    # V^T V is the Hadamard product of the two Gram matrices
    Kv = Ku * Kx
    Linv = Kx / hp.lam_A + Ku / hp.lam_B + Kv / hp.lam_H + np.eye(p)
    try:
        cL = la.cho_factor(Linv)
    except la.LinAlgError as exc:
        raise np.linalg.LinAlgError("dual system L^-1 is not positive definite") from exc
    L = la.cho_solve(cL, np.eye(p))
    L = 0.5 * (L + L.T)
    Gx = data.X.T @ data.X
    Gx[np.diag_indices_from(Gx)] += hp.lam_C
    W_C = la.cho_solve(la.cho_factor(Gx), np.eye(p))
    W_C = 0.5 * (W_C + W_C.T)
    return DualSolution(L, L / hp.lam_A, L / hp.lam_B, L / hp.lam_H, W_C, L / p, hp.lam_C * W_C / p, data, hp)


def _range_projector(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    Uo, s, _ = la.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((M.shape[0], M.shape[0]))
    Uo = Uo[:, s > rtol * s[0]]
    return Uo @ Uo.T


def _residual(M: np.ndarray, Pi: np.ndarray, side: str, scale: float | None = None) -> float:
    off = (np.eye(Pi.shape[0]) - Pi)
    R = off @ M if side == "columns" else M @ off
    denom = scale if scale is not None else max(np.linalg.norm(M), np.finfo(float).tiny)
    return float(np.linalg.norm(R) / denom)


@dataclass
class SpanReport:
    residuals: dict[str, float]
    tol: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_span_structure(model: LiftedModel, data: LiftedDataset, tol: float = 1e-6) -> SpanReport:
    """Check that fitted matrices only involve the training column spaces.

    Columns of A, B, H, Q - lQ I lie in span(X), rows of A in span(Xp), rows of B in
    span(U), rows of H in span(V); C maps from span(X) into span(Y); R - lR I lives in span(Y).
    """
    hp = model.hyperparams
    Px, Pxp, Pu, Pv, Py = (_range_projector(M) for M in (data.X, data.X_prev, data.U, data.V, data.Y))
    Qc = model.Q - hp.lam_Q * np.eye(model.Q.shape[0])
    Rc = model.R - hp.lam_R * np.eye(model.R.shape[0])
    res = {
        "A.columns": _residual(model.A, Px, "columns"),
        "A.rows": _residual(model.A, Pxp, "rows"),
        "B.columns": _residual(model.B, Px, "columns"),
        "B.rows": _residual(model.B, Pu, "rows"),
        "H.columns": _residual(model.H, Px, "columns"),
        "H.rows": _residual(model.H, Pv, "rows"),
        "C.columns": _residual(model.C, Py, "columns"),
        "C.rows": _residual(model.C, Px, "rows"),
        "Q.columns": _residual(Qc, Px, "columns", np.linalg.norm(model.Q)),
        "Q.rows": _residual(Qc, Px, "rows", np.linalg.norm(model.Q)),
        "R.columns": _residual(Rc, Py, "columns", np.linalg.norm(model.R)),
        "R.rows": _residual(Rc, Py, "rows", np.linalg.norm(model.R)),
    }
    return SpanReport(res, tol, [k for k, v in res.items() if not v < tol])


def check_belief_span(X: np.ndarray, means: np.ndarray, covariances: np.ndarray,
                      tol: float = 1e-6) -> SpanReport:
    """Check ``x_k in span(X)`` and ``P_k = X W X^T + c_k I``.

    Pass the previous-state and current-state features side by side as ``X``: the
    backward pass multiplies by ``A^T``, whose columns lie in the span of the
    previous-state features, so smoothed beliefs live in the joint span.

    ``c_k`` is estimated as the mean eigenvalue of the off-span block; the report keeps
    the worst relative residuals over all steps and the estimated ``c_k`` series under
    the key prefix ``c.``.
    """
    Pi = _range_projector(X)
    off = np.eye(Pi.shape[0]) - Pi
    n_off = int(round(np.trace(off)))
    worst_mean = worst_cross = worst_iso = 0.0
    cs = []
    for x, P in zip(means, covariances):
        worst_mean = max(worst_mean, np.linalg.norm(off @ x) / max(np.linalg.norm(x), 1e-300))
        scale = max(np.linalg.norm(P), 1e-300)
        worst_cross = max(worst_cross, np.linalg.norm(Pi @ P @ off) / scale)
        if n_off:
            block = off @ P @ off
            c = float(np.trace(block) / n_off)
            worst_iso = max(worst_iso, np.linalg.norm(block - c * off) / scale)
        else:
            c = 0.0
        cs.append(c)
    res = {"mean": worst_mean, "cross": worst_cross, "isotropic": worst_iso}
    report = SpanReport(res, tol, [k for k, v in res.items() if not v < tol])
    report.residuals.update({f"c.{k}": v for k, v in enumerate(cs)})
    return report
