"""Map lifted beliefs back to (x, y, theta) and score them against ground truth."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# Expected value of sqrt(e^T S^-1 e / dof) for a perfectly consistent estimator.
CONSISTENT_MAHALANOBIS_2DOF = math.sqrt(math.pi) / 2.0  # 0.8862...
CONSISTENT_MAHALANOBIS_1DOF = math.sqrt(2.0 / math.pi)  # 0.7979...

_DEGENERATE_THETA_VAR = math.pi**2 / 3.0


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def recover(O_xi: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``O x`` and ``O P O^T`` for every step; inputs are ``(K+1, R)`` and ``(K+1, R, R)``."""
    means = np.atleast_2d(means)
    if means.shape[1] != O_xi.shape[1] or covariances.shape[1:] != (O_xi.shape[1],) * 2:
        raise ValueError(f"readout expects lifted dimension {O_xi.shape[1]}, got {means.shape} / {covariances.shape}")
    mu = means @ O_xi.T
    cov = np.einsum("ij,kjl,ml->kim", O_xi, covariances, O_xi, optimize=True)
    return mu, 0.5 * (cov + cov.transpose(0, 2, 1))


@dataclass
class StateBelief:
    """Means ``(K+1, 3)`` as (x, y, theta) and covariances ``(K+1, 3, 3)``."""

    mean: np.ndarray
    covariance: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return self.mean.shape[0]


def decartesianize(mean_star: np.ndarray, cov_star: np.ndarray) -> StateBelief:
    """Convert Gaussians over (x, y, cos, sin) to Gaussians over (x, y, theta).

    The heading is ``atan2(s, c)`` and its covariance follows from the first-order
    Jacobian of atan2. When ``c^2 + s^2 < 1e-9`` the heading is uninformative: its
    variance is set to that of a uniform angle and its cross terms to zero.
    """
    m = np.atleast_2d(np.asarray(mean_star, dtype=float))
    S = np.asarray(cov_star, dtype=float).reshape(-1, 4, 4)
    if m.shape[1] != 4 or S.shape[0] != m.shape[0]:
        raise ValueError(f"expected (n, 4) means and (n, 4, 4) covariances, got {m.shape} / {np.shape(cov_star)}")
    c, s = m[:, 2], m[:, 3]
    r2 = c * c + s * s
    bad = r2 < 1e-9
    safe = np.where(bad, 1.0, r2)
    J = np.zeros((m.shape[0], 3, 4))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    J[:, 2, 2] = -s / safe
    J[:, 2, 3] = c / safe
    cov = J @ S @ J.transpose(0, 2, 1)
    if bad.any():
        log.warning("%d steps with indeterminate heading", int(bad.sum()))
        cov[bad, 2, :] = 0.0
        cov[bad, :, 2] = 0.0
        cov[bad, 2, 2] = _DEGENERATE_THETA_VAR
    mean = np.column_stack([m[:, 0], m[:, 1], np.arctan2(s, c)])
    mean[:, 2] = wrap_angle(mean[:, 2])
    return StateBelief(mean, 0.5 * (cov + cov.transpose(0, 2, 1)), bad)


@dataclass
class MetricsReport:
    translation_rmse: float
    orientation_rmse: float
    translation_mahalanobis: float
    orientation_mahalanobis: float
    errors: np.ndarray
    envelopes: np.ndarray
    excluded_steps: int = 0

    def summary(self) -> dict:
        return {
            "translation_rmse": self.translation_rmse,
            "orientation_rmse": self.orientation_rmse,
            "translation_mahalanobis": self.translation_mahalanobis,
            "orientation_mahalanobis": self.orientation_mahalanobis,
            "excluded_steps": self.excluded_steps,
            "steps": int(self.errors.shape[0]),
            "fraction_within_3sigma_xy": self.fraction_within_envelope(),
        }

    def fraction_within_envelope(self, dims=(0, 1)) -> float:
        ok = np.all(np.abs(self.errors[:, dims]) <= self.envelopes[:, dims], axis=1)
        return float(ok.mean())

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "err_x", "err_y", "err_theta", "env_x", "env_y", "env_theta"])
            for k, (e, v) in enumerate(zip(self.errors, self.envelopes)):
                w.writerow([k, *(f"{a:.9g}" for a in e), *(f"{a:.9g}" for a in v)])


def _mahalanobis(err: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dof = err.shape[1]
    vals = np.full(err.shape[0], np.nan)
    ok = np.zeros(err.shape[0], dtype=bool)
    for k in range(err.shape[0]):
        try:
            L = np.linalg.cholesky(cov[k])
        except np.linalg.LinAlgError:
            continue
        z = np.linalg.solve(L, err[k])
        vals[k] = math.sqrt(float(z @ z) / dof)
        ok[k] = True
    return vals, ok


def compute_metrics(estimate: StateBelief, truth: np.ndarray) -> MetricsReport:
    """RMSE and per-step Mahalanobis distance normalised by ``sqrt(dof)``.

    Under perfect consistency the translation statistic averages to
    ``CONSISTENT_MAHALANOBIS_2DOF`` (about 0.886), not 1.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if truth.shape != estimate.mean.shape or truth.shape[0] == 0:
        raise ValueError(f"estimate and ground truth differ in shape: {estimate.mean.shape} vs {truth.shape}")
    err = estimate.mean - truth
    err[:, 2] = wrap_angle(err[:, 2])
    cov = estimate.covariance
    m_xy, ok_xy = _mahalanobis(err[:, :2], cov[:, :2, :2])
    m_th, ok_th = _mahalanobis(err[:, 2:], cov[:, 2:, 2:])
    excluded = int(np.sum(~(ok_xy & ok_th)))
    diag = np.clip(np.diagonal(cov, axis1=1, axis2=2), 0.0, None)
    return MetricsReport(
        translation_rmse=float(np.sqrt(np.mean(np.sum(err[:, :2] ** 2, axis=1)))),
        orientation_rmse=float(np.sqrt(np.mean(err[:, 2] ** 2))),
        translation_mahalanobis=float(np.mean(m_xy[ok_xy])) if ok_xy.any() else float("nan"),
        orientation_mahalanobis=float(np.mean(m_th[ok_th])) if ok_th.any() else float("nan"),
        errors=err,
        envelopes=3.0 * np.sqrt(diag),
        excluded_steps=excluded,
    )


def combine_metrics(estimates: list[StateBelief], truths: list[np.ndarray]) -> MetricsReport:
    """Pool several trajectories into one report (RMSE over all steps)."""
    mean = np.vstack([e.mean for e in estimates])
    cov = np.concatenate([e.covariance for e in estimates])
    return compute_metrics(StateBelief(mean, cov), np.vstack(truths))
