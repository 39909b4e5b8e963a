"""Model-based extended RTS smoother on the true unicycle and range models."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .recovery import StateBelief, wrap_angle
from .simworld import WorldConfig

log = logging.getLogger(__name__)


@dataclass
class BaselineConfig:
    process_cov: np.ndarray
    meas_cov: np.ndarray
    anchors: np.ndarray
    initial_cov: np.ndarray = field(default_factory=lambda: np.diag([1e-4, 1e-4, 1e-4]))
    timestep: float = 0.1

    def __post_init__(self):
        self.process_cov = np.atleast_2d(np.asarray(self.process_cov, dtype=float))
        self.meas_cov = np.atleast_2d(np.asarray(self.meas_cov, dtype=float))
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        self.initial_cov = np.atleast_2d(np.asarray(self.initial_cov, dtype=float))
        for name in ("process_cov", "meas_cov", "initial_cov"):
            M = getattr(self, name)
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
        if self.meas_cov.shape[0] != self.anchors.shape[0]:
            raise ValueError("meas_cov does not match the number of anchors")

    @classmethod
    def from_world(cls, world: WorldConfig, noisy_sensor_inflation: float = 1.0,
                   initial_cov=None) -> "BaselineConfig":
        """Covariances matched to the simulator noise; the bias is not modelled.

        ``noisy_sensor_inflation`` scales the variance of the known-biased anchors.
        """
        r_var = np.full(len(world.anchors), max(world.range_noise_std, 1e-6) ** 2)
        r_var[list(world.biased_anchor_indices)] *= noisy_sensor_inflation
        q = np.maximum(np.asarray(world.odom_noise_std, dtype=float), 1e-6) ** 2
        return cls(np.diag(q), np.diag(r_var), world.anchor_array,
                   np.diag(q) if initial_cov is None else initial_cov, world.timestep)


def _motion(x, nu, T):
    th = x[2]
    return np.array([x[0] + T * nu[0] * np.cos(th), x[1] + T * nu[0] * np.sin(th), wrap_angle(th + T * nu[1])])


def _motion_jac(x, nu, T):
    th = x[2]
    return np.array([[1.0, 0.0, -T * nu[0] * np.sin(th)],
                     [0.0, 1.0, T * nu[0] * np.cos(th)],
                     [0.0, 0.0, 1.0]])


def _diff(a, b):
    d = a - b
    d[..., 2] = wrap_angle(d[..., 2])
    return d


def extended_rts(inputs, measurements, initial_state, config: BaselineConfig) -> StateBelief:
    """EKF forward pass and RTS backward pass on ``(x, y, theta)``.

    ``inputs`` are ``nu_1..nu_K``; ``measurements`` are range vectors ``gamma_0..gamma_K``
    (NaN entries are skipped). A range whose anchor coincides with the estimate is skipped.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float)).reshape(-1, 2)
    meas = np.atleast_2d(np.asarray(measurements, dtype=float))
    K = inputs.shape[0]
    if meas.shape != (K + 1, config.anchors.shape[0]):
        raise ValueError(f"expected measurements of shape {(K + 1, config.anchors.shape[0])}, got {meas.shape}")
    T, Qm, Rm = config.timestep, config.process_cov, config.meas_cov

    xf = np.empty((K + 1, 3))
    Pf = np.empty((K + 1, 3, 3))
    x = np.asarray(initial_state, dtype=float).copy()
    P = config.initial_cov.copy()
    for k in range(K + 1):
        if k > 0:
            F = _motion_jac(x, inputs[k - 1], T)
            x = _motion(x, inputs[k - 1], T)
            P = F @ P @ F.T + Qm
        d = x[:2] - config.anchors
        rng_pred = np.linalg.norm(d, axis=1)
        use = np.isfinite(meas[k]) & (rng_pred > 1e-9)
        if use.any():
            Hm = np.zeros((int(use.sum()), 3))
            Hm[:, :2] = d[use] / rng_pred[use, None]
            Ru = Rm[np.ix_(use, use)]
            S = Hm @ P @ Hm.T + Ru
            G = la.solve(S, Hm @ P, assume_a="pos").T
            x = x + G @ (meas[k, use] - rng_pred[use])
            x[2] = wrap_angle(x[2])
            IKH = np.eye(3) - G @ Hm
            P = IKH @ P @ IKH.T + G @ Ru @ G.T
        xf[k], Pf[k] = x, 0.5 * (P + P.T)

    xs, Ps = xf.copy(), Pf.copy()
    for k in range(K - 1, -1, -1):
        F = _motion_jac(xf[k], inputs[k], T)
        Ppred = F @ Pf[k] @ F.T + Qm
        G = la.solve(Ppred, F @ Pf[k], assume_a="pos").T
        xs[k] = xf[k] + G @ _diff(xs[k + 1], _motion(xf[k], inputs[k], T))
        xs[k, 2] = wrap_angle(xs[k, 2])
        Ps[k] = Pf[k] + G @ (Ps[k + 1] - Ppred) @ G.T
        Ps[k] = 0.5 * (Ps[k] + Ps[k].T)
    return StateBelief(xs, Ps)
