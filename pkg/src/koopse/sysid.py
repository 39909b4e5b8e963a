"""Lifted bilinear-Gaussian model identification.

Training transitions are lifted with frozen feature bases and stacked column-wise.
The model matrices solve the ridge-regularised normal equations

    [Xp Xp' + lA I   Xp U'        Xp V'      ] [A']   [Xp X']
    [U Xp'           U U' + lB I  U V'       ] [B'] = [U X' ]
    [V Xp'           V U'         V V' + lH I] [H']   [V X' ]

with ``V = U (khatri-rao) Xp``, then ``C``, ``Q``, ``R`` in closed form.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.linalg import lapack

from .features import FeatureBasis, embed

log = logging.getLogger(__name__)


class IllConditionedError(np.linalg.LinAlgError):
    """Raised when a regularised Gram system cannot be factorised reliably."""

    def __init__(self, message: str, rcond: float):
        super().__init__(message)
        self.rcond = rcond


@dataclass(frozen=True)
class Hyperparams:
    lam_A: float = 1e-4
    lam_B: float = 1e-4
    lam_H: float = 1e-4
    lam_C: float = 1e-4
    lam_Q: float = 1e-6
    lam_R: float = 1e-6
    lam_x: float = 1e-8

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"hyperparameter {name} must be strictly positive, got {val}")

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class Transitions:
    """Row-per-transition arrays: ``prev_states`` transitions to ``states`` under ``inputs``
    and ``measurements`` is received at ``states``."""

    prev_states: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    measurements: np.ndarray

    def __post_init__(self):
        self.prev_states = np.atleast_2d(np.asarray(self.prev_states, dtype=float))
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.measurements = np.atleast_2d(np.asarray(self.measurements, dtype=float))
        p = self.states.shape[0]
        if p == 0:
            raise ValueError("empty dataset")
        for name in ("prev_states", "inputs", "measurements"):
            if getattr(self, name).shape[0] != p:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, states has {p}")
        if self.prev_states.shape[1] != self.states.shape[1]:
            raise ValueError("prev_states and states differ in dimension")
        for name in ("prev_states", "states", "inputs", "measurements"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    def __len__(self) -> int:
        return self.states.shape[0]

    @classmethod
    def from_trajectory(cls, states, inputs, measurements) -> "Transitions":
        """One trajectory of ``K+1`` states, ``K`` inputs (for steps 1..K) and ``K+1`` measurements."""
        states = np.asarray(states, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        measurements = np.asarray(measurements, dtype=float)
        if inputs.shape[0] != states.shape[0] - 1:
            raise ValueError(f"expected {states.shape[0] - 1} inputs, got {inputs.shape[0]}")
        return cls(states[:-1], states[1:], inputs, measurements[1:])

    @classmethod
    def concat(cls, parts: list["Transitions"]) -> "Transitions":
        if not parts:
            raise ValueError("empty dataset")
        return cls(*(np.vstack([getattr(p, f) for p in parts]) for f in
                     ("prev_states", "states", "inputs", "measurements")))


def cartesian_form(states: np.ndarray, angle_dims=(2,)) -> np.ndarray:
    """Replace every angle column by its (cos, sin) pair, in place of the angle."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    cols = []
    for d in range(states.shape[1]):
        if d in angle_dims:
            cols += [np.cos(states[:, d]), np.sin(states[:, d])]
        else:
            cols.append(states[:, d])
    return np.column_stack(cols)


def khatri_rao(U: np.ndarray, Xp: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product, u-major: row ``j * R_x + k`` is ``U[j] * Xp[k]``."""
    U = np.asarray(U, dtype=float)
    Xp = np.asarray(Xp, dtype=float)
    if U.ndim != 2 or Xp.ndim != 2 or U.shape[1] != Xp.shape[1]:
        raise ValueError(f"column counts differ: {np.shape(U)} vs {np.shape(Xp)}")
    return (U[:, None, :] * Xp[None, :, :]).reshape(U.shape[0] * Xp.shape[0], U.shape[1])


@dataclass
class LiftedDataset:
    """Lifted training blocks, one column per transition."""

    X_prev: np.ndarray
    X: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    Xi_star: np.ndarray

    @property
    def count(self) -> int:
        return self.X.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X_prev, self.X, self.U, self.Y, self.Xi_star):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def lift_blocks(X_prev, X, U, Y, Xi_star) -> LiftedDataset:
    """Assemble a dataset directly from already-lifted blocks (columns are transitions)."""
    X_prev, X, U, Y, Xi_star = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (X_prev, X, U, Y, Xi_star))
    p = X.shape[1]
    for name, arr in (("X_prev", X_prev), ("U", U), ("Y", Y), ("Xi_star", Xi_star)):
        if arr.shape[1] != p:
            raise ValueError(f"{name} has {arr.shape[1]} columns, X has {p}")
    return LiftedDataset(X_prev, X, U, Y, khatri_rao(U, X_prev), Xi_star)


def stack_dataset(transitions: Transitions, state_basis: FeatureBasis, input_basis: FeatureBasis,
                  meas_basis: FeatureBasis, angle_dims=(2,)) -> LiftedDataset:
    for name, basis, arr in (("state", state_basis, transitions.states),
                             ("input", input_basis, transitions.inputs),
                             ("measurement", meas_basis, transitions.measurements)):
        if arr.shape[1] != basis.input_dim:
            raise ValueError(f"{name} dimension {arr.shape[1]} != basis dimension {basis.input_dim}")
    return lift_blocks(
        embed(state_basis, transitions.prev_states).T,
        embed(state_basis, transitions.states).T,
        embed(input_basis, transitions.inputs).T,
        embed(meas_basis, transitions.measurements).T,
        cartesian_form(transitions.states, angle_dims).T,
    )


@dataclass(eq=False)
class LiftedModel:
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    O_xi: np.ndarray
    hyperparams: Hyperparams
    state_basis: FeatureBasis | None = None
    input_basis: FeatureBasis | None = None
    meas_basis: FeatureBasis | None = None
    angle_dims: tuple[int, ...] = (2,)
    # training-feature mean/covariance, the fallback initial belief
    x_mean: np.ndarray | None = None
    x_cov: np.ndarray | None = None
    fingerprint: str = ""
    info: dict = field(default_factory=dict)

    @property
    def state_rank(self) -> int:
        return self.A.shape[0]

    @property
    def input_rank(self) -> int:
        return self.B.shape[1]

    @property
    def meas_rank(self) -> int:
        return self.C.shape[0]

    def H_blocks(self) -> np.ndarray:
        """``H`` split into its ``R_u`` column blocks, shape ``(R_u, R_x, R_x)``."""
        rx, ru = self.state_rank, self.input_rank
        return self.H.reshape(rx, ru, rx).transpose(1, 0, 2)

    def kernel_hash(self) -> str:
        parts = [b.spec.fingerprint() if b is not None else "-" for b in
                 (self.state_basis, self.input_basis, self.meas_basis)]
        return hashlib.sha256("/".join(parts).encode()).hexdigest()[:16]


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _floor_eigs(M: np.ndarray, floor: float) -> np.ndarray:
    M = _symmetrize(M)
    w = la.eigvalsh(M)
    if w[0] >= floor * (1 - 1e-10):
        return M
    w, V = la.eigh(M)
    return _symmetrize((V * np.maximum(w, floor)) @ V.T)


def cho_solve_spd(G: np.ndarray, rhs: np.ndarray, what: str = "Gram system") -> tuple[np.ndarray, float]:
    """Solve ``G Z = rhs`` for symmetric positive definite ``G``; returns ``(Z, rcond)``."""
    if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1.0, np.abs(G).max())):
        raise ValueError(f"{what} is not symmetric")
    anorm = np.abs(G).sum(axis=0).max()
    try:
        c, low = la.cho_factor(G, lower=False, check_finite=True)
    except la.LinAlgError as exc:
        raise IllConditionedError(
            f"{what} ({G.shape[0]}x{G.shape[0]}) is not positive definite; increase the ridge "
            f"hyperparameters", 0.0) from exc
    rcond, info = lapack.dpocon(c, anorm)
    if rcond < 1e3 * np.finfo(float).eps:
        raise IllConditionedError(
            f"{what} is ill-conditioned (rcond={rcond:.2e}); increase the ridge hyperparameters", rcond)
    return la.cho_solve((c, low), rhs), float(rcond)


def precompute_readout(Xi_star: np.ndarray, X: np.ndarray, lam_x: float) -> np.ndarray:
    """``Xi_star X^T (X X^T + lam_x I)^-1``, shape ``(N*, R_x)``."""
    if lam_x <= 0:
        raise ValueError(f"lam_x must be positive, got {lam_x}")
    Xi_star = np.atleast_2d(Xi_star)
    if Xi_star.shape[1] != X.shape[1]:
        raise ValueError(f"Xi_star has {Xi_star.shape[1]} columns, X has {X.shape[1]}")
    G = X @ X.T
    G[np.diag_indices_from(G)] += lam_x
    rhs = X @ Xi_star.T
    try:
        return la.solve(G, rhs, assume_a="pos").T
    except la.LinAlgError:
        return la.solve(G, rhs, assume_a="sym").T


def fit(data: LiftedDataset, hp: Hyperparams | None = None) -> LiftedModel:
    """Fit ``A, B, H, C, Q, R`` and the state readout from a lifted dataset."""
    hp = hp or Hyperparams()
    for name in ("X_prev", "X", "U", "Y", "V"):
        if not np.all(np.isfinite(getattr(data, name))):
            raise ValueError(f"dataset block {name} contains non-finite entries")
    rx, ru, ry, p = data.X.shape[0], data.U.shape[0], data.Y.shape[0], data.count
    Z = np.vstack([data.X_prev, data.U, data.V])
    G = Z @ Z.T
    ridge = np.concatenate([np.full(rx, hp.lam_A), np.full(ru, hp.lam_B), np.full(ru * rx, hp.lam_H)])
    G[np.diag_indices_from(G)] += ridge
    sol, rcond_abh = cho_solve_spd(G, Z @ data.X.T, "motion Gram system")
    theta = sol.T
    A, B, H = theta[:, :rx], theta[:, rx:rx + ru], theta[:, rx + ru:]

    GX = data.X @ data.X.T
    GX[np.diag_indices_from(GX)] += hp.lam_C
    Ct, rcond_c = cho_solve_spd(GX, data.X @ data.Y.T, "measurement Gram system")
    C = Ct.T

    J = data.X - theta @ Z
    Q = (J @ J.T + hp.lam_A * A @ A.T + hp.lam_B * B @ B.T + hp.lam_H * H @ H.T) / p
    Q[np.diag_indices_from(Q)] += hp.lam_Q
    E = data.Y - C @ data.X
    R = (E @ E.T + hp.lam_C * C @ C.T) / p
    R[np.diag_indices_from(R)] += hp.lam_R
    Q = _floor_eigs(Q, hp.lam_Q)
    R = _floor_eigs(R, hp.lam_R)

    O_xi = precompute_readout(data.Xi_star, data.X, hp.lam_x)
    log.info("fit: P=%d R_x=%d R_u=%d R_y=%d rcond(ABH)=%.2e rcond(C)=%.2e", p, rx, ru, ry, rcond_abh, rcond_c)
    return LiftedModel(
        A=A, B=B, H=H, C=C, Q=Q, R=R, O_xi=O_xi, hyperparams=hp,
        x_mean=data.X.mean(axis=1), x_cov=np.cov(data.X) if p > 1 else np.zeros((rx, rx)),
        fingerprint=data.fingerprint(),
        info={"rcond_motion": rcond_abh, "rcond_measurement": rcond_c, "count": p},
    )


def fit_transitions(transitions: Transitions, state_basis: FeatureBasis, input_basis: FeatureBasis,
                    meas_basis: FeatureBasis, hp: Hyperparams | None = None, angle_dims=(2,)) -> LiftedModel:
    """Lift, stack and fit in one go; the returned model carries the bases."""
    data = stack_dataset(transitions, state_basis, input_basis, meas_basis, angle_dims)
    model = fit(data, hp)
    model.state_basis, model.input_basis, model.meas_basis = state_basis, input_basis, meas_basis
    model.angle_dims = tuple(angle_dims)
    return model


def loss(data: LiftedDataset, A, B, H, C, Q, R, hp: Hyperparams) -> float:
    """Negative log posterior ``V1 + V2`` of the model given the lifted data (normaliser ``P``)."""
    p = data.count
    Qi = la.inv(Q)
    Ri = la.inv(R)
    J = data.X - A @ data.X_prev - B @ data.U - H @ data.V
    E = data.Y - C @ data.X

    def wnorm(M, W):
        return float(np.sum(M * (W @ M)))

    v1 = 0.5 * wnorm(J, Qi) + 0.5 * wnorm(E, Ri)
    v1 += 0.5 * p * np.linalg.slogdet(Q)[1] + 0.5 * p * np.linalg.slogdet(R)[1]
    v2 = 0.5 * (hp.lam_A * wnorm(A, Qi) + hp.lam_B * wnorm(B, Qi) + hp.lam_H * wnorm(H, Qi)
                + hp.lam_C * wnorm(C, Ri))
    v2 += 0.5 * p * (hp.lam_Q * np.trace(Qi) + hp.lam_R * np.trace(Ri))
    return v1 + v2
