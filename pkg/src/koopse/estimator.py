"""Lifted linear time-varying estimation: build the LTV problem from a bilinear model
and solve it with a Kalman filter followed by an RTS backward pass."""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la

from .features import embed
from .sysid import LiftedModel

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class BilinearTransitions(Sequence):
    """``A + sum_j u_kj H_j`` for each step, computed on demand."""

    def __init__(self, A: np.ndarray, H_blocks: np.ndarray, weights: np.ndarray):
        self.A = A
        self.H_blocks = H_blocks
        self.weights = np.atleast_2d(weights)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        return self.A + np.tensordot(self.weights[k], self.H_blocks, axes=1)


@dataclass
class LtvProblem:
    """``x_k = A_{k-1} x_{k-1} + v_k + w_k`` (k=1..K), ``y_k = C x_k + n_k`` (k=0..K).

    ``transitions[k-1]`` is ``A_{k-1}`` and ``offsets[k-1]`` is ``v_k``. A NaN row in
    ``measurements`` means no measurement at that step.
    """

    transitions: Sequence
    offsets: np.ndarray
    measurements: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    P0: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.transitions)

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    def validate(self) -> None:
        K, n = self.steps, self.dim
        if np.shape(self.offsets) != (K, n):
            raise ValueError(f"offsets must be ({K}, {n}), got {np.shape(self.offsets)}")
        if np.shape(self.measurements) != (K + 1, self.C.shape[0]):
            raise ValueError(f"measurements must be ({K + 1}, {self.C.shape[0]}), got {np.shape(self.measurements)}")
        if self.C.shape[1] != n:
            raise ValueError("C does not match the state dimension")
        for name in ("Q", "R", "P0"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max())):
                raise ValueError(f"{name} is not symmetric")
        if not (np.all(np.isfinite(self.offsets)) and np.all(np.isfinite(self.x0))):
            raise ValueError("non-finite offsets or initial mean")


class BeliefSequence(NamedTuple):
    means: np.ndarray
    covariances: np.ndarray
    stage: str


class SmootherResult(NamedTuple):
    prior: BeliefSequence | None
    filtered: BeliefSequence | None
    smoothed: BeliefSequence


def build_ltv(model: LiftedModel, inputs: np.ndarray, measurements: np.ndarray,
              initial_state: np.ndarray | None = None) -> LtvProblem:
    """Freeze the test inputs into the bilinear model.

    ``inputs`` holds ``nu_1..nu_K`` and ``measurements`` holds ``gamma_0..gamma_K`` in
    original coordinates. Without an initial state the training-feature mean is used.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    measurements = np.atleast_2d(np.asarray(measurements, dtype=float))
    if inputs.size == 0:
        inputs = inputs.reshape(0, model.input_basis.input_dim)
    if inputs.shape[0] != measurements.shape[0] - 1:
        raise ValueError(f"need K inputs for K+1 measurements, got {inputs.shape[0]} and {measurements.shape[0]}")
    if not np.all(np.isfinite(inputs)):
        raise ValueError("inputs contain non-finite entries")
    U = embed(model.input_basis, inputs) if inputs.shape[0] else np.zeros((0, model.input_rank))
    Y = np.full((measurements.shape[0], model.meas_rank), np.nan)
    seen = np.all(np.isfinite(measurements), axis=1)
    if seen.any():
        Y[seen] = embed(model.meas_basis, measurements[seen])
    if initial_state is None:
        x0 = model.x_mean.copy()
        P0 = model.x_cov + model.Q
    else:
        x0 = embed(model.state_basis, np.asarray(initial_state, dtype=float))
        P0 = model.Q.copy()
    prob = LtvProblem(
        transitions=BilinearTransitions(model.A, model.H_blocks(), U),
        offsets=U @ model.B.T,
        measurements=Y, C=model.C, Q=model.Q, R=model.R, x0=x0, P0=P0,
    )
    prob.validate()
    return prob


def _sym(M):
    return 0.5 * (M + M.T)


def _spd_factor(M: np.ndarray, step: int, what: str):
    try:
        return la.cho_factor(M, lower=True), M
    except la.LinAlgError:
        pass
    w, V = la.eigh(_sym(M))
    floor = 1e-12 * max(np.trace(M), np.finfo(float).tiny)
    if w[-1] <= 0:
        raise EstimationError(f"{what} is not positive definite", step)
    M2 = (V * np.maximum(w, floor)) @ V.T
    log.debug("step %d: %s floored (min eig %.3e)", step, what, w[0])
    return la.cho_factor(_sym(M2), lower=True), M2


def rts_smooth(problem: LtvProblem, keep_all: bool = True) -> SmootherResult:
    """Kalman filter (Joseph update) then RTS backward pass.

    With ``keep_all=False`` the prior and filtered sequences are not returned and the
    smoothed covariances overwrite the filtered ones, so only one ``(K+1, n, n)`` stack
    is held in memory.
    """
    problem.validate()
    K, n = problem.steps, problem.dim
    C, Q, R = problem.C, problem.Q, problem.R
    eye = np.eye(n)

    xf = np.empty((K + 1, n))
    Pf = np.empty((K + 1, n, n))
    if keep_all:
        xp = np.empty((K + 1, n))
        Pp = np.empty((K + 1, n, n))

    x, P = problem.x0.astype(float).copy(), problem.P0.astype(float).copy()
    for k in range(K + 1):
        if k > 0:
            Ak = problem.transitions[k - 1]
            x = Ak @ x + problem.offsets[k - 1]
            P = _sym(Ak @ P @ Ak.T + Q)
        if keep_all:
            xp[k], Pp[k] = x, P
        y = problem.measurements[k]
        if np.all(np.isfinite(y)):
            PCt = P @ C.T
            S = _sym(C @ PCt + R)
            try:
                cS = la.cho_factor(S, lower=True)
            except la.LinAlgError as exc:
                raise EstimationError("innovation covariance is not positive definite", k) from exc
            G = la.cho_solve(cS, PCt.T).T
            x = x + G @ (y - C @ x)
            IKC = eye - G @ C
            P = _sym(IKC @ P @ IKC.T + G @ R @ G.T)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
            raise EstimationError("non-finite values in the forward pass", k)
        xf[k], Pf[k] = x, P

    if keep_all:
        filtered = BeliefSequence(xf.copy(), Pf.copy(), "filtered")
        prior = BeliefSequence(xp, Pp, "prior")
    xs, Ps = xf, Pf
    for k in range(K - 1, -1, -1):
        Ak = problem.transitions[k]
        AP = Ak @ Pf[k]
        Ppred = _sym(AP @ Ak.T + Q)
        fac, Ppred = _spd_factor(Ppred, k + 1, "predicted covariance")
        # smoother gain: P_k A_k^T Ppred^-1
        G = la.cho_solve(fac, AP).T
        xpred = Ak @ xf[k] + problem.offsets[k]
        xs[k] = xf[k] + G @ (xs[k + 1] - xpred)
        Ps[k] = _sym(Pf[k] + G @ (Ps[k + 1] - Ppred) @ G.T)
        if not np.all(np.isfinite(Ps[k])):
            raise EstimationError("non-finite values in the backward pass", k)
    smoothed = BeliefSequence(xs, Ps, "smoothed")
    if keep_all:
        return SmootherResult(prior, filtered, smoothed)
    return SmootherResult(None, None, smoothed)
