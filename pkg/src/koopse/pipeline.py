"""In-memory experiment pipeline shared by the command line and the acceptance tests."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .baseline import BaselineConfig, extended_rts
from .config import ExperimentConfig
from .estimator import build_ltv, rts_smooth
from .features import sample_basis, with_standardization
from .recovery import MetricsReport, StateBelief, combine_metrics, decartesianize, recover, wrap_angle
from .simworld import SimTrajectory, generate_trajectory
from .sysid import LiftedModel, Transitions, fit_transitions

log = logging.getLogger(__name__)


def simulate_training(cfg: ExperimentConfig, num_points: int | None = None) -> Transitions:
    """``num_points`` transitions cut from consecutive simulated trajectories."""
    total = cfg.training.num_points if num_points is None else num_points
    if total < 1:
        raise ValueError("empty training request")
    length = cfg.training.trajectory_length
    parts, i = [], 0
    while sum(len(p) for p in parts) < total:
        traj = generate_trajectory(cfg.world, length, cfg.training.seed + i)
        parts.append(Transitions.from_trajectory(traj.states, traj.inputs, traj.measurements))
        i += 1
    tr = Transitions.concat(parts)
    return Transitions(tr.prev_states[:total], tr.states[:total], tr.inputs[:total], tr.measurements[:total])


def simulate_test(cfg: ExperimentConfig, num_trajectories: int | None = None,
                  length: int | None = None) -> list[SimTrajectory]:
    n = cfg.testing.num_trajectories if num_trajectories is None else num_trajectories
    K = cfg.testing.length if length is None else length
    return [generate_trajectory(cfg.world, K, cfg.testing.seed + i) for i in range(n)]


def sample_bases(cfg: ExperimentConfig, transitions: Transitions | None = None):
    sb = sample_basis(cfg.state_kernel, cfg.basis_seed)
    ub = sample_basis(cfg.input_kernel, cfg.basis_seed + 1)
    yb = sample_basis(cfg.meas_kernel, cfg.basis_seed + 2)
    if cfg.standardize:
        if transitions is None:
            raise ValueError("standardization needs the training transitions")
        sb = with_standardization(sb, transitions.states)
        ub = with_standardization(ub, transitions.inputs)
        yb = with_standardization(yb, transitions.measurements)
    return sb, ub, yb


def train_model(cfg: ExperimentConfig, transitions: Transitions) -> LiftedModel:
    sb, ub, yb = sample_bases(cfg, transitions)
    t0 = time.perf_counter()
    model = fit_transitions(transitions, sb, ub, yb, cfg.hyperparams)
    model.info["fit_seconds"] = time.perf_counter() - t0
    return model


def initial_state(cfg: ExperimentConfig, traj: SimTrajectory, index: int = 0) -> np.ndarray:
    x0 = traj.states[0].copy()
    if cfg.testing.initial_state == "perturbed":
        rng = np.random.default_rng(cfg.testing.seed + 10_000 + index)
        x0 = x0 + rng.standard_normal(3) * np.asarray(cfg.testing.perturb_std)
        x0[2] = wrap_angle(x0[2])
    return x0


def estimate(model: LiftedModel, traj: SimTrajectory, x0: np.ndarray | None) -> StateBelief:
    """Full test-time path: lift, build the LTV problem, smooth, and read back (x, y, theta)."""
    prob = build_ltv(model, traj.inputs, traj.measurements, x0)
    res = rts_smooth(prob, keep_all=False)
    mu, cov = recover(model.O_xi, res.smoothed.means, res.smoothed.covariances)
    return decartesianize(mu, cov)


def baseline_config(cfg: ExperimentConfig) -> BaselineConfig:
    return BaselineConfig.from_world(cfg.world)


@dataclass
class Comparison:
    koopse: MetricsReport
    baseline: MetricsReport
    koopse_runs: list[StateBelief]
    baseline_runs: list[StateBelief]

    def table(self) -> dict:
        keys = ("translation_rmse", "orientation_rmse", "translation_mahalanobis", "orientation_mahalanobis")
        return {k: {"koopse": getattr(self.koopse, k), "baseline": getattr(self.baseline, k)} for k in keys}

    def format_table(self) -> str:
        rows = [f"{'metric':<26}{'KoopSE':>12}{'baseline':>12}"]
        for k, v in self.table().items():
            rows.append(f"{k:<26}{v['koopse']:>12.4f}{v['baseline']:>12.4f}")
        return "\n".join(rows)


def compare(cfg: ExperimentConfig, model: LiftedModel, trajectories: list[SimTrajectory],
            bcfg: BaselineConfig | None = None) -> Comparison:
    if not trajectories:
        raise ValueError("empty test set")
    bcfg = bcfg or baseline_config(cfg)
    kr, br, truth = [], [], []
    for i, traj in enumerate(trajectories):
        x0 = initial_state(cfg, traj, i)
        kr.append(estimate(model, traj, x0))
        br.append(extended_rts(traj.inputs, traj.measurements, x0, bcfg))
        truth.append(traj.states)
    return Comparison(combine_metrics(kr, truth), combine_metrics(br, truth), kr, br)


def sweep(cfg: ExperimentConfig, axis: str, grid, transitions: Transitions | None = None,
          trajectories: list[SimTrajectory] | None = None) -> list[dict]:
    """RMSE of KoopSE along ``axis`` ('rff' or 'train_size') with the baseline as reference.

    For 'rff' the grid value sets both the state and measurement ranks.
    """
    grid = [int(g) for g in grid]
    if not grid:
        raise ValueError("sweep grid is empty")
    if grid != sorted(grid):
        raise ValueError(f"sweep grid must be sorted ascending, got {grid}")
    if axis not in ("rff", "train_size"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    if trajectories is None:
        trajectories = simulate_test(cfg, cfg.sweep.num_trajectories, cfg.sweep.length)
    if transitions is None:
        transitions = simulate_training(cfg, max(grid) if axis == "train_size" else None)
    bcfg = baseline_config(cfg)
    base = None
    rows = []
    for g in grid:
        if axis == "rff":
            c = dataclasses.replace(
                cfg,
                state_kernel=dataclasses.replace(cfg.state_kernel, rank=g),
                meas_kernel=dataclasses.replace(cfg.meas_kernel, rank=g),
            )
            tr = transitions
        else:
            c = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, num_points=g))
            if g > len(transitions):
                raise ValueError(f"grid value {g} exceeds the {len(transitions)} available transitions")
            tr = Transitions(transitions.prev_states[:g], transitions.states[:g], transitions.inputs[:g],
                             transitions.measurements[:g])
        t0 = time.perf_counter()
        model = train_model(c, tr)
        runs = [estimate(model, t, initial_state(c, t, i)) for i, t in enumerate(trajectories)]
        rep = combine_metrics(runs, [t.states for t in trajectories])
        if base is None:
            bruns = [extended_rts(t.inputs, t.measurements, initial_state(c, t, i), bcfg)
                     for i, t in enumerate(trajectories)]
            base = combine_metrics(bruns, [t.states for t in trajectories])
        rows.append({
            axis: g,
            "translation_rmse": rep.translation_rmse,
            "orientation_rmse": rep.orientation_rmse,
            "baseline_translation_rmse": base.translation_rmse,
            "baseline_orientation_rmse": base.orientation_rmse,
        })
        log.info("sweep %s=%d: %.4f m, %.4f rad (%.1fs)", axis, g, rep.translation_rmse,
                 rep.orientation_rmse, time.perf_counter() - t0)
    return rows
