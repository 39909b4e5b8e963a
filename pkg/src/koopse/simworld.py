"""Unicycle robot with wheel odometry and UWB range anchors."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from .recovery import wrap_angle

STATE_DIM, INPUT_DIM = 3, 2


def _default_anchors():
    return ((0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (5.0, 5.0))


@dataclass(frozen=True)
class WorldConfig:
    anchors: tuple[tuple[float, float], ...] = field(default_factory=_default_anchors)
    biased_anchor_indices: tuple[int, ...] = (3, 4)
    range_bias: float = 0.20
    range_noise_std: float = 0.05
    odom_noise_std: tuple[float, float, float] = (0.01, 0.01, 0.005)
    timestep: float = 0.1
    bounds: tuple[float, float, float, float] = (0.0, 10.0, 0.0, 10.0)
    max_speed: float = 1.0
    max_turn_rate: float = 1.0
    waypoint_margin: float = 1.0
    # positive-only per-measurement bias on the biased anchors (obstruction/multipath)
    multipath: bool = False
    multipath_scale: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if len(self.anchors) < 1:
            raise ValueError("at least one anchor is required")
        for i in self.biased_anchor_indices:
            if not 0 <= i < len(self.anchors):
                raise ValueError(f"biased anchor index {i} out of range")
        if self.range_noise_std < 0 or min(self.odom_noise_std) < 0:
            raise ValueError("noise standard deviations must be nonnegative")
        if self.timestep <= 0:
            raise ValueError("timestep must be positive")
        x0, x1, y0, y1 = self.bounds
        if not (x1 - x0 > 2 * self.waypoint_margin and y1 - y0 > 2 * self.waypoint_margin):
            raise ValueError("workspace too small for the waypoint margin")

    @property
    def anchor_array(self) -> np.ndarray:
        return np.asarray(self.anchors, dtype=float)

    @property
    def bias_vector(self) -> np.ndarray:
        b = np.zeros(len(self.anchors))
        b[list(self.biased_anchor_indices)] = self.range_bias
        return b

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchors"] = [list(a) for a in self.anchors]
        for key in ("biased_anchor_indices", "odom_noise_std", "bounds"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        d = dict(d)
        if "anchors" in d:
            d["anchors"] = tuple(tuple(float(v) for v in a) for a in d["anchors"])
        for key in ("biased_anchor_indices", "odom_noise_std", "bounds"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SimTrajectory:
    """``states`` (K+1, 3), ``inputs`` (K, 2) for steps 1..K, ``measurements`` (K+1, n_anchors)."""

    states: np.ndarray
    inputs: np.ndarray
    measurements: np.ndarray
    seed: int = 0

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]

    def to_csv(self, path) -> None:
        n_r = self.measurements.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "x", "y", "theta", "u", "omega", *(f"r{j + 1}" for j in range(n_r))])
            for k in range(self.states.shape[0]):
                nu = self.inputs[k - 1] if k > 0 else (np.nan, np.nan)
                w.writerow([k, *(repr(float(v)) for v in self.states[k]), *(repr(float(v)) for v in nu),
                            *(repr(float(v)) for v in self.measurements[k])])

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> "SimTrajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array(rows[1:], dtype=float)
        if head[:6] != ["k", "x", "y", "theta", "u", "omega"]:
            raise ValueError(f"{path}: unexpected header {head[:6]}")
        if body.shape[0] == 0:
            raise ValueError(f"{path}: no rows")
        return cls(body[:, 1:4], body[1:, 4:6], body[:, 6:], seed)


def step_dynamics(state, control, noise=None, timestep: float = 0.1) -> np.ndarray:
    """Control-affine unicycle step ``xi + T u (cos th, sin th, 0) + T omega (0, 0, 1) + noise``."""
    x, y, th = np.asarray(state, dtype=float)
    u, om = np.asarray(control, dtype=float)
    nxt = np.array([x + timestep * u * np.cos(th), y + timestep * u * np.sin(th), th + timestep * om])
    if noise is not None:
        nxt = nxt + np.asarray(noise, dtype=float)
    nxt[2] = wrap_angle(nxt[2])
    return nxt


def measure(state, config: WorldConfig, noise=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Ranges to every anchor, plus the configured bias and additive noise."""
    p = np.asarray(state, dtype=float)[:2]
    r = np.linalg.norm(config.anchor_array - p, axis=1)
    bias = config.bias_vector
    if config.multipath and rng is not None:
        mask = bias != 0
        bias = bias.copy()
        bias[mask] = rng.exponential(config.multipath_scale, size=int(mask.sum()))
    r = r + bias
    if noise is not None:
        r = r + np.asarray(noise, dtype=float)
    return r


def _controller(state, goal, cruise, cfg: WorldConfig):
    dx, dy = goal[0] - state[0], goal[1] - state[1]
    err = wrap_angle(np.arctan2(dy, dx) - state[2])
    om = float(np.clip(2.0 * err, -cfg.max_turn_rate, cfg.max_turn_rate))
    u = float(np.clip(cruise * max(0.0, np.cos(err)) ** 2, 0.0, cfg.max_speed))
    return u, om


def generate_trajectory(config: WorldConfig, steps: int, seed: int) -> SimTrajectory:
    """Drive between random waypoints with a proportional heading controller."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = config.bounds
    m = config.waypoint_margin

    def waypoint():
        return np.array([rng.uniform(x0 + m, x1 - m), rng.uniform(y0 + m, y1 - m)])

    noise_std = np.asarray(config.odom_noise_std, dtype=float)
    state = np.array([*waypoint(), rng.uniform(-np.pi, np.pi)])
    state[2] = wrap_angle(state[2])
    goal, cruise = waypoint(), rng.uniform(0.3, 1.0) * config.max_speed
    states = np.empty((steps + 1, 3))
    inputs = np.empty((steps, 2))
    states[0] = state
    for k in range(1, steps + 1):
        if np.hypot(goal[0] - state[0], goal[1] - state[1]) < 0.5:
            goal, cruise = waypoint(), rng.uniform(0.3, 1.0) * config.max_speed
        nu = np.array(_controller(state, goal, cruise, config))
        state = step_dynamics(state, nu, rng.standard_normal(3) * noise_std, config.timestep)
        states[k] = state
        inputs[k - 1] = nu
    noise = rng.standard_normal((steps + 1, len(config.anchors))) * config.range_noise_std
    meas = np.array([measure(states[k], config, noise[k], rng) for k in range(steps + 1)])
    return SimTrajectory(states, inputs, meas, seed)
