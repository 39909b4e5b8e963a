"""Experiment configuration: one declarative JSON file, overridable key by key."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .features import KernelSpec, Linear, Periodic, Product, SquaredExponential
from .simworld import WorldConfig
from .sysid import Hyperparams

log = logging.getLogger(__name__)

CONFIG_ENV = "KOOPSE_CONFIG"


def default_state_kernel(rank: int = 256, xy_lengthscale: float = 2.0, heading_lengthscale: float = 1.5) -> KernelSpec:
    return KernelSpec(Product((
        (SquaredExponential((xy_lengthscale, xy_lengthscale)), (0, 1)),
        (Periodic(2.0 * np.pi, heading_lengthscale), (2,)),
    )), rank)


def default_meas_kernel(rank: int = 256, lengthscale: float = 3.0, n_anchors: int = 5) -> KernelSpec:
    return KernelSpec(SquaredExponential((lengthscale,) * n_anchors), rank)


def default_hyperparams() -> Hyperparams:
    return Hyperparams(lam_A=3e-5, lam_B=3e-5, lam_H=3e-5, lam_C=3e-5, lam_Q=1e-7, lam_R=1e-7, lam_x=1e-4)


@dataclass
class TrainingConfig:
    num_points: int = 20000
    trajectory_length: int = 1000
    seed: int = 1000


@dataclass
class TestingConfig:
    __test__ = False  # not a pytest class

    num_trajectories: int = 10
    length: int = 1000
    seed: int = 5000
    initial_state: str = "ground-truth"
    perturb_std: tuple[float, float, float] = (0.05, 0.05, 0.02)


@dataclass
class SweepConfig:
    rff: tuple[int, ...] = (32, 64, 128, 256, 512)
    train_size: tuple[int, ...] = (2500, 5000, 10000, 20000)
    num_trajectories: int = 5
    length: int = 300


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    state_kernel: KernelSpec = field(default_factory=default_state_kernel)
    input_kernel: KernelSpec = field(default_factory=lambda: KernelSpec(Linear(2)))
    meas_kernel: KernelSpec = field(default_factory=default_meas_kernel)
    hyperparams: Hyperparams = field(default_factory=default_hyperparams)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    testing: TestingConfig = field(default_factory=TestingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    basis_seed: int = 7
    standardize: bool = False

    def validate(self) -> None:
        for spec in (self.state_kernel, self.input_kernel, self.meas_kernel):
            spec.validate()
        if self.state_kernel.dim != 3 or self.input_kernel.dim != 2:
            raise ValueError("state kernel must act on 3 dimensions and input kernel on 2")
        if self.meas_kernel.dim != len(self.world.anchors):
            raise ValueError(f"measurement kernel acts on {self.meas_kernel.dim} dims, world has "
                             f"{len(self.world.anchors)} anchors")
        if self.training.num_points < 1:
            raise ValueError("empty training request")
        if self.training.trajectory_length < 1:
            raise ValueError("training.trajectory_length must be >= 1")
        if self.testing.initial_state not in ("ground-truth", "perturbed"):
            raise ValueError(f"testing.initial_state must be 'ground-truth' or 'perturbed', "
                             f"got {self.testing.initial_state!r}")
        if not self.sweep.rff or not self.sweep.train_size:
            raise ValueError("sweep grids must be nonempty")
        rx = self.state_kernel.rank
        ru = self.input_kernel.dim if isinstance(self.input_kernel.kernel, Linear) else self.input_kernel.rank
        if self.training.num_points < rx * (1 + ru) + ru:
            log.warning("training set of %d points is smaller than the %d motion-model unknowns per row; "
                        "the fit is underdetermined and relies on the ridge", self.training.num_points,
                        rx * (1 + ru) + ru)

    def kernel_hash(self) -> str:
        parts = [s.fingerprint() for s in (self.state_kernel, self.input_kernel, self.meas_kernel)]
        return hashlib.sha256("/".join(parts).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "state_kernel": self.state_kernel.to_dict(),
            "input_kernel": self.input_kernel.to_dict(),
            "meas_kernel": self.meas_kernel.to_dict(),
            "hyperparams": self.hyperparams.to_dict(),
            "training": dict(self.training.__dict__),
            "testing": {**self.testing.__dict__, "perturb_std": list(self.testing.perturb_std)},
            "sweep": {k: list(v) if isinstance(v, tuple) else v for k, v in self.sweep.__dict__.items()},
            "basis_seed": self.basis_seed,
            "standardize": self.standardize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        base = cls()
        d = copy.deepcopy(d)
        unknown = set(d) - set(base.to_dict())
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            world=WorldConfig.from_dict(d["world"]) if "world" in d else base.world,
            state_kernel=KernelSpec.from_dict(d["state_kernel"]) if "state_kernel" in d else base.state_kernel,
            input_kernel=KernelSpec.from_dict(d["input_kernel"]) if "input_kernel" in d else base.input_kernel,
            meas_kernel=KernelSpec.from_dict(d["meas_kernel"]) if "meas_kernel" in d else base.meas_kernel,
            hyperparams=Hyperparams.from_dict({**base.hyperparams.to_dict(), **d.get("hyperparams", {})}),
            training=TrainingConfig(**{**base.training.__dict__, **d.get("training", {})}),
            testing=TestingConfig(**{**base.testing.__dict__, **_tuples(d.get("testing", {}))}),
            sweep=SweepConfig(**{**base.sweep.__dict__, **_tuples(d.get("sweep", {}))}),
            basis_seed=int(d.get("basis_seed", base.basis_seed)),
            standardize=bool(d.get("standardize", base.standardize)),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, overrides: list[str]) -> "ExperimentConfig":
        """Apply ``dotted.key=json_value`` overrides, e.g. ``training.num_points=5000``."""
        d = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"override {item!r} is not of the form key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = d
            *path, leaf = key.split(".")
            for part in path:
                if part not in node or not isinstance(node[part], dict):
                    raise ValueError(f"unknown config key {key!r}")
                node = node[part]
            if leaf not in node:
                raise ValueError(f"unknown config key {key!r}")
            node[leaf] = value
        return ExperimentConfig.from_dict(d)


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def load_config(path=None) -> ExperimentConfig:
    """Read a JSON config; ``None`` falls back to ``$KOOPSE_CONFIG`` and then the defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return ExperimentConfig()
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))
