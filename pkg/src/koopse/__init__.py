"""Koopman State Estimator: lifted bilinear-Gaussian models learned from data and
batch state estimation on the resulting linear time-varying system."""

from .estimator import BeliefSequence, LtvProblem, build_ltv, rts_smooth
from .features import (
    FeatureBasis,
    KernelSpec,
    Linear,
    Periodic,
    Product,
    SquaredExponential,
    embed,
    embed_product,
    kernel_eval,
    sample_basis,
)
from .recovery import MetricsReport, StateBelief, compute_metrics, decartesianize, recover
from .sysid import Hyperparams, LiftedDataset, LiftedModel, Transitions, fit, khatri_rao, precompute_readout, stack_dataset

__version__ = "0.1.0"
