"""Posterior sampling and credible sets with block-triangular flow matching."""
from .cfm import ArchConfig, JointDataset, TrainConfig, VelocityModel, train
from .ode import OdeConfig, compute_rank, sample_joint, sample_posterior
from .tasks import get_task

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "JointDataset", "TrainConfig", "VelocityModel", "train",
    "OdeConfig", "compute_rank", "sample_joint", "sample_posterior", "get_task",
]
