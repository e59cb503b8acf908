"""Data-free flow-map distillation lab on synthetic 2D distributions.

Train a conditional flow-matching teacher, distill it into a one-step flow
map using only prior samples (prediction + correction objectives), and run
the desk-scale studies: teacher-data mismatch, error accumulation, objective
synergy, and Best-of-N inference scaling.
"""

__version__ = "0.1.0"

from .datasets import Checkerboard, Gmm, Moons, Rings, ring_gmm
from .flowmap import DeltaGrid, FlowMapModel, flowmap_apply, student_from_teacher
from .interpolant import cond_velocity, interpolate, transition
from .metrics import mmd_rbf, mode_coverage, sliced_wasserstein
from .net import NetworkSpec, forward, grad_params, jvp_scalar
from .teacher import (
    GmmVelocity,
    NetVelocity,
    SolverConfig,
    TeacherModel,
    guided_velocity,
    sample_teacher,
    solve,
    train_teacher,
)
from .trainer import DistillConfig, distill_run

__all__ = [
    "Checkerboard", "Gmm", "Moons", "Rings", "ring_gmm",
    "DeltaGrid", "FlowMapModel", "flowmap_apply", "student_from_teacher",
    "cond_velocity", "interpolate", "transition",
    "mmd_rbf", "mode_coverage", "sliced_wasserstein",
    "NetworkSpec", "forward", "grad_params", "jvp_scalar",
    "GmmVelocity", "NetVelocity", "SolverConfig", "TeacherModel",
    "guided_velocity", "sample_teacher", "solve", "train_teacher",
    "DistillConfig", "distill_run",
    "__version__",
]
