"""Equivariant N-body message passing for molecular properties.

Scalar and vector features are carried jointly for atoms, bonds, and bond
pairs; updates run on the molecular graph and its line graph so angular
information enters without breaking O(3) equivariance.  Everything runs on
float64 numpy through a small reverse-mode tape.
"""

from .autodiff import GradcheckReport, StaleTapeError, Tape, Tensor, gradcheck
from .geometry import (
    DegenerateGeometryError,
    GeometryError,
    MolecularGraph,
    Molecule,
    build_graph,
)
from .linegraph import EmptyLevelError, LineGraphLevel, TripletList, build_triplets, lift
from .model import (
    AsymmetricTensorError,
    CheckpointError,
    ConfigError,
    ModelConfig,
    ModelError,
    ModelParams,
    decompose_polarizability,
    energy_and_forces,
    forward,
    init_params,
    load_checkpoint,
    polarizability,
    save_checkpoint,
)
from .training import (
    DivergenceError,
    TrainConfig,
    TrainingError,
    evaluate,
    joint_loss,
    per_atom_tensor_rmse,
    train,
)
from .io import ParseError, RunConfig, read_extxyz, write_extxyz
from .estimator import MolecularPotentialRegressor, PolarizabilityRegressor
from .verify import OrthogonalSampler, certify_model, check_forces

__version__ = "0.1.0"

__all__ = [
    "AsymmetricTensorError",
    "CheckpointError",
    "ConfigError",
    "DegenerateGeometryError",
    "DivergenceError",
    "EmptyLevelError",
    "GeometryError",
    "GradcheckReport",
    "LineGraphLevel",
    "ModelConfig",
    "ModelError",
    "ModelParams",
    "MolecularGraph",
    "MolecularPotentialRegressor",
    "Molecule",
    "OrthogonalSampler",
    "ParseError",
    "PolarizabilityRegressor",
    "RunConfig",
    "StaleTapeError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainingError",
    "TripletList",
    "build_graph",
    "build_triplets",
    "certify_model",
    "check_forces",
    "decompose_polarizability",
    "energy_and_forces",
    "evaluate",
    "forward",
    "gradcheck",
    "init_params",
    "joint_loss",
    "lift",
    "load_checkpoint",
    "per_atom_tensor_rmse",
    "polarizability",
    "read_extxyz",
    "save_checkpoint",
    "train",
    "write_extxyz",
    "__version__",
]
