"""Sound deduction search over candidate-set lattices with a learned
per-step deduction operator."""

__version__ = "0.1.0"

from .lattice import (
    LatticeShape,
    LatticeState,
    SolutionPoint,
    alpha,
    gamma_enumerate,
    join,
    leq,
    meet,
    supervision_target,
)
from .model import DeductionTransformer, ModelConfig, load_checkpoint, save_checkpoint

__all__ = [
    "LatticeShape",
    "LatticeState",
    "SolutionPoint",
    "alpha",
    "gamma_enumerate",
    "join",
    "leq",
    "meet",
    "supervision_target",
    "DeductionTransformer",
    "ModelConfig",
    "load_checkpoint",
    "save_checkpoint",
    "__version__",
]
