"""Rough paths, rough integrals and rough differential equations on vector
spaces and on manifolds given by explicit atlases."""
from .errors import (CapacityError, DomainError, NumericError, ParseError, RoughError, SewingError,
                     ShapeError, ValidationError)
from .tensor import TruncatedTensor, tensor_exp, tensor_log, tensor_mul
from .lift import (ClassicalRoughPath, ControlEstimate, SampledPath, beta_constant, concat,
                   dp_distance, extend, load_path_csv, p_variation, signature)
from .integral import rough_integrate, sew
from .rde import solve_rde, solve_rde_signal_dep
from .atlas import Atlas, build_atlas
from .mpath import ManifoldRoughPath, from_classical, from_curve
from .mrde import Connection, solve_manifold_rde, verify_solution

__version__ = "0.1.0"

__all__ = [
    "RoughError", "ParseError", "ValidationError", "DomainError", "ShapeError", "CapacityError",
    "NumericError",
    "SewingError", "TruncatedTensor", "tensor_exp", "tensor_log", "tensor_mul",
    "ClassicalRoughPath", "ControlEstimate", "SampledPath", "beta_constant", "concat",
    "dp_distance", "extend", "load_path_csv", "p_variation", "signature", "rough_integrate",
    "sew", "solve_rde", "solve_rde_signal_dep", "Atlas", "build_atlas", "ManifoldRoughPath",
    "from_classical", "from_curve", "Connection", "solve_manifold_rde", "verify_solution",
]
