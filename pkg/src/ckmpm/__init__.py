"""Compact-kernel material point method on a staggered dual grid."""

from .config import load_config, loads
from .dualgrid import BoundaryCondition, DualGrid, domain_walls
from .errors import (CkmpmError, ConfigError, DomainExitError, InvertedElementError, NaNGuardError,
                     NumericalError, OutputError)
from .kernel import ck_grad_1d, ck_weight_1d, dual_stencils, quad_bspline_stencil, stencil
from .materials import DruckerPrager, FixedCorotated, JFluid, make_material
from .sim import (Box, Cylinder, SceneConfig, Shape, Simulation, Sphere, cfl_dt, sample_shape,
                  total_momentum)
from .transfer import Particles, transfer_step

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition", "Box", "CkmpmError", "ConfigError", "Cylinder", "DomainExitError",
    "DruckerPrager", "DualGrid", "FixedCorotated", "InvertedElementError", "JFluid",
    "NaNGuardError", "NumericalError", "OutputError", "Particles", "SceneConfig", "Shape",
    "Simulation", "Sphere", "cfl_dt", "ck_grad_1d", "ck_weight_1d", "domain_walls",
    "dual_stencils", "load_config", "loads", "make_material", "quad_bspline_stencil",
    "sample_shape", "stencil", "total_momentum", "transfer_step",
]
