"""Predictive diffeomorphic registration on periodic grids.

Geodesic shooting with a spectral fluid kernel, an optimization-based
registration path, a patch-based momentum-prediction network trained from
synthetic multimodal pairs, and dropout-sampled deformation uncertainty.
"""

from .fields import (
    DeformationMap,
    GridSpec,
    ScalarField,
    VectorField,
    gradient,
    interpolate,
    jacobian,
    jacobian_determinant,
    warp_image,
)
from .kernel import FluidKernel, KernelParams, apply_K, apply_L, build_kernel
from .lddmm import EnergyParams, OptimResult, energy, energy_gradient, optimize
from .shooting import (
    DivergenceError,
    GeodesicState,
    ShootingConfig,
    advect_map_rhs,
    epdiff_rhs,
    shoot,
    shoot_and_warp,
)

__version__ = "0.1.0"
