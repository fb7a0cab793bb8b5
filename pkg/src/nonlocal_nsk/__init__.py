"""Pseudo-spectral solver for the nonlocal incompressible Navier--Stokes--Korteweg system."""

from .spectral import (
    Grid,
    RealField,
    SpectralField,
    make_grid,
    forward_transform,
    inverse_transform,
    partial_derivative,
    laplacian,
    dealias,
    sobolev_norm,
    l2_inner,
)
from .nonlocal_ops import (
    apply_k_alpha,
    apply_k_alpha_sq,
    relaxation_residual,
    leray_project,
    korteweg_force,
)
from .dynamics import (
    System,
    PhysParams,
    FlowState,
    Trajectory,
    make_state,
    simulate,
    rk4_step,
    cfl_dt,
)

__version__ = "0.1.0"
