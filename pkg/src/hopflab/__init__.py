"""Boundary deltas of degenerate Black-Scholes type equations: solvers, oracles and checks."""

__version__ = "0.1.0"

from .models import (DiffusionModel, ParameterError, Payoff, make_cev, make_cev_2d, make_gbm,
                     payoff_library, validate_hypothesis)
from .oracles import bs_call_price, margrabe_price, norm_cdf
from .pde import build_grid, build_time_grid, solve_1d, solve_2d_with_faces
from .boundary import boundary_delta, hopf_sweep

__all__ = [
    "DiffusionModel", "ParameterError", "Payoff", "make_cev", "make_cev_2d", "make_gbm",
    "payoff_library", "validate_hypothesis", "bs_call_price", "margrabe_price", "norm_cdf",
    "build_grid", "build_time_grid", "solve_1d", "solve_2d_with_faces", "boundary_delta",
    "hopf_sweep", "__version__",
]
