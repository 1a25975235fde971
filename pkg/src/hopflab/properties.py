"""Solver property checks over a matrix of models and payoffs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import DiffusionModel, Payoff, make_cev, make_gbm, payoff_library
from .pde import Grid1D, Solution1D, TimeGrid, build_grid, build_time_grid, solve_1d

COMPARISON_TOL = 1e-10
CONVEXITY_TOL = 1e-8
MONOTONE_TOL = 1e-8
AFFINE_TOL = 1e-12  # relative to the largest payoff value


@dataclass
class PropertyRow:
    model: str
    payoff: str
    comparison: float  # max of u1 - u2 where g1 <= g2
    convexity: float  # most negative scaled second difference
    time_monotonicity: float  # most negative increment in t
    affine: float  # max deviation from the affine payoff, relative
    byte_stable: bool

    @property
    def passed(self) -> bool:
        return (self.comparison <= COMPARISON_TOL
                and self.convexity >= -CONVEXITY_TOL
                and self.time_monotonicity >= -MONOTONE_TOL
                and self.affine <= AFFINE_TOL
                and self.byte_stable)


def default_models() -> list:
    return [
        ("gbm(0.2)", make_gbm(0.2)),
        ("gbm(1)", make_gbm(1.0)),
        ("cev(1,0)", make_cev(1.0, 0.0)),
        ("cev(1,0.5)", make_cev(1.0, 0.5)),
        ("cev(2,1)", make_cev(2.0, 1.0)),
        ("cev(1,1.5)", make_cev(1.0, 1.5)),
    ]


def default_payoffs() -> list:
    return [
        payoff_library("call", K=1.0),
        payoff_library("put", K=1.0),
        payoff_library("call", K=1.0, slope=2.0, intercept=0.5),
    ]


def second_differences(nodes: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Divided second differences along the last axis."""
    hl = nodes[1:-1] - nodes[:-2]
    hr = nodes[2:] - nodes[1:-1]
    left = (values[..., 1:-1] - values[..., :-2]) / hl
    right = (values[..., 2:] - values[..., 1:-1]) / hr
    return 2.0 * (right - left) / (hl + hr)


def check_combination(model: DiffusionModel, payoff: Payoff, grid: Grid1D, tgrid: TimeGrid,
                      model_name: str = "", far_field: str = "linear") -> PropertyRow:
    """All five properties for one pair.

    Time monotonicity is checked where the equation is solved; with the
    ``linear`` far field the last node is an extrapolation and is skipped.
    """
    def _solve(pay) -> Solution1D:
        return solve_1d(model, pay, grid, tgrid, far_field=far_field)

    sol = _solve(payoff)
    u = sol.values

    # a nonnegative convex bump keeps g1 <= g2 nodewise
    bump = payoff_library("call", K=0.5 * grid.xmax)
    upper = Payoff(lambda x: payoff(x) + 0.25 * bump(x), payoff.growth_degree, payoff.is_convex,
                   payoff.name + "+bump", kinks=tuple(payoff.kinks) + tuple(bump.kinks))
    u2 = _solve(upper).values
    comparison = float(np.max(u - u2))

    convexity = np.inf
    if payoff.is_convex:
        d2 = second_differences(grid.nodes, u)
        convexity = float(np.min(d2 * np.diff(grid.nodes)[1:]))  # scale to a value difference
    solved = u[:, :-1] if far_field == "linear" else u
    monotone = float(np.min(np.diff(solved, axis=0))) if payoff.is_convex else np.inf

    affine_pay = payoff_library("affine", slope=2.0, intercept=3.0)
    exact = 2.0 * grid.nodes + 3.0
    ua = _solve(affine_pay).values
    affine = float(np.max(np.abs(ua - exact)) / np.max(np.abs(exact)))

    again = _solve(payoff).values
    stable = again.tobytes() == u.tobytes()
    return PropertyRow(model_name or model.kind, payoff.name, comparison, convexity, monotone,
                       affine, stable)


def property_matrix(models: Sequence = None, payoffs: Sequence = None, xmax: float = 8.0,
                    m: int = 201, p: float = 2.0, T: float = 1.0, steps: int = 100,
                    far_field: str = "linear") -> list:
    """One row per (model, payoff) pair, in input order."""
    models = default_models() if models is None else list(models)
    payoffs = default_payoffs() if payoffs is None else list(payoffs)
    rows = []
    for name, model in models:
        for payoff in payoffs:
            grid = build_grid(xmax, m, p, snap=payoff.kinks)
            tgrid = build_time_grid(T, steps)
            rows.append(check_combination(model, payoff, grid, tgrid, name, far_field))
    return rows
