"""Theta-scheme finite differences for ``u_t = a(x, t) u_xx`` on graded meshes.

The x = 0 boundary is never solved for: in 1D it is pinned to ``g(0)`` (the
ODE ``u_t = 0`` on the t-axis), and in 2D the two faces are solved first as
independent 1D problems and imposed as Dirichlet data on the interior.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, solve_banded
from scipy.sparse.linalg import splu

from .models import DiffusionModel, LowerOrderTerms, ParameterError, Payoff

log = logging.getLogger(__name__)

FarField = Union[str, Callable]


class SolverError(RuntimeError):
    """Singular step matrix or non-finite values during time stepping."""

    def __init__(self, message: str, step: Optional[int] = None, time: Optional[float] = None):
        super().__init__(message)
        self.step = step
        self.time = time


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid1D:
    nodes: np.ndarray
    p: float = 1.0

    @property
    def m(self) -> int:
        return self.nodes.size

    @property
    def xmax(self) -> float:
        return float(self.nodes[-1])

    def index_of(self, x: float, tol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.nodes - x)))
        if abs(self.nodes[k] - x) > tol * max(1.0, abs(x)):
            raise ValueError(f"{x} is not a grid node (nearest {self.nodes[k]})")
        return k


def build_grid(xmax: float, m: int, p: float = 2.0, snap: Sequence[float] = ()) -> Grid1D:
    """Nodes ``xmax * (k/(m-1))**p``; each point in ``snap`` replaces its nearest interior node."""
    if not xmax > 0:
        raise ParameterError(f"xmax must be positive, got {xmax}")
    if int(m) != m or m < 3:
        raise ParameterError(f"need at least 3 nodes, got {m}")
    if not p >= 1:
        raise ParameterError(f"grading exponent must be >= 1, got {p}")
    m = int(m)
    nodes = xmax * (np.arange(m) / (m - 1)) ** p
    nodes[-1] = xmax
    for s in snap:
        if not 0 < s < xmax:
            continue
        k = int(np.argmin(np.abs(nodes[1:-1] - s))) + 1
        lo, hi = nodes[k - 1], nodes[k + 1]
        # keep the mesh strictly increasing with no collapsed cell
        if lo + 0.25 * (nodes[k] - lo) < s < hi - 0.25 * (hi - nodes[k]):
            nodes[k] = s
    return Grid1D(nodes, float(p))


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    policy: str = "uniform"

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> int:
        return self.times.size - 1

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"{t} is not a time level (nearest {self.times[k]})")
        return k


def build_time_grid(T: float, steps: int, policy: str = "uniform", q: float = 2.0,
                    include: Sequence[float] = (), start: float = 0.0) -> TimeGrid:
    """Time levels on ``[start, T]``; ``graded`` clusters them near ``start`` as ``(k/n)**q``."""
    if not T > start:
        raise ParameterError("T must exceed the start time")
    if steps < 1:
        raise ParameterError("need at least one time step")
    s = np.arange(steps + 1) / steps
    if policy == "graded":
        s = s**q
    elif policy != "uniform":
        raise ParameterError(f"unknown time step policy {policy!r}")
    times = start + (T - start) * s
    extra = [t for t in include if start < t < T]
    if extra:
        times = np.union1d(times, extra)
        # drop levels that would create a vanishing step next to an inserted time
        keep = np.concatenate([[True], np.diff(times) > 1e-9 * (T - start)])
        times = times[keep]
    times[-1] = T
    return TimeGrid(times, policy)


# ---------------------------------------------------------------------------
# solutions


@dataclass
class Solution1D:
    grid: Grid1D
    tgrid: TimeGrid
    values: np.ndarray
    payoff: Optional[Payoff] = None
    model: Optional[DiffusionModel] = None

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def at(self, t: float) -> np.ndarray:
        """Values at time ``t``, interpolated linearly between time levels."""
        times = self.tgrid.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"t={t} outside the solved range [{times[0]}, {times[-1]}]")
        k = int(np.searchsorted(times, t))
        if k < times.size and abs(times[k] - t) <= 1e-12 * max(1.0, t):
            return self.values[k]
        if k > 0 and abs(times[k - 1] - t) <= 1e-12 * max(1.0, t):
            return self.values[k - 1]
        k = min(max(k, 1), times.size - 1)
        w = (t - times[k - 1]) / (times[k] - times[k - 1])
        return (1 - w) * self.values[k - 1] + w * self.values[k]

    def value(self, x, t: float):
        return np.interp(x, self.nodes, self.at(t))

    def write_csv(self, path, every: int = 1) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "u"])
            for k in range(0, self.tgrid.times.size, every):
                t = self.tgrid.times[k]
                for x, u in zip(self.nodes, self.values[k]):
                    writer.writerow([repr(float(t)), repr(float(x)), repr(float(u))])


@dataclass
class Solution2D:
    grid1: Grid1D
    grid2: Grid1D
    tgrid: TimeGrid
    values: np.ndarray  # (time, x1, x2)
    face_x1: Solution1D  # the face x1 = 0, a function of x2
    face_x2: Solution1D  # the face x2 = 0, a function of x1
    payoff: Optional[Payoff] = None
    model: Optional[DiffusionModel] = None

    def at(self, t: float) -> np.ndarray:
        k = self.tgrid.index_of(t)
        return self.values[k]

    def line(self, t: float, axis: int, other: float) -> tuple:
        """Nodes and values along ``x_{axis+1}`` with the other coordinate fixed at a node."""
        u = self.at(t)
        if axis == 0:
            j = self.grid2.index_of(other)
            return self.grid1.nodes, u[:, j]
        i = self.grid1.index_of(other)
        return self.grid2.nodes, u[i, :]

    def write_csv(self, path, every: int = 1) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x1", "x2", "u"])
            for k in range(0, self.tgrid.times.size, every):
                t = repr(float(self.tgrid.times[k]))
                for i, x1 in enumerate(self.grid1.nodes):
                    for j, x2 in enumerate(self.grid2.nodes):
                        writer.writerow([t, repr(float(x1)), repr(float(x2)),
                                         repr(float(self.values[k, i, j]))])


# ---------------------------------------------------------------------------
# 1D solver


def _stencils(x: np.ndarray):
    """Three-point weights at interior nodes for u_xx and u_x, exact on quadratics."""
    hl = x[1:-1] - x[:-2]
    hr = x[2:] - x[1:-1]
    s = hl + hr
    d2 = (2.0 / (hl * s), -2.0 / (hl * hr), 2.0 / (hr * s))
    d1 = (-hr / (hl * s), (hr - hl) / (hl * hr), hl / (hr * s))
    return d2, d1


def _operator_1d(x, a, d2, d1, lower, t):
    """Tridiagonal bands (lo, di, up) of the spatial operator at interior nodes."""
    lo, di, up = (a * w for w in d2)
    if lower is not None:
        xi = x[1:-1]
        b = np.asarray(lower.b(xi, t), dtype=float) * np.ones_like(xi)
        c = np.asarray(lower.c(xi, t), dtype=float) * np.ones_like(xi)
        lo = lo + b * d1[0]
        di = di + b * d1[1] + c
        up = up + b * d1[2]
    return lo, di, up


def _peclet_check(x, a, lower, t):
    xi = x[1:-1]
    b = np.abs(np.asarray(lower.b(xi, t), dtype=float) * np.ones_like(xi))
    h = np.maximum(xi - x[:-2], x[2:] - xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = np.where(a > 0, b * h / a, np.where(b > 0, np.inf, 0.0))
    if np.max(pe) > 2.0:
        warnings.warn(f"cell Peclet number {np.max(pe):.3g} exceeds 2; centred drift may oscillate",
                      RuntimeWarning, stacklevel=3)


def _far_value(far_field, payoff_vals, x_end, t):
    if far_field == "payoff":
        return payoff_vals[-1]
    return float(far_field(x_end, t))


def solve_1d(model: DiffusionModel, payoff: Payoff, grid: Grid1D, tgrid: TimeGrid,
             theta: float = 1.0, far_field: FarField = "linear",
             lower: Optional[LowerOrderTerms] = None, startup_steps: int = 2,
             coordinate: int = 0, initial: Optional[np.ndarray] = None) -> Solution1D:
    """Solve ``u_t = a u_xx (+ b u_x + c u)`` with ``u(x, 0) = g(x)``.

    ``far_field`` is ``"linear"`` (u_xx = 0 through the last three nodes),
    ``"payoff"`` (Dirichlet to g), or a callable ``f(x, t)`` giving Dirichlet data.
    With ``theta < 1`` the first ``startup_steps`` steps are implicit Euler.
    ``initial`` overrides the payoff values at the first time level.
    """
    if not 0.5 <= theta <= 1.0:
        raise ParameterError(f"theta must lie in [1/2, 1], got {theta}")
    if model.n != 1 and coordinate >= model.n:
        raise ParameterError("coordinate out of range")
    if far_field not in ("linear", "payoff") and not callable(far_field):
        raise ParameterError(f"unknown far-field condition {far_field!r}")
    x = grid.nodes
    m = x.size
    times = tgrid.times
    g_vals = np.asarray(payoff(x), dtype=float) * np.ones(m) if initial is None \
        else np.asarray(initial, dtype=float).copy()
    if not np.all(np.isfinite(g_vals)):
        raise SolverError("payoff is not finite on the grid", step=0, time=float(times[0]))
    d2, d1 = _stencils(x)
    out = np.empty((times.size, m))
    out[0] = g_vals
    u = g_vals.copy()
    g0 = float(g_vals[0])
    linear = far_field == "linear"
    r = (x[-1] - x[-2]) / (x[-2] - x[-3])

    a_cache = None
    if lower is not None:
        _peclet_check(x, model.a(x[1:-1], times[0], coordinate), lower, times[0])

    for n in range(1, times.size):
        t0, t1 = times[n - 1], times[n]
        dt = t1 - t0
        th = 1.0 if n <= startup_steps else theta
        if model.autonomous and lower is None:
            if a_cache is None:
                a_cache = model.a(x[1:-1], t1, coordinate) * np.ones(m - 2)
            a1 = a0 = a_cache
        else:
            a1 = model.a(x[1:-1], t1, coordinate) * np.ones(m - 2)
            a0 = model.a(x[1:-1], t0, coordinate) * np.ones(m - 2) if th < 1.0 else a1
        lo1, di1, up1 = _operator_1d(x, a1, d2, d1, lower, t1)

        rhs = u[1:-1].copy()
        if th < 1.0:
            lo0, di0, up0 = _operator_1d(x, a0, d2, d1, lower, t0)
            rhs += (1.0 - th) * dt * (lo0 * u[:-2] + di0 * u[1:-1] + up0 * u[2:])

        # unknowns are nodes 1..m-2; node 0 is pinned, node m-1 is eliminated or given
        L = -th * dt * lo1
        D = 1.0 - th * dt * di1
        U = -th * dt * up1
        rhs[0] -= L[0] * g0
        if linear:
            # u[m-1] = (1+r) u[m-2] - r u[m-3]
            D[-1] += (1.0 + r) * U[-1]
            L[-1] -= r * U[-1]
        else:
            u_end = _far_value(far_field, g_vals, x[-1], t1)
            rhs[-1] -= U[-1] * u_end
        ab = np.zeros((3, m - 2))
        ab[0, 1:] = U[:-1]
        ab[1] = D
        ab[2, :-1] = L[1:]
        try:
            inner = solve_banded((1, 1), ab, rhs)
        except (LinAlgError, ValueError) as exc:
            raise SolverError(f"singular tridiagonal system at step {n} (t={t1:g}): {exc}",
                              step=n, time=float(t1)) from exc
        u = np.empty(m)
        u[0] = g0
        u[1:-1] = inner
        u[-1] = (1.0 + r) * inner[-1] - r * inner[-2] if linear else u_end
        if not np.all(np.isfinite(u)):
            bad = int(np.argmax(~np.isfinite(u)))
            raise SolverError(f"non-finite value at x={x[bad]:g}, step {n} (t={t1:g})",
                              step=n, time=float(t1))
        out[n] = u
    return Solution1D(grid, tgrid, out, payoff, model)


# ---------------------------------------------------------------------------
# 2D solver


def _restrict(payoff: Payoff, axis_fixed: int) -> Payoff:
    """Payoff on the face where coordinate ``axis_fixed`` is zero."""
    g = payoff.g
    if axis_fixed == 0:
        fn = lambda x: g(np.zeros_like(x), x)  # noqa: E731
    else:
        fn = lambda x: g(x, np.zeros_like(x))  # noqa: E731
    return Payoff(fn, payoff.growth_degree, payoff.is_convex,
                  f"{payoff.name}|x{axis_fixed + 1}=0")


def _second_diff_matrix(x: np.ndarray) -> sp.csr_matrix:
    m = x.size
    (lo, di, up), _ = _stencils(x)
    rows = np.repeat(np.arange(1, m - 1), 3)
    cols = (np.arange(1, m - 1)[:, None] + np.array([-1, 0, 1])).ravel()
    vals = np.column_stack([lo, di, up]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


@dataclass
class _Plan2D:
    """Row classification and spatial operator for the flattened 2D grid."""

    m1: int
    m2: int
    interior: np.ndarray
    dirichlet: np.ndarray
    far_rows: sp.csr_matrix
    far_mask: np.ndarray
    op: Optional[sp.csr_matrix] = None
    cache: dict = field(default_factory=dict)


def _plan_2d(g1: Grid1D, g2: Grid1D, far_field: FarField) -> _Plan2D:
    m1, m2 = g1.m, g2.m
    idx = np.arange(m1 * m2).reshape(m1, m2)
    dirichlet = np.zeros((m1, m2), bool)
    dirichlet[0, :] = True
    dirichlet[:, 0] = True
    far = np.zeros((m1, m2), bool)
    far[-1, 1:] = True
    far[1:, -1] = True
    interior = ~(dirichlet | far)

    rows, cols, vals = [], [], []
    if far_field == "linear":
        x1, x2 = g1.nodes, g2.nodes
        r1 = (x1[-1] - x1[-2]) / (x1[-2] - x1[-3])
        r2 = (x2[-1] - x2[-2]) / (x2[-2] - x2[-3])
        for j in range(1, m2):
            k = idx[-1, j]
            rows += [k, k, k]
            cols += [k, idx[-2, j], idx[-3, j]]
            vals += [1.0, -(1.0 + r1), r1]
        for i in range(1, m1 - 1):
            k = idx[i, -1]
            rows += [k, k, k]
            cols += [k, idx[i, -2], idx[i, -3]]
            vals += [1.0, -(1.0 + r2), r2]
    else:
        ks = idx[far]
        rows, cols, vals = list(ks), list(ks), [1.0] * ks.size
    far_rows = sp.csr_matrix((vals, (rows, cols)), shape=(m1 * m2, m1 * m2))
    return _Plan2D(m1, m2, interior.ravel(), dirichlet.ravel(), far_rows, far.ravel())


def _operator_2d(model, g1, g2, t):
    a1 = model.a(g1.nodes, t, 0) * np.ones(g1.m)
    a2 = model.a(g2.nodes, t, 1) * np.ones(g2.m)
    A1 = sp.diags(a1) @ _second_diff_matrix(g1.nodes)
    A2 = sp.diags(a2) @ _second_diff_matrix(g2.nodes)
    return (sp.kron(A1, sp.identity(g2.m)) + sp.kron(sp.identity(g1.m), A2)).tocsr()


def solve_2d_with_faces(model: DiffusionModel, payoff: Payoff, grid1: Grid1D, grid2: Grid1D,
                        tgrid: TimeGrid, theta: float = 1.0, far_field: FarField = "linear",
                        startup_steps: int = 2) -> Solution2D:
    """Solve the 2D problem after solving both boundary faces as 1D problems.

    The interior uses a full 2D theta step with a sparse direct solve; the step
    matrix is factorized once per distinct step size when the model is autonomous.
    """
    if model.n != 2:
        raise ParameterError("solve_2d_with_faces needs a 2D model")
    if payoff.dim != 2:
        raise ParameterError("solve_2d_with_faces needs a 2D payoff")
    if not 0.5 <= theta <= 1.0:
        raise ParameterError(f"theta must lie in [1/2, 1], got {theta}")
    if far_field not in ("linear", "payoff"):
        raise ParameterError("2D far field must be 'linear' or 'payoff'")

    face_x1 = solve_1d(model.coordinate(1), _restrict(payoff, 0), grid2, tgrid, theta,
                       far_field, startup_steps=startup_steps)
    face_x2 = solve_1d(model.coordinate(0), _restrict(payoff, 1), grid1, tgrid, theta,
                       far_field, startup_steps=startup_steps)

    X1, X2 = np.meshgrid(grid1.nodes, grid2.nodes, indexing="ij")
    g = np.asarray(payoff(X1, X2), dtype=float)
    plan = _plan_2d(grid1, grid2, far_field)
    m1, m2 = plan.m1, plan.m2
    nn = m1 * m2
    times = tgrid.times
    out = np.empty((times.size, m1, m2))
    out[0] = g
    u = g.ravel().copy()
    g_flat = g.ravel()
    interior = plan.interior.astype(float)
    P_int = sp.diags(interior)
    P_dir = sp.diags(plan.dirichlet.astype(float))
    far_rhs = np.where(plan.far_mask, g_flat, 0.0) if far_field == "payoff" else np.zeros(nn)

    op = _operator_2d(model, grid1, grid2, times[0]) if model.autonomous else None
    for n in range(1, times.size):
        t0, t1 = times[n - 1], times[n]
        dt = t1 - t0
        th = 1.0 if n <= startup_steps else theta
        A1 = op if op is not None else _operator_2d(model, grid1, grid2, t1)
        key = (round(dt / times[-1], 12), th)
        lu = plan.cache.get(key) if op is not None else None
        if lu is None:
            M = P_int @ (sp.identity(nn) - th * dt * A1) + P_dir + plan.far_rows
            try:
                lu = splu(M.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"singular 2D system at step {n} (t={t1:g}): {exc}",
                                  step=n, time=float(t1)) from exc
            if op is not None:
                plan.cache[key] = lu
        rhs = interior * u
        if th < 1.0:
            A0 = op if op is not None else _operator_2d(model, grid1, grid2, t0)
            rhs += interior * ((1.0 - th) * dt * (A0 @ u))
        bnd = np.zeros((m1, m2))
        bnd[0, :] = face_x1.values[n]
        bnd[:, 0] = face_x2.values[n]
        rhs += np.where(plan.dirichlet, bnd.ravel(), 0.0) + far_rhs
        u = lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite 2D values at step {n} (t={t1:g})", step=n, time=float(t1))
        out[n] = u.reshape(m1, m2)
    return Solution2D(grid1, grid2, tgrid, out, face_x1, face_x2, payoff, model)


# ---------------------------------------------------------------------------
# refinement studies


@dataclass
class Problem1D:
    model: DiffusionModel
    payoff: Payoff
    xmax: float
    m: int
    T: float
    steps: int
    x_probe: float
    p: float = 2.0
    theta: float = 1.0
    far_field: FarField = "linear"
    time_policy: str = "uniform"
    oracle: Optional[Callable[[float, float], float]] = None

    def solve(self, level: int = 0) -> tuple:
        m = (self.m - 1) * 2**level + 1
        steps = self.steps * 2**level
        grid = build_grid(self.xmax, m, self.p, snap=tuple(self.payoff.kinks) + (self.x_probe,))
        tgrid = build_time_grid(self.T, steps, self.time_policy)
        sol = solve_1d(self.model, self.payoff, grid, tgrid, self.theta, self.far_field)
        return sol, float(sol.value(self.x_probe, self.T))


@dataclass
class RefinementRow:
    level: int
    m: int
    steps: int
    value: float
    error: Optional[float]
    diff_to_finer: Optional[float]
    order: Optional[float]


def refine_study(problem: Problem1D, levels: int = 3) -> list:
    """Solve on ``levels`` successively doubled meshes and estimate the observed order.

    The order at level ``l`` compares level ``l`` and ``l+1`` errors against the
    oracle when one is given, otherwise successive differences.
    """
    if levels < 2:
        raise ParameterError("a refinement study needs at least two levels")
    values = []
    for lvl in range(levels):
        _, v = problem.solve(lvl)
        values.append(v)
    exact = problem.oracle(problem.x_probe, problem.T) if problem.oracle else None
    errors = [abs(v - exact) if exact is not None else None for v in values]
    diffs = [abs(values[k + 1] - values[k]) for k in range(levels - 1)] + [None]
    rows = []
    for lvl in range(levels):
        order = None
        if exact is not None and lvl + 1 < levels:
            order = _order(errors[lvl], errors[lvl + 1])
        elif exact is None and lvl + 2 < levels:
            order = _order(diffs[lvl], diffs[lvl + 1])
        rows.append(RefinementRow(lvl, (problem.m - 1) * 2**lvl + 1, problem.steps * 2**lvl,
                                  values[lvl], errors[lvl], diffs[lvl], order))
    return rows


def _order(coarse, fine):
    if coarse is None or fine is None or fine <= 0 or coarse <= 0:
        return None
    return math.log2(coarse / fine)
