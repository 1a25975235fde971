"""Boundary delta extraction, Hopf-regime sweeps and the patched discontinuity example."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .models import DiffusionModel, ParameterError, Payoff, make_cev, make_from_diffusion
from .pde import Solution1D, build_grid, build_time_grid, solve_1d

N_QUOTIENTS = 6
REFINE_FACTOR = 4.0
DIVERGENCE_RATIO = 1.5


class InsufficientResolution(ValueError):
    """Too few mesh points near x = 0 to extract a boundary derivative."""


@dataclass
class DeltaEstimate:
    value: Optional[float]
    spacings: np.ndarray
    quotients: np.ndarray
    order: int
    residual: float
    verdict: str  # "finite" or "divergent"

    @property
    def finite(self) -> bool:
        return self.verdict == "finite"


def _extrapolate_to_zero(eps: np.ndarray, q: np.ndarray) -> float:
    """Value at 0 of the interpolating polynomial through (eps, q)."""
    total = 0.0
    for i in range(eps.size):
        w = 1.0
        for j in range(eps.size):
            if j != i:
                w *= eps[j] / (eps[j] - eps[i])
        total += w * q[i]
    return float(total)


def _diverges(q_ladder: np.ndarray, ratio: float) -> bool:
    """True when |q| grows by more than ``ratio`` at each of three consecutive refinements."""
    mags = np.abs(q_ladder)
    if mags.size < 4 or mags[0] == 0.0:
        return False
    growth = mags[1:] / np.where(mags[:-1] > 0, mags[:-1], np.inf)
    return bool(np.all(growth[:3] > ratio))


def delta_from_samples(eps: np.ndarray, q: np.ndarray, ladder: np.ndarray,
                       order: int = 2, ratio: float = DIVERGENCE_RATIO) -> DeltaEstimate:
    """Combine one-sided quotients ``q`` at spacings ``eps`` (decreasing) into an estimate.

    ``ladder`` holds quotients at spacings shrinking by ``REFINE_FACTOR``; it
    drives the divergence verdict.
    """
    if _diverges(ladder, ratio):
        return DeltaEstimate(None, eps, q, order, math.inf, "divergent")
    k = order + 1
    value = _extrapolate_to_zero(eps[-k:], q[-k:])
    previous = _extrapolate_to_zero(eps[-k - 1:-1], q[-k - 1:-1])
    return DeltaEstimate(value, eps, q, order, abs(value - previous), "finite")


def delta_on_nodes(nodes: np.ndarray, values: np.ndarray, order: int = 2,
                   x_probe: Optional[float] = None, ratio: float = DIVERGENCE_RATIO) -> DeltaEstimate:
    """Boundary derivative at ``nodes[0] == 0`` from mesh values along one line."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    if nodes[0] != 0.0:
        raise ValueError("the first node must be the boundary x = 0")
    x_probe = 0.05 * nodes[-1] if x_probe is None else x_probe
    inside = int(np.count_nonzero((nodes > 0) & (nodes <= x_probe)))
    if inside < 4 or nodes.size <= N_QUOTIENTS:
        raise InsufficientResolution(
            f"only {inside} nodes in (0, {x_probe:g}]; at least 4 are required")
    ks = np.arange(N_QUOTIENTS, 0, -1)
    eps = nodes[ks]
    q = (values[ks] - values[0]) / eps

    targets = nodes[1] * REFINE_FACTOR ** np.arange(3, -1, -1)
    if targets[0] > x_probe:
        raise InsufficientResolution(
            f"divergence ladder needs nodes up to {targets[0]:g} but x_probe is {x_probe:g}")
    idx = np.array([int(np.argmin(np.abs(nodes[1:] - s))) + 1 for s in targets])
    if np.unique(idx).size < idx.size:
        raise InsufficientResolution("mesh too coarse near 0 for the divergence ladder")
    ladder = (values[idx] - values[0]) / nodes[idx]
    return delta_from_samples(eps, q, ladder, order, ratio)


def delta_closed_form(u: Callable, t: float, eps0: float = 1e-2, order: int = 2,
                      ratio: float = DIVERGENCE_RATIO) -> DeltaEstimate:
    """Boundary derivative of an evaluator ``u(x, t)`` at spacings ``eps0 / 4**k``."""
    eps = eps0 / REFINE_FACTOR ** np.arange(N_QUOTIENTS)
    u0 = float(np.asarray(u(np.array([0.0]), t)).ravel()[0])
    q = (np.asarray(u(eps, t), dtype=float) - u0) / eps
    return delta_from_samples(eps, q, q[-4:], order, ratio)


def boundary_delta(source, t: float, **kwargs) -> DeltaEstimate:
    """Estimate ``u_x(0, t)`` from a 1D solution, a closed form, or ``(nodes, values)``."""
    if isinstance(source, Solution1D):
        return delta_on_nodes(source.nodes, source.at(t), **kwargs)
    if isinstance(source, tuple):
        nodes, values = source
        return delta_on_nodes(nodes, values, **kwargs)
    if callable(source):
        return delta_closed_form(source, t, **kwargs)
    raise TypeError(f"cannot extract a boundary delta from {type(source).__name__}")


# ---------------------------------------------------------------------------
# sweeps and checks


@dataclass
class SweepRow:
    beta: float
    estimate: DeltaEstimate
    solution: Optional[Solution1D] = field(default=None, repr=False)


def hopf_sweep(betas: Sequence[float], sigma: float, payoff: Payoff, t: float,
               xmax: float = 20.0, m: int = 801, p: float = 2.0, steps: int = 400,
               theta: float = 1.0, jobs: int = 1) -> list:
    """Boundary delta of ``payoff`` under CEV(sigma, beta) for each beta, in input order."""
    for b in betas:
        if not 0.0 <= b <= 2.0:
            raise ParameterError(f"beta {b} outside [0, 2]")
    grid = build_grid(xmax, m, p, snap=payoff.kinks)
    tgrid = build_time_grid(t, steps, "graded")

    def one(beta):
        sol = solve_1d(make_cev(sigma, beta), payoff, grid, tgrid, theta)
        return SweepRow(float(beta), boundary_delta(sol, t), sol)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, betas))
    return [one(b) for b in betas]


@dataclass
class GprimeRow:
    t: float
    delta: float
    gprime0: float
    error: float
    passed: bool


def quadratic_bound_constant(model: DiffusionModel, xs=None, ts=(0.0, 1.0)) -> float:
    """Smallest C with ``a(x, t) <= C x**2`` on the samples; ``inf`` if the ratio blows up at 0."""
    xs = np.geomspace(1e-8, 100.0, 400) if xs is None else np.asarray(xs, dtype=float)
    xs = np.sort(xs[xs > 0])
    worst = 0.0
    for t in ts:
        ratio = model.a(xs, t) / xs**2
        if ratio[0] > ratio[1] * (1 + 1e-9) and ratio[0] == ratio.max():
            return math.inf
        worst = max(worst, float(ratio.max()))
    return worst


def check_gprime_match(model: DiffusionModel, payoff: Payoff, times: Sequence[float],
                       C: Optional[float] = None, tol: float = 1e-3, xmax: float = 8.0,
                       m: int = 801, p: float = 2.0, steps: int = 400) -> list:
    """Compare the boundary delta with ``g'(0)`` when ``a <= C x**2``."""
    if payoff.gprime0 is None:
        raise ParameterError("payoff has no recorded g'(0)")
    T = max(times)
    sampled = quadratic_bound_constant(model, ts=(0.0, 0.5 * T, T))
    if not math.isfinite(sampled):
        raise ParameterError("model is not bounded by C x^2 near zero")
    if C is not None and sampled > C * (1 + 1e-12):
        raise ParameterError(f"model violates a <= {C:g} x^2 on samples (needs C >= {sampled:g})")
    grid = build_grid(xmax, m, p, snap=payoff.kinks)
    tgrid = build_time_grid(T, steps, "graded", include=times)
    sol = solve_1d(model, payoff, grid, tgrid)
    rows = []
    for t in times:
        est = boundary_delta(sol, t)
        err = abs(est.value - payoff.gprime0) if est.finite else math.inf
        rows.append(GprimeRow(float(t), est.value, payoff.gprime0, err, err <= tol))
    return rows


@dataclass
class DeltaCurve:
    times: np.ndarray
    deltas: np.ndarray
    residuals: np.ndarray
    max_violation: float
    jumps: list  # (t_left, t_right, size)

    @property
    def increasing(self) -> bool:
        return self.max_violation <= 0.0


def analyse_curve(times, deltas, residuals=None, jump_tol: float = 0.1,
                  delta_fn: Optional[Callable[[float], float]] = None,
                  min_width: float = 1e-6) -> DeltaCurve:
    """Monotonicity and jump report for a sampled delta curve.

    An increment larger than ``jump_tol`` is a candidate discontinuity. With
    ``delta_fn`` the interval is bisected down to ``min_width`` and the jump is
    kept only if it does not shrink below ``jump_tol``; without it, the
    increment must also exceed ten times the median increment.
    """
    times = np.asarray(times, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    residuals = np.zeros_like(deltas) if residuals is None else np.asarray(residuals, dtype=float)
    inc = np.diff(deltas)
    violation = float(max(0.0, -inc.min())) if inc.size else 0.0
    scale = float(np.median(np.abs(inc))) if inc.size else 0.0
    jumps = []
    for k in range(inc.size):
        if abs(inc[k]) <= jump_tol:
            continue
        if delta_fn is None:
            if abs(inc[k]) > 10.0 * scale:
                jumps.append((float(times[k]), float(times[k + 1]), float(inc[k])))
            continue
        lo, hi, dlo, dhi = times[k], times[k + 1], deltas[k], deltas[k + 1]
        while hi - lo > min_width:
            mid = 0.5 * (lo + hi)
            dmid = delta_fn(mid)
            if abs(dmid - dlo) >= abs(dhi - dmid):
                hi, dhi = mid, dmid
            else:
                lo, dlo = mid, dmid
        if abs(dhi - dlo) > jump_tol:
            jumps.append((float(lo), float(hi), float(dhi - dlo)))
    return DeltaCurve(times, deltas, residuals, violation, jumps)


def boundary_delta_in_time(source, times: Sequence[float], jump_tol: float = 0.1,
                           **kwargs) -> DeltaCurve:
    """Delta curve ``t -> u_x(0, t)`` with a monotonicity/semicontinuity report."""
    payoff = getattr(source, "payoff", None)
    if payoff is not None and not payoff.is_convex:
        raise ParameterError("delta-curve monotonicity needs a convex payoff")
    ests = [boundary_delta(source, t, **kwargs) for t in times]
    if any(not e.finite for e in ests):
        raise ParameterError("boundary delta diverges at some sampled time")
    if isinstance(source, Solution1D):
        width = float(np.min(np.diff(source.tgrid.times)))
    else:
        width = 1e-6
    return analyse_curve(times, [e.value for e in ests], [e.residual for e in ests], jump_tol,
                         delta_fn=lambda t: boundary_delta(source, t, **kwargs).value,
                         min_width=width)


# ---------------------------------------------------------------------------
# the patched example with a discontinuous boundary delta

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _transition(u):
    """Smooth step: 0 for u <= 0, 1 for u >= 1, built from exp(-1/u)."""
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 1.0, 1.0, 0.0)
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    with np.errstate(over="ignore"):
        out[mid] = 1.0 / (1.0 + np.exp(1.0 / um - 1.0 / (1.0 - um)))
    return out


def _transition_prime(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    mid = (u > 0.0) & (u < 1.0)
    um = u[mid]
    s = _transition(um)
    out[mid] = s * (1.0 - s) * (1.0 / um**2 + 1.0 / (1.0 - um) ** 2)
    return out


class SmoothRamp:
    """Convex C-infinity ``h`` with ``h(0) = h'(0) = 0`` and ``h' = 1`` beyond ``y0``.

    ``h`` itself is integrated from ``h'`` with Gauss-Legendre panels and a
    cached cumulative table.
    """

    def __init__(self, y0: float = 1.0, cells: int = 1024):
        if not y0 > 0:
            raise ParameterError("y0 must be positive")
        self.y0 = float(y0)
        self._knots = np.linspace(0.0, self.y0, cells + 1)
        pieces = self._panel(self._knots[:-1], self._knots[1:])
        self._table = np.concatenate([[0.0], np.cumsum(pieces)])

    def _panel(self, a, b):
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        nodes = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        return 0.5 * (b - a)[..., 0] * np.sum(_GL_W * self.prime(nodes), axis=-1)

    def prime(self, y):
        return _transition(np.asarray(y, dtype=float) / self.y0)

    def second(self, y):
        return _transition_prime(np.asarray(y, dtype=float) / self.y0) / self.y0

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, 0.0, self.y0)
        k = np.minimum(np.searchsorted(self._knots, yc, side="right") - 1, self._knots.size - 2)
        inside = self._table[k] + self._panel(self._knots[k], yc)
        return np.where(y > self.y0, self._table[-1] + (y - self.y0), inside)

    @property
    def C(self) -> float:
        """``lim (y h'(y) - h(y)) = y0 - h(y0)``."""
        return self.y0 - float(self._table[-1])

    def check(self, ys=None) -> list:
        """Names of violated defining properties on the samples (empty when all hold)."""
        ys = np.linspace(0.0, 4.0 * self.y0, 2001) if ys is None else np.asarray(ys, dtype=float)
        bad = []
        if abs(float(self(np.array([0.0]))[0])) > 1e-15:
            bad.append("h(0) = 0")
        if abs(float(self.prime(np.array([0.0]))[0])) > 1e-15:
            bad.append("h'(0) = 0")
        beyond = ys[ys >= self.y0]
        if np.any(np.abs(self.prime(beyond) - 1.0) > 1e-15) or np.any(self.second(beyond) != 0.0):
            bad.append("h' = 1 and h'' = 0 beyond y0")
        if np.any(self.second(ys) < 0.0):
            bad.append("convexity")
        if np.any(self(ys) < 0.0):
            bad.append("non-negativity")
        return bad


@dataclass
class PatchedExample:
    t0: float
    h: SmoothRamp
    Cconst: float
    w: Solution1D
    curve: DeltaCurve
    coefficient: str = "consistent"

    @property
    def y0(self) -> float:
        return self.h.y0

    def v(self, x, t):
        """Exact piece on ``t < t0``."""
        x = np.asarray(x, dtype=float)
        s = self.t0 - t
        return x * x * math.exp(t) + s * self.h(x / s)

    def v_t(self, x, t):
        x = np.asarray(x, dtype=float)
        y = x / (self.t0 - t)
        return x * x * math.exp(t) - self.h(y) + y * self.h.prime(y)

    def v_xx(self, x, t):
        x = np.asarray(x, dtype=float)
        s = self.t0 - t
        return 2.0 * math.exp(t) + self.h.second(x / s) / s

    def a_tilde(self, x, t):
        """Coefficient making ``v`` a solution, in the displayed closed form."""
        x = np.asarray(x, dtype=float)
        s = self.t0 - t
        y = x / s
        num = x * x * math.exp(t) * s + x * self.h.prime(y) - s * self.h(y)
        den = 2.0 * math.exp(t) * s + self.h.second(y)
        return num / den

    def residual(self, x, t):
        """``v_t - a_tilde v_xx`` using closed-form derivatives."""
        return self.v_t(x, t) - self.a_tilde(x, t) * self.v_xx(x, t)

    def delta(self, t: float) -> DeltaEstimate:
        """Boundary delta of the patched solution; the ``w`` side at ``t >= t0``."""
        if t < self.t0:
            # spacings well inside the region where h vanishes to double precision
            return delta_closed_form(self.v, t, eps0=min(1e-3, 0.01 * (self.t0 - t)))
        return boundary_delta(self.w, t)

    def u(self, x, t):
        """The patched solution: ``v`` before ``t0``, the solved ``w`` from ``t0`` on."""
        if t < self.t0:
            return self.v(x, t)
        return self.w.value(x, t)


def patched_coefficient(Cconst: float, t0: float, coefficient: str = "consistent"):
    """Diffusion coefficient for ``t >= t0``.

    ``consistent`` uses ``(x^2 + C e^{-t0}) / 2``, which matches the time
    derivative of ``v`` at ``t0``; ``displayed`` uses ``(x^2 + C) / 2``.
    """
    if coefficient == "consistent":
        c = Cconst * math.exp(-t0)
    elif coefficient == "displayed":
        c = Cconst
    else:
        raise ParameterError(f"unknown coefficient variant {coefficient!r}")
    return c, (lambda x, t: 0.5 * (np.asarray(x, dtype=float) ** 2 + c))


def build_patched_counterexample(t0: float = 1.0, y0: float = 1.0, t_end: Optional[float] = None,
                                 xmax: float = 4.0, m: int = 801, p: float = 2.0,
                                 steps: int = 400, curve_times: Optional[Sequence[float]] = None,
                                 coefficient: str = "consistent") -> PatchedExample:
    """Patch the exact ``v`` (t < t0) to a solved ``w`` (t >= t0) and sample ``u_x(0, t)``."""
    if not t0 > 0:
        raise ParameterError("t0 must be positive")
    h = SmoothRamp(y0)
    bad = h.check()
    if bad:
        raise ParameterError(f"transition function violates: {', '.join(bad)}")
    Cconst = h.C
    t_end = 2.0 * t0 if t_end is None else t_end
    if curve_times is None:
        curve_times = np.concatenate([np.linspace(0.5 * t0, 0.9 * t0, 5),
                                      t0 + (t_end - t0) * np.linspace(0.0, 1.0, 6)])
    curve_times = np.asarray(curve_times, dtype=float)
    c, a = patched_coefficient(Cconst, t0, coefficient)
    model = make_from_diffusion(a, growth_constant=1.0 + math.sqrt(c))
    e0 = math.exp(t0)
    start = Payoff(lambda x: x * x * e0 + x, 2.0, True, "patched-start", gprime0=1.0)

    def far(x, t):
        # quadratic-plus-linear solution of the same equation, ignoring the x = 0 condition
        tau = t - t0
        return e0 * math.exp(tau) * x * x + x + c * e0 * (math.exp(tau) - 1.0)

    after = curve_times[curve_times >= t0]
    grid = build_grid(xmax, m, p)
    tgrid = build_time_grid(t_end, steps, "graded", include=after, start=t0)
    w = solve_1d(model, start, grid, tgrid, far_field=far)

    example = PatchedExample(t0, h, Cconst, w, None, coefficient)
    ests = [example.delta(t) for t in curve_times]
    example.curve = analyse_curve(curve_times, [e.value for e in ests], [e.residual for e in ests],
                                  delta_fn=lambda t: example.delta(t).value,
                                  min_width=float(np.min(np.diff(w.tgrid.times))))
    return example
