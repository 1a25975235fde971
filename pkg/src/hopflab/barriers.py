"""Sampled certificates for the comparison functions behind the Hopf-type results.

All barrier derivatives are closed form, so the only approximation is the
sampling of the comparison domain.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import DiffusionModel, LowerOrderTerms, ParameterError, Payoff, make_from_diffusion
from .pde import build_grid, build_time_grid, solve_1d

ROUNDOFF = 1e-12


@dataclass(frozen=True)
class BarrierParams:
    beta: float
    C: float
    epsilon: float
    N: int
    eta: float = 0.5
    t0: float = 1.0
    x_prime: tuple = ()

    @property
    def n(self) -> int:
        return 1 + len(self.x_prime)

    @property
    def rule_satisfied(self) -> bool:
        """``beta + eps - 1 < (N - 1)/N < 1``."""
        return self.beta + self.epsilon - 1.0 < (self.N - 1.0) / self.N < 1.0

    def with_eta(self, eta: float) -> "BarrierParams":
        return BarrierParams(self.beta, self.C, self.epsilon, self.N, eta, self.t0, self.x_prime)


def choose_barrier_params(beta: float, max_N: int = 1 << 20) -> tuple:
    """``(epsilon, N)``: ``epsilon = min(1/4, (2 - beta)/4)`` and the smallest power of two ``N``."""
    if not 0.0 <= beta < 2.0:
        raise ParameterError(f"no admissible barrier for beta={beta}: need 0 <= beta < 2")
    eps = min(0.25, (2.0 - beta) / 4.0)
    N = 1
    while not beta + eps - 1.0 < (N - 1.0) / N:
        N *= 2
        if N > max_N:
            raise ParameterError(f"no N <= {max_N} satisfies the parameter rule for beta={beta}")
    return eps, N


def barrier_value(params: BarrierParams, x1, t, others=()):
    """``x1 + x1^(1+eps) - |t - t0|^N - sum |x_i - x_i'|^(2N)``."""
    x1 = np.asarray(x1, dtype=float)
    v = x1 + x1 ** (1.0 + params.epsilon) - np.abs(np.asarray(t) - params.t0) ** params.N
    for xi, xp in zip(others, params.x_prime):
        v = v - np.abs(np.asarray(xi) - xp) ** (2 * params.N)
    return v


def barrier_dx1(params: BarrierParams, x1):
    x1 = np.asarray(x1, dtype=float)
    return 1.0 + (1.0 + params.epsilon) * x1**params.epsilon


def barrier_residual(model: DiffusionModel, params: BarrierParams, x1, t, others=()):
    """``sum a_ii v_{x_i x_i} - v_t`` with exact derivatives (t <= t0)."""
    eps, N = params.epsilon, params.N
    x1 = np.asarray(x1, dtype=float)
    tau = params.t0 - np.asarray(t, dtype=float)
    a11 = model.a(x1, t, 0) if np.ndim(t) == 0 else _a_pointwise(model, x1, t, 0)
    out = a11 * (1.0 + eps) * eps * x1 ** (eps - 1.0)
    # v_t = N tau^(N-1) for t <= t0
    out = out - N * tau ** (N - 1)
    for i, (xi, xp) in enumerate(zip(others, params.x_prime), start=1):
        xi = np.asarray(xi, dtype=float)
        aii = _a_pointwise(model, xi, t, i)
        out = out - (4 * N * N - 2 * N) * aii * np.abs(xi - xp) ** (2 * N - 2)
    return out


def _a_pointwise(model, x, t, i):
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    if model.autonomous:
        return model.a(x, float(t.flat[0]) if t.size else 0.0, i) * np.ones_like(x)
    ts = np.unique(t)
    if ts.size == 1:
        return model.a(x, float(ts[0]), i) * np.ones_like(x)
    out = np.empty_like(x)
    for tv in ts:
        mask = t == tv
        out[mask] = model.a(x[mask], float(tv), i)
    return out


@dataclass
class BarrierReport:
    passed: bool
    min_residual: float
    count: int
    offending: Optional[tuple]
    params: BarrierParams
    halvings: int
    history: list = field(default_factory=list)  # (eta, min residual)


def _sample_domain(params: BarrierParams, density: int):
    """Points of D = {v >= 0, 0 < x1 <= eta, t <= t0}, including its v = 0 boundary."""
    eps, N, eta, t0 = params.epsilon, params.N, params.eta, params.t0
    xs = eta * np.arange(1, density + 1) / density
    reach = xs + xs ** (1.0 + eps)  # v >= 0 needs |t - t0|^N + ... <= reach
    s = np.linspace(0.0, 1.0, density)
    if params.n == 1:
        tau = reach[:, None] ** (1.0 / N) * s[None, :]
        X = np.broadcast_to(xs[:, None], tau.shape)
        return X.ravel(), (t0 - tau).ravel(), ()
    if params.n != 2:
        raise ParameterError("barrier sampling is implemented for n <= 2")
    # split the budget between time and the |x2 - x2'| shell, both signs of the offset
    share = np.linspace(0.0, 1.0, density)
    X, S, W = np.meshgrid(xs, s, share, indexing="ij")
    R = np.broadcast_to(reach[:, None, None], X.shape)
    tau = (W * R) ** (1.0 / N) * S
    rad = ((1.0 - W) * R) ** (1.0 / (2 * N)) * S
    x2p = params.x_prime[0]
    X = np.concatenate([X.ravel(), X.ravel()])
    T = np.concatenate([(t0 - tau).ravel(), (t0 - tau).ravel()])
    X2 = np.concatenate([(x2p + rad).ravel(), (x2p - rad).ravel()])
    keep = X2 >= 0.0
    return X[keep], T[keep], (X2[keep],)


def verify_barrier_degenhopf(model: DiffusionModel, params: BarrierParams, density: int = 200,
                             max_halvings: int = 8) -> BarrierReport:
    """Sample ``L v`` over D, halving ``eta`` until the minimum is non-negative.

    The report carries the certified ``eta`` in ``params`` on success, or the
    last failing point otherwise.
    """
    if not 0.0 <= params.beta < 2.0:
        raise ParameterError("the parameter rule is unsatisfiable for beta >= 2")
    if model.n != params.n:
        raise ParameterError(f"model dimension {model.n} does not match the barrier ({params.n})")
    history = []
    current = params
    report = None
    for k in range(max_halvings + 1):
        X, T, others = _sample_domain(current, density)
        res = barrier_residual(model, current, X, T, others)
        j = int(np.argmin(res))
        worst = float(res[j])
        history.append((current.eta, worst))
        point = (float(X[j]),) + tuple(float(o[j]) for o in others) + (float(T[j]),)
        passed = worst >= -ROUNDOFF
        report = BarrierReport(passed, worst, int(X.size), None if passed else point,
                               current, k, history)
        if passed:
            break
        current = current.with_eta(current.eta / 2.0)
    return report


def lower_bound_holds(model: DiffusionModel, C: float, beta: float, xmax: float = 1.0,
                      ts=(0.0, 1.0)) -> bool:
    """Sampled check of ``a_11(x, t) >= C x**beta`` on ``(0, xmax]``."""
    xs = np.geomspace(1e-8, xmax, 400)
    return all(np.all(model.a(xs, t) >= C * xs**beta * (1 - 1e-12)) for t in ts)


# ---------------------------------------------------------------------------
# supersolution for the vanishing-delta result


@dataclass
class SupersolutionReport:
    passed: bool
    t0: float
    C1: float
    C2: float
    domination_passed: bool
    worst_domination_x: Optional[float]
    min_residual: float
    worst_residual_point: Optional[tuple]
    c2_sufficient: bool


def neghopf_time_step(C: float, N: float) -> float:
    """``1 / (2 C (N^2 - N))``."""
    return 1.0 / (2.0 * C * (N * N - N))


def normalize_payoff(payoff: Payoff) -> Payoff:
    """Subtract ``g(0) + g'(0) x`` so that the result has ``g(0) = g'(0) = 0``."""
    if payoff.gprime0 is None:
        raise ParameterError("payoff has no recorded g'(0)")
    g0 = float(payoff(np.array([0.0]))[0])
    return payoff.shifted(-payoff.gprime0, -g0)


def smallest_C1(g_vals, xs, epsilon, N) -> float:
    """Smallest C1 with ``g <= eps x + C1 x^N`` on the positive samples."""
    xs = np.asarray(xs, dtype=float)
    pos = xs > 0
    need = (np.asarray(g_vals)[pos] - epsilon * xs[pos]) / xs[pos] ** N
    return float(max(need.max(), 0.0))


def verify_supersolution_neghopf(C: float, payoff: Payoff, epsilon: float, N: float,
                                 C1: Optional[float] = None, C2: Optional[float] = None,
                                 model: Optional[DiffusionModel] = None, xmax: float = 10.0,
                                 density: int = 400) -> SupersolutionReport:
    """Check ``v = eps x + C1 x^N + C2 t x^N`` dominates g and is a supersolution up to t0.

    Without a model the extremal coefficient ``a = C x^2`` is used (``v_xx >= 0``,
    so it is the worst case); with a model, ``a <= C x^2`` is checked first.
    """
    if not N > 1:
        raise ParameterError("N must exceed 1")
    g0 = float(payoff(np.array([0.0]))[0])
    if abs(g0) > 1e-14 or payoff.gprime0 not in (0.0, None):
        raise ParameterError("payoff must be normalized to g(0) = g'(0) = 0")
    xs = np.concatenate([np.geomspace(1e-8, xmax, density), np.linspace(0.0, xmax, density)])
    xs = np.unique(xs)
    g = np.asarray(payoff(xs), dtype=float)
    if C1 is None:
        # searched on a finer, independent grid, with 1% margin
        fine = np.linspace(0.0, xmax, 20 * density + 7)[1:]
        C1 = 1.01 * smallest_C1(payoff(fine), fine, epsilon, N) or 1e-12
    if C2 is None:
        C2 = 4.0 * C * C1 * N * (N - 1.0)
    t0 = neghopf_time_step(C, N)

    dom = epsilon * xs + C1 * xs**N - g
    k = int(np.argmin(dom))
    dom_ok = bool(dom[k] >= -ROUNDOFF * max(1.0, abs(g[k])))

    ts = np.linspace(0.0, t0, 101)
    X, T = np.meshgrid(xs, ts, indexing="ij")
    if model is not None:
        a = _a_pointwise(model, X, T, 0)
        if np.any(a > C * X**2 * (1 + 1e-12)):
            raise ParameterError(f"model violates a <= {C:g} x^2 on samples")
    else:
        a = C * X**2
    vt = C2 * X**N
    vxx = (C1 + C2 * T) * N * (N - 1.0) * X ** (N - 2.0)
    res = vt - a * vxx
    scale = np.maximum(vt, a * vxx)
    j = np.unravel_index(int(np.argmin(res / np.maximum(scale, 1e-300))), res.shape)
    res_ok = bool(np.all(res >= -ROUNDOFF * np.maximum(scale, 1.0)))
    return SupersolutionReport(
        passed=dom_ok and res_ok, t0=t0, C1=float(C1), C2=float(C2),
        domination_passed=dom_ok, worst_domination_x=None if dom_ok else float(xs[k]),
        min_residual=float(res[j]), worst_residual_point=(float(X[j]), float(T[j])),
        c2_sufficient=C2 >= 2.0 * C * C1 * N * (N - 1.0) * (1 - 1e-12),
    )


@dataclass
class RestartReport:
    first: SupersolutionReport
    second: SupersolutionReport
    C1_restart: float
    delta_at_t0: float


def neghopf_restart(model: DiffusionModel, payoff: Payoff, epsilon: float, N: float, C: float,
                    xmax: float = 8.0, m: int = 801, steps: int = 200) -> RestartReport:
    """Re-run the supersolution check from ``u(., t0)`` with the same ``N``."""
    from .boundary import boundary_delta

    norm = normalize_payoff(payoff)
    first = verify_supersolution_neghopf(C, norm, epsilon, N, model=model, xmax=xmax)
    t0 = first.t0
    grid = build_grid(xmax, m, 2.0, snap=norm.kinks)
    sol = solve_1d(model, norm, grid, build_time_grid(t0, steps, "graded"))
    u_t0 = sol.at(t0)
    delta = boundary_delta(sol, t0).value
    C1r = smallest_C1(u_t0, grid.nodes, epsilon, N)
    nodes = grid.nodes
    restarted = Payoff(lambda x: np.interp(x, nodes, u_t0), norm.growth_degree, norm.is_convex,
                       "u(., t0)", gprime0=0.0)
    second = verify_supersolution_neghopf(C, restarted, epsilon, N, C1=1.01 * C1r or 1e-12,
                                          model=model, xmax=xmax)
    return RestartReport(first, second, C1r, float(delta))


# ---------------------------------------------------------------------------
# sharpness of the lower-order bounds


@dataclass
class SharpnessReport:
    max_residual_drift: float  # u_t = x^b u_xx - x^(b-1) u_x
    max_residual_potential: float  # u_t = x^b u_xx - 2 x^(b-2) u
    boundary_delta: float
    drift_bound_fails: bool
    potential_bound_fails: bool
    drift_bound_holds_at_zero_delta: bool
    potential_bound_holds_at_zero_delta: bool
    solver_drift: float
    passed: bool


def sharpness_systems(beta: float):
    """Lower-order terms of the two systems solved by ``u = x^2 / 2``."""
    drift = LowerOrderTerms(b=lambda x, t: -np.asarray(x) ** (beta - 1.0),
                            c=lambda x, t: 0.0 * np.asarray(x), C=1.0, delta=0.0, beta=beta)
    potential = LowerOrderTerms(b=lambda x, t: 0.0 * np.asarray(x),
                                c=lambda x, t: -2.0 * np.asarray(x) ** (beta - 2.0),
                                C=2.0, delta=0.0, beta=beta)
    return drift, potential


def sharpness_residuals(betas=(0.25, 0.5, 1.0, 1.5), samples: int = 100, seed: int = 0,
                        deltas=(1.0, 0.5, 0.1), constants=(1.0, 10.0)) -> SharpnessReport:
    """Residuals of ``u = x^2/2`` in both systems and the failure of the ``b``/``c`` bounds."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.01, 2.0, samples)
    u_t = np.zeros_like(x)
    u_x, u_xx = x, np.ones_like(x)
    r1 = r2 = 0.0
    for beta in betas:
        r1 = max(r1, float(np.max(np.abs(u_t - (x**beta * u_xx - x ** (beta - 1.0) * u_x)))))
        r2 = max(r2, float(np.max(np.abs(u_t - (x**beta * u_xx - 2.0 * x ** (beta - 2.0) * 0.5 * x * x)))))

    xs = np.geomspace(1e-100, 1.0, 2000)
    b_fails = c_fails = True
    b_zero = c_zero = True
    for beta in betas:
        drift, potential = sharpness_systems(beta)
        for d in deltas:
            for C in constants:
                b_fails &= not _with(drift, C, d).check_bounds(xs, [0.0])["b"][0]
                c_fails &= not _with(potential, C, d).check_bounds(xs, [0.0])["c"][0]
        b_zero &= _with(drift, 1.0, 0.0).check_bounds(xs, [0.0])["b"][0]
        c_zero &= _with(potential, 2.0, 0.0).check_bounds(xs, [0.0])["c"][0]

    from .boundary import delta_closed_form

    delta = delta_closed_form(lambda y, s: 0.5 * np.asarray(y) ** 2, 1.0).value
    drift_err = _solver_drift(betas)
    passed = (abs(delta) <= ROUNDOFF and r1 <= ROUNDOFF and r2 <= ROUNDOFF and b_fails and c_fails and b_zero and c_zero)
    return SharpnessReport(r1, r2, float(delta), b_fails, c_fails, b_zero, c_zero, drift_err, passed)


def _with(terms: LowerOrderTerms, C: float, delta: float) -> LowerOrderTerms:
    return LowerOrderTerms(terms.b, terms.c, C, delta, terms.beta)


def _solver_drift(betas, m: int = 201, steps: int = 50) -> float:
    """Max deviation from ``x^2/2`` when both systems are stepped by the solver."""
    grid = build_grid(2.0, m, 1.0)
    tgrid = build_time_grid(1.0, steps)
    payoff = Payoff(lambda x: 0.5 * x * x, 2.0, True, "x^2/2", gprime0=0.0)
    worst = 0.0
    for beta in betas:
        model = make_from_diffusion(lambda x, t, b=beta: np.asarray(x, dtype=float) ** b, 1.0)
        for terms in sharpness_systems(beta):
            sol = solve_1d(model, payoff, grid, tgrid, far_field="payoff", lower=terms)
            worst = max(worst, float(np.max(np.abs(sol.values - 0.5 * grid.nodes**2))))
    return worst


def barrier_certified(beta: float, model: DiffusionModel, t0: float = 1.0,
                      density: int = 200) -> BarrierReport:
    """Auto-chosen parameters, C taken from the model's CEV spec, eta by halving from 1/2."""
    if not model.cev:
        raise ParameterError("automatic certification needs a parametric CEV model")
    eps, N = choose_barrier_params(beta)
    C = model.cev[0].lower_bound_constant
    return verify_barrier_degenhopf(model, BarrierParams(beta, C, eps, N, 0.5, t0), density)
