"""Diffusion coefficients, payoffs and the structural checks they must pass.

Coefficients follow the convention ``a = alpha**2 / 2`` per coordinate, and the
time argument is time to maturity throughout (the solver's time variable).
Only diagonal models are represented, so coordinate ``i`` sees a volatility
that depends on ``x_i`` and ``t`` alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Coefficient = Callable[[np.ndarray, float], np.ndarray]


class ParameterError(ValueError):
    """Raised for model or payoff parameters outside their admissible range."""


@dataclass(frozen=True)
class CevSpec:
    """Parametric volatility ``alpha(x, t) = sigma * x**(beta/2)``."""

    sigma: float
    beta: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.beta <= 2.0:
            raise ParameterError(f"beta must lie in [0, 2], got {self.beta}")

    def alpha(self, x, t=0.0):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        if self.beta == 0.0:
            # absorbed at zero even when the power would give 1
            return np.where(x > 0.0, self.sigma, 0.0)
        return self.sigma * x ** (self.beta / 2.0)

    def a(self, x, t=0.0):
        return 0.5 * self.alpha(x, t) ** 2

    @property
    def lower_bound_constant(self) -> float:
        """C in ``a(x, t) >= C x**beta``."""
        return 0.5 * self.sigma**2


@dataclass(frozen=True)
class DiffusionModel:
    """A diagonal diffusion in dimension 1 or 2.

    ``vols[i]`` evaluates the volatility of coordinate ``i`` on an array of
    prices at a single time. ``growth_constant`` is the C of the linear growth
    bound ``|alpha| <= C (1 + |x|)``.
    """

    vols: tuple
    growth_constant: float
    kind: str = "custom"
    cev: tuple = ()
    autonomous: bool = True
    diffusion: tuple = ()

    @property
    def n(self) -> int:
        return len(self.vols)

    @property
    def betas(self) -> tuple:
        return tuple(spec.beta for spec in self.cev)

    @property
    def sigmas(self) -> tuple:
        return tuple(spec.sigma for spec in self.cev)

    def alpha(self, x, t=0.0, i: int = 0) -> np.ndarray:
        return np.asarray(self.vols[i](np.asarray(x, dtype=float), t), dtype=float)

    def a(self, x, t=0.0, i: int = 0) -> np.ndarray:
        """Diffusion coefficient ``a_ii(x_i, t)``."""
        if self.diffusion:
            return np.asarray(self.diffusion[i](np.asarray(x, dtype=float), t), dtype=float)
        return 0.5 * self.alpha(x, t, i) ** 2

    def coordinate(self, i: int) -> "DiffusionModel":
        """The 1D model seen on a face where only coordinate ``i`` moves."""
        return DiffusionModel(
            vols=(self.vols[i],),
            growth_constant=self.growth_constant,
            kind=self.kind,
            cev=(self.cev[i],) if self.cev else (),
            autonomous=self.autonomous,
            diffusion=(self.diffusion[i],) if self.diffusion else (),
        )


def make_cev(sigma: float, beta: float) -> DiffusionModel:
    spec = CevSpec(float(sigma), float(beta))
    kind = "gbm" if spec.beta == 2.0 else "cev"
    return DiffusionModel(vols=(spec.alpha,), growth_constant=spec.sigma, kind=kind, cev=(spec,))


def make_gbm(sigma: float) -> DiffusionModel:
    return make_cev(sigma, 2.0)


def make_cev_2d(sigmas: Sequence[float], betas: Sequence[float]) -> DiffusionModel:
    specs = tuple(CevSpec(float(s), float(b)) for s, b in zip(sigmas, betas))
    if len(specs) != 2:
        raise ParameterError("two (sigma, beta) pairs are required")
    kind = "gbm" if all(s.beta == 2.0 for s in specs) else "cev"
    return DiffusionModel(
        vols=tuple(s.alpha for s in specs),
        growth_constant=max(s.sigma for s in specs),
        kind=kind,
        cev=specs,
    )


def make_from_diffusion(a: Coefficient, growth_constant: float, autonomous: bool = True) -> DiffusionModel:
    """1D model given directly by its diffusion coefficient ``a(x, t) >= 0``."""

    def vol(x, t):
        return np.sqrt(2.0 * np.maximum(a(x, t), 0.0))

    return DiffusionModel(
        vols=(vol,), growth_constant=growth_constant, kind="custom",
        autonomous=autonomous, diffusion=(a,),
    )


def make_table_model(xs: Sequence[float], alphas: Sequence[float], growth_constant: float) -> DiffusionModel:
    """Volatility interpolated linearly from a table, extended linearly past the last node."""
    xs = np.asarray(xs, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if xs.ndim != 1 or xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise ParameterError("table abscissae must be strictly increasing with at least two entries")
    if xs.shape != alphas.shape:
        raise ParameterError("table abscissae and volatilities differ in length")
    slope = (alphas[-1] - alphas[-2]) / (xs[-1] - xs[-2])

    def vol(x, t):
        x = np.asarray(x, dtype=float)
        inside = np.interp(x, xs, alphas)
        return np.where(x > xs[-1], alphas[-1] + slope * (x - xs[-1]), inside)

    return DiffusionModel(vols=(vol,), growth_constant=growth_constant, kind="custom-table")


def model_from_config(block: dict) -> DiffusionModel:
    kind = block.get("kind")
    if kind in ("cev", "gbm"):
        if kind == "gbm":
            sigmas = block.get("sigma")
            if isinstance(sigmas, (list, tuple)):
                return make_cev_2d(sigmas, [2.0] * len(sigmas))
            return make_gbm(float(sigmas))
        sigma, beta = block.get("sigma"), block.get("beta")
        if isinstance(sigma, (list, tuple)):
            return make_cev_2d(sigma, beta)
        return make_cev(float(sigma), float(beta))
    if kind == "custom-table":
        return make_table_model(block["x"], block["alpha"], float(block.get("C", 1.0)))
    raise ParameterError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# hypothesis validation


@dataclass
class ConditionCheck:
    name: str
    passed: bool
    worst_point: Optional[tuple] = None
    worst_value: float = 0.0
    detail: str = ""


@dataclass
class HypothesisReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> ConditionCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)


def default_sample_grid(xmax: float = 10.0, T: float = 1.0, m: int = 64):
    """Geometric grid on [0, xmax] crossed with {0, T/2, T}."""
    xs = np.concatenate([[0.0], np.geomspace(xmax * 1e-6, xmax, m - 1)])
    return xs, np.array([0.0, 0.5 * T, T])


def validate_hypothesis(model: DiffusionModel, sample_grid=None, C: Optional[float] = None) -> HypothesisReport:
    """Sample-based check of the growth, absorption and rank conditions.

    ``sample_grid`` is a pair ``(xs, ts)`` shared by every coordinate. Failures
    are returned as report entries.
    """
    xs, ts = sample_grid if sample_grid is not None else default_sample_grid()
    xs = np.asarray(xs, dtype=float)
    ts = np.asarray(ts, dtype=float)
    C = model.growth_constant if C is None else C
    report = HypothesisReport()

    worst = (None, -np.inf)
    growth_ok = True
    for i in range(model.n):
        for t in ts:
            excess = np.abs(model.alpha(xs, t, i)) - C * (1.0 + np.abs(xs))
            k = int(np.argmax(excess))
            if excess[k] > worst[1]:
                worst = ((i, float(xs[k]), float(t)), float(excess[k]))
            growth_ok &= bool(np.all(excess <= 1e-12 * (1.0 + np.abs(xs))))
    report.checks.append(ConditionCheck(
        "growth", growth_ok, worst[0], worst[1], f"|alpha| <= {C:g}(1+|x|)"))

    at_zero = xs == 0.0
    worst = (None, 0.0)
    absorb_ok = True
    if np.any(at_zero):
        for i in range(model.n):
            for t in ts:
                vals = np.abs(model.alpha(xs[at_zero], t, i))
                if np.any(vals != 0.0):
                    absorb_ok = False
                    if vals.max() > worst[1]:
                        worst = ((i, 0.0, float(t)), float(vals.max()))
    report.checks.append(ConditionCheck(
        "absorption", absorb_ok, worst[0], worst[1], "alpha(0, t) == 0"))

    # diagonal alpha has full rank on the positive coordinates iff each entry is nonzero there
    worst = (None, 0.0)
    rank_ok = True
    positive = xs > 0.0
    for i in range(model.n):
        for t in ts:
            vals = np.abs(model.alpha(xs[positive], t, i))
            if np.any(vals == 0.0):
                rank_ok = False
                k = int(np.argmin(vals))
                worst = ((i, float(xs[positive][k]), float(t)), 0.0)
    report.checks.append(ConditionCheck(
        "rank", rank_ok, worst[0], worst[1], "alpha_ii(x, t) != 0 for x > 0"))
    return report


# ---------------------------------------------------------------------------
# payoffs


@dataclass(frozen=True)
class Payoff:
    g: Callable
    growth_degree: float
    is_convex: bool
    name: str
    dim: int = 1
    gprime0: Optional[float] = None
    kinks: tuple = ()

    def __call__(self, *x):
        return self.g(*[np.asarray(xi, dtype=float) for xi in x])

    def shifted(self, slope: float = 0.0, intercept: float = 0.0) -> "Payoff":
        """Add the affine function ``slope * x + intercept`` (1D only)."""
        if self.dim != 1:
            raise ParameterError("affine shifts are only defined for 1D payoffs")
        g = self.g
        gp = None if self.gprime0 is None else self.gprime0 + slope
        return Payoff(
            g=lambda x: g(x) + slope * x + intercept,
            growth_degree=max(self.growth_degree, 1.0 if slope else 0.0),
            is_convex=self.is_convex,
            name=f"{self.name}{slope:+g}x{intercept:+g}",
            gprime0=gp,
            kinks=self.kinks,
        )


def payoff_library(name: str, **params) -> Payoff:
    """Build one of the standard contract functions by tag.

    Tags: ``call``, ``put``, ``power``, ``affine``, ``exchange``, ``max``.
    1D tags accept optional ``slope``/``intercept`` to add an affine function.
    """
    slope = float(params.pop("slope", 0.0))
    intercept = float(params.pop("intercept", 0.0))
    if name == "call":
        K = _positive(params, "K")
        pay = Payoff(lambda x: np.maximum(x - K, 0.0), 1.0, True, f"call(K={K:g})",
                     gprime0=0.0, kinks=(K,))
    elif name == "put":
        K = _positive(params, "K")
        pay = Payoff(lambda x: np.maximum(K - x, 0.0), 0.0, True, f"put(K={K:g})",
                     gprime0=-1.0, kinks=(K,))
    elif name == "power":
        gamma = _positive(params, "gamma")
        if gamma > 1.0:
            gp = 0.0
        elif gamma == 1.0:
            gp = 1.0
        else:
            gp = None
        pay = Payoff(lambda x: np.maximum(x, 0.0) ** gamma, gamma, gamma >= 1.0,
                     f"power(gamma={gamma:g})", gprime0=gp)
    elif name == "affine":
        pay = Payoff(lambda x: 0.0 * x, 1.0, True, "affine", gprime0=0.0)
        slope = slope if slope or intercept else 1.0
    elif name == "exchange":
        if slope or intercept:
            raise ParameterError("affine shifts are only defined for 1D payoffs")
        return Payoff(lambda x1, x2: np.maximum(x2 - x1, 0.0), 1.0, True, "exchange", dim=2)
    elif name == "max":
        if slope or intercept:
            raise ParameterError("affine shifts are only defined for 1D payoffs")
        return Payoff(lambda x1, x2: np.maximum(x1, x2), 1.0, True, "max", dim=2)
    else:
        raise ParameterError(f"unknown payoff tag {name!r}")
    if params:
        raise ParameterError(f"unexpected parameters for {name}: {sorted(params)}")
    if slope or intercept:
        pay = pay.shifted(slope, intercept)
    return pay


def _positive(params: dict, key: str) -> float:
    if key not in params:
        raise ParameterError(f"missing parameter {key!r}")
    value = float(params.pop(key))
    if not value > 0:
        raise ParameterError(f"{key} must be positive, got {value}")
    return value


def payoff_from_config(block: dict) -> Payoff:
    block = dict(block)
    kind = block.pop("kind", None)
    if kind is None:
        raise ParameterError("payoff.kind is required")
    params = {}
    aliases = {"strike": "K", "gamma": "gamma", "slope": "slope", "intercept": "intercept"}
    for key, value in block.items():
        if key not in aliases:
            raise ParameterError(f"unknown payoff key {key!r}")
        params[aliases[key]] = value
    return payoff_library(kind, **params)


# ---------------------------------------------------------------------------
# lower-order terms


@dataclass(frozen=True)
class LowerOrderTerms:
    """Drift and zeroth-order coefficients ``b(x, t)``, ``c(x, t)`` for 1D checks."""

    b: Callable
    c: Callable
    C: float
    delta: float
    beta: float

    def check_bounds(self, xs, ts) -> dict:
        """Evaluate the lower bounds on b and c on the samples.

        Returns ``{"b": (passed, worst_x), "c": (passed, worst_x)}``.
        """
        xs = np.asarray(xs, dtype=float)
        xs = xs[xs > 0]
        out = {}
        b_floor = -self.C * xs ** (self.beta - 1.0 + self.delta)
        c_floor = -self.C * xs ** (self.beta - 2.0 + self.delta)
        for key, fn, floor in (("b", self.b, b_floor), ("c", self.c, c_floor)):
            worst_gap, worst_x = np.inf, None
            for t in np.asarray(ts, dtype=float):
                gap = np.asarray(fn(xs, t), dtype=float) - floor
                k = int(np.argmin(gap))
                if gap[k] < worst_gap:
                    worst_gap, worst_x = float(gap[k]), float(xs[k])
            out[key] = (worst_gap >= -1e-12 * max(1.0, abs(worst_gap)), worst_x)
        return out


def growth_bound_constant(payoff: Payoff, xs) -> float:
    """Smallest M with ``|g(x)| <= M (1 + x)**N`` on the 1D samples."""
    xs = np.asarray(xs, dtype=float)
    vals = np.abs(payoff(xs))
    return float(np.max(vals / (1.0 + xs) ** payoff.growth_degree))
