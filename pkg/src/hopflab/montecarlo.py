"""Monte Carlo pricing under absorbed driftless diffusions.

Paths run forward in calendar time ``s``; a model coefficient is evaluated at
time to maturity ``T - s`` to match the solver's time variable. Batches draw
from generators spawned from ``(seed, batch index)``, so results do not depend
on how batches are scheduled.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .models import DiffusionModel, ParameterError, Payoff, make_cev

SCHEMES = ("exact-gbm", "euler-absorbed")


@dataclass(frozen=True)
class PathConfig:
    n_paths: int
    n_steps: int = 2048
    seed: int = 0
    scheme: str = "euler-absorbed"
    T: float = 1.0
    batch_size: int = 1 << 16
    jobs: int = 1

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ParameterError("n_paths and n_steps must be at least 1")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if not self.T > 0:
            raise ParameterError("horizon must be positive")

    def batches(self) -> list:
        full, rest = divmod(self.n_paths, self.batch_size)
        return [self.batch_size] * full + ([rest] if rest else [])


@dataclass
class TerminalSamples:
    values: np.ndarray  # (n,) or (n, d)
    absorbed_fraction: float
    coarse: Optional[np.ndarray] = None  # same Brownian path, half the steps


@dataclass
class PriceEstimate:
    mean: float
    stderr: float
    n_paths: int
    absorbed_fraction: float


def _run_batches(config: PathConfig, work: Callable) -> list:
    seeds = np.random.SeedSequence(config.seed).spawn(len(config.batches()))
    jobs = [(np.random.Generator(np.random.PCG64(s)), size) for s, size in zip(seeds, config.batches())]
    if config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as pool:
            return list(pool.map(lambda j: work(*j), jobs))
    return [work(*j) for j in jobs]


def simulate_gbm_exact(x0: float, sigma: float, T: float, config: PathConfig) -> TerminalSamples:
    """``X(T) = x0 exp(-sigma^2 T / 2 + sigma sqrt(T) Z)``."""
    if x0 < 0 or not sigma > 0:
        raise ParameterError("need x0 >= 0 and sigma > 0")

    def work(rng, size):
        z = rng.standard_normal(size)
        return x0 * np.exp(-0.5 * sigma * sigma * T + sigma * math.sqrt(T) * z)

    values = np.concatenate(_run_batches(config, work))
    return TerminalSamples(values, float(np.mean(values == 0.0)))


def simulate_gbm_exact_nd(x0: Sequence[float], sigmas: Sequence[float], T: float,
                          config: PathConfig) -> TerminalSamples:
    """Independent exact GBMs, one column per coordinate."""
    x0 = np.asarray(x0, dtype=float)
    sig = np.asarray(sigmas, dtype=float)

    def work(rng, size):
        z = rng.standard_normal((size, x0.size))
        return x0 * np.exp(-0.5 * sig * sig * T + sig * math.sqrt(T) * z)

    values = np.concatenate(_run_batches(config, work))
    return TerminalSamples(values, float(np.mean(np.any(values == 0.0, axis=1))))


def _euler_batch(rng, size, x0, alpha, T, n_steps, coupled):
    dt = T / n_steps
    sq = math.sqrt(dt)
    x = np.full(size, float(x0))
    xc = x.copy() if coupled else None
    idx = np.arange(size) if x0 > 0 else np.arange(0)
    z_prev = None
    for k in range(n_steps):
        if idx.size == 0:
            break
        if k % 32 == 0:
            live = x[idx] > 0
            if coupled:
                live |= xc[idx] > 0
            idx = idx[live]
            z_prev = None
        z = rng.standard_normal(idx.size)
        s = k * dt
        xi = x[idx]
        step = xi + alpha(np.maximum(xi, 0.0), T - s) * sq * z
        x[idx] = np.where((xi > 0) & (step > 0), step, 0.0)
        if coupled:
            if k % 2 == 0:
                z_prev = z
            else:
                zc = (z_prev + z) / math.sqrt(2.0)
                xci = xc[idx]
                stepc = xci + alpha(np.maximum(xci, 0.0), T - (s - dt)) * math.sqrt(2 * dt) * zc
                xc[idx] = np.where((xci > 0) & (stepc > 0), stepc, 0.0)
    return x, xc


def simulate_euler_absorbed(model: DiffusionModel, x0: float, T: float, config: PathConfig,
                            coupled: bool = False) -> TerminalSamples:
    """Euler steps ``X += alpha(X, T - s) sqrt(dt) Z``, frozen at 0 once ``X <= 0``.

    With ``coupled`` a second path with half the steps is driven by the same
    Brownian increments, for step-doubling bias estimates.
    """
    if model.n != 1:
        raise ParameterError("Euler simulation is implemented for 1D models")
    if x0 < 0:
        raise ParameterError("x0 must be non-negative")
    if coupled and config.n_steps % 2:
        raise ParameterError("step doubling needs an even number of steps")
    alpha = model.vols[0]

    def work(rng, size):
        return _euler_batch(rng, size, x0, alpha, T, config.n_steps, coupled)

    parts = _run_batches(config, work)
    values = np.concatenate([p[0] for p in parts])
    coarse = np.concatenate([p[1] for p in parts]) if coupled else None
    return TerminalSamples(values, float(np.mean(values == 0.0)), coarse)


def simulate_cev_euler_absorbed(x0: float, sigma: float, beta: float, T: float,
                                config: PathConfig, coupled: bool = False) -> TerminalSamples:
    """CEV paths; ``beta == 2`` is routed to exact GBM sampling."""
    if beta == 2.0:
        return simulate_gbm_exact(x0, sigma, T, config)
    if not 0.0 <= beta < 2.0:
        raise ParameterError("beta must lie in [0, 2]")
    return simulate_euler_absorbed(make_cev(sigma, beta), x0, T, config, coupled)


def mc_price(payoff: Payoff, samples) -> PriceEstimate:
    """Sample mean of ``g(X(T))`` with its standard error."""
    values = samples.values if isinstance(samples, TerminalSamples) else np.asarray(samples, dtype=float)
    if values.shape[0] == 0:
        raise ParameterError("no samples")
    if isinstance(samples, TerminalSamples):
        absorbed = samples.absorbed_fraction
    else:
        absorbed = float(np.mean(values == 0.0)) if values.ndim == 1 else 0.0
    pay = payoff(*values.T) if values.ndim == 2 else payoff(values)
    pay = np.asarray(pay, dtype=float)
    if not np.all(np.isfinite(pay)):
        raise FloatingPointError("payoff produced non-finite values")
    n = pay.size
    std = float(np.std(pay, ddof=1)) if n > 1 else 0.0
    return PriceEstimate(float(np.mean(pay)), std / math.sqrt(n), n, absorbed)


@dataclass
class CrossCheck:
    reference: float
    estimate: PriceEstimate
    coarse_mean: float
    allowance: float
    error: float
    passed: bool


# Euler with absorption converges weakly at about order 1/2 near 0, so the
# coarse-fine difference is scaled by 1 / (sqrt(2) - 1).
DOUBLING_FACTOR = 1.0 / (math.sqrt(2.0) - 1.0)


def crosscheck(reference: float, payoff: Payoff, samples: TerminalSamples, n_se: float = 3.0) -> CrossCheck:
    """``|reference - mean| <= n_se * SE + step-doubling allowance``."""
    est = mc_price(payoff, samples)
    if samples.coarse is not None:
        coarse = mc_price(payoff, samples.coarse).mean
        allowance = DOUBLING_FACTOR * abs(est.mean - coarse)
    else:
        coarse, allowance = est.mean, 0.0
    err = abs(reference - est.mean)
    return CrossCheck(reference, est, coarse, allowance, err, err <= n_se * est.stderr + allowance)
