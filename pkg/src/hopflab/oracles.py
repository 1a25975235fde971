"""Closed-form prices and boundary deltas used as ground truth."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

DIVERGENT = "divergent"


def norm_cdf(z):
    """Standard normal distribution function.

    Works on scalars and arrays; accurate to a few ulp across the real line,
    including the far tails where ``1 - Phi`` would cancel.
    """
    out = ndtr(np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _d_plus(x, t, sigma, K):
    s = sigma * np.sqrt(t)
    with np.errstate(divide="ignore"):
        return (np.log(x / K) + 0.5 * s * s) / s, s


def bs_call_price(x, t, sigma, K):
    """Driftless Black-Scholes call ``x Phi(d+) - K Phi(d-)``; payoff at ``t == 0``."""
    x = np.asarray(x, dtype=float)
    if t < 0:
        raise ValueError("time to maturity must be non-negative")
    if t == 0:
        out = np.maximum(x - K, 0.0)
    else:
        d1, s = _d_plus(x, t, sigma, K)
        out = np.where(x > 0, x * ndtr(d1) - K * ndtr(d1 - s), 0.0)
    return float(out) if out.ndim == 0 else out


def bs_call_delta(x, t, sigma, K):
    x = np.asarray(x, dtype=float)
    if t <= 0:
        out = (x > K).astype(float)
    else:
        d1, _ = _d_plus(x, t, sigma, K)
        out = np.where(x > 0, ndtr(d1), 0.0)
    return float(out) if out.ndim == 0 else out


def cev_beta1_boundary_delta(t, sigma, K):
    """``u_x(0, t) = exp(-2K / (sigma^2 t))`` for the call when ``a = sigma^2 x / 2``."""
    if not t > 0:
        raise ValueError("t must be positive")
    return math.exp(-2.0 * K / (sigma * sigma * t))


def power_option_price(x, t, gamma):
    """``x**gamma * exp((gamma**2 - gamma) t)``, the value under ``a(x, t) = x**2``."""
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) ** gamma * np.exp((gamma * gamma - gamma) * t)
    return float(out) if out.ndim == 0 else out


def power_boundary_delta_exists(gamma) -> bool:
    return gamma >= 1.0


def power_option_boundary_delta(t, gamma):
    """Boundary delta of the power option, or ``DIVERGENT`` when ``gamma < 1``."""
    if not power_boundary_delta_exists(gamma):
        return DIVERGENT
    if gamma == 1.0:
        return 1.0
    return 0.0


def margrabe_price(x1, x2, t, sigma1, sigma2):
    """Value of ``(x2 - x1)^+`` for two independent driftless GBMs."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if t <= 0:
        out = np.maximum(x2 - x1, 0.0)
        return float(out) if out.ndim == 0 else out
    s = math.sqrt((sigma1 * sigma1 + sigma2 * sigma2) * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(x2 / x1) + 0.5 * s * s) / s
        inner = x2 * ndtr(d1) - x1 * ndtr(d1 - s)
    out = np.where(x1 <= 0, x2, np.where(x2 <= 0, 0.0, inner))
    return float(out) if out.ndim == 0 else out


def max_claim_price(x1, x2, t, sigma1, sigma2):
    """``max(x1, x2)`` claim, obtained from the exchange option by adding ``x1``."""
    return margrabe_price(x1, x2, t, sigma1, sigma2) + np.asarray(x1, dtype=float)


ORACLES = {
    "norm_cdf": (norm_cdf, ("z",)),
    "bs_call_price": (bs_call_price, ("x", "t", "sigma", "K")),
    "bs_call_delta": (bs_call_delta, ("x", "t", "sigma", "K")),
    "cev_beta1_boundary_delta": (cev_beta1_boundary_delta, ("t", "sigma", "K")),
    "power_option_price": (power_option_price, ("x", "t", "gamma")),
    "margrabe_price": (margrabe_price, ("x1", "x2", "t", "sigma1", "sigma2")),
}
