"""Closed-form reference prices used to check the numerical engines."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, poisson

__all__ = ["black_scholes_call", "black_scholes_put", "poisson_mixture_price"]


def black_scholes_call(s: float, k: float, sigma: float, T: float, r: float = 0.0) -> float:
    if T <= 0 or sigma <= 0:
        return max(s - k * math.exp(-r * max(T, 0.0)), 0.0)
    sd = sigma * math.sqrt(T)
    d1 = (math.log(s / k) + (r + 0.5 * sigma * sigma) * T) / sd
    return float(s * norm.cdf(d1) - k * math.exp(-r * T) * norm.cdf(d1 - sd))


def black_scholes_put(s: float, k: float, sigma: float, T: float, r: float = 0.0) -> float:
    return black_scholes_call(s, k, sigma, T, r) - s + k * math.exp(-r * T)


def poisson_mixture_price(payoff, x0: float, jump: float, intensity: float, T: float,
                          k_max: int = 30) -> float:
    """Price of ``payoff(S(T))`` for ``dS/S- = jump (dN - intensity dt)`` at zero rate.

    ``S(T) = x0 (1 + jump)^N exp(-jump intensity T)`` with ``N`` Poisson.
    """
    k = np.arange(k_max + 1)
    s_t = x0 * (1.0 + jump) ** k * math.exp(-jump * intensity * T)
    return float(np.sum(poisson.pmf(k, intensity * T) * payoff(s_t)))
