"""Small deterministic variate helpers built on top of the hash uniforms."""

from __future__ import annotations

import math

import numpy as np

from .errors import CapabilityError, ValidationError


def poisson_icdf(mu: float, u: float) -> int:
    """Smallest k with P(Poisson(mu) <= k) > u; exact linear-space scan."""
    if mu < 0 or not math.isfinite(mu):
        raise ValidationError(f"Poisson mean must be finite and >= 0, got {mu}")
    if mu == 0.0:
        return 0
    if mu > 700.0:
        raise CapabilityError("Poisson inverse CDF limited to mean <= 700")
    pmf = math.exp(-mu)
    cdf = pmf
    k = 0
    cap = int(mu + 12.0 * math.sqrt(mu) + 60.0)
    while u >= cdf and k < cap:
        k += 1
        pmf *= mu / k
        cdf += pmf
    return k


def exponentials(uniforms: np.ndarray) -> np.ndarray:
    """Standard exponentials from uniforms in [0, 1), strictly positive."""
    u = np.asarray(uniforms, dtype=np.float64)
    # shift by half an ulp of the 53-bit grid so log never sees exactly 1
    return -np.log1p(-(u + 2.0**-54))


def log_cosh(x):
    """log(cosh(x)) without overflow for large |x|."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def poisson_tail(mu: float, k: int) -> float:
    """P(Poisson(mu) > k) by direct summation."""
    if mu == 0.0:
        return 0.0
    pmf = math.exp(-mu)
    cdf = pmf
    for i in range(1, k + 1):
        pmf *= mu / i
        cdf += pmf
    return max(0.0, 1.0 - cdf)
