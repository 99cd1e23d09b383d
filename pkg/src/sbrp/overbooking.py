"""Bus-load moments and the normal-approximation overcrowding check.

The realised load of a bus is a Poisson-binomial sum of independent
Bernoulli(rho_i) riders.  Route search uses its normal approximation
(mean + z * sd <= Q + 1/2); the exact distribution is available for
validation through a dynamic-programming convolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import DomainError, VPlusTooSmall


@dataclass(frozen=True)
class LoadMoments:
    mu: float
    var: float

    def __add__(self, other):
        return LoadMoments(self.mu + other.mu, self.var + other.var)


@dataclass(frozen=True)
class ChanceParams:
    capacity: int = 48
    alpha: float = 0.05
    v_plus: int = field(default=-1)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("bus capacity must be >= 1")
        if not 0.0 < self.alpha <= 0.5:
            raise ValueError("alpha must lie in (0, 0.5]")
        if self.v_plus < 0:
            object.__setattr__(self, "v_plus", math.isqrt(self.capacity - 1) + 2)  # ceil(sqrt(Q)) + 1
        if self.v_plus < math.ceil(math.sqrt(self.capacity)):
            raise ValueError("v_plus must be >= ceil(sqrt(capacity))")

    @cached_property
    def z(self):
        return inv_norm_cdf(1.0 - self.alpha)


ZERO_LOAD = LoadMoments(0.0, 0.0)


def group_moments(riderships):
    p = np.asarray(riderships, dtype=float)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise DomainError("riderships must lie in [0, 1]")
    return LoadMoments(float(p.sum()), float(np.sum(p * (1.0 - p))))


# Acklam's rational approximation to the normal quantile; relative error
# about 1.15e-9 before the refinement step.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p):
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log1p(-p))
        return -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def inv_norm_cdf(p):
    """Standard normal quantile, refined by one Halley step on erfc."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    if p > 0.5:
        # 1 - p is exact here; refine in the lower tail where erfc keeps precision
        return -inv_norm_cdf(1.0 - p)
    x = _acklam(p)
    # residual of Phi(x) - p, with erfc keeping precision in both tails
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_feasible(moments, params):
    return moments.mu + params.z * math.sqrt(max(moments.var, 0.0)) <= params.capacity + 0.5


def sigma_tilde(var, v_plus):
    """Smallest integer level v in {0..v_plus} with v^2 >= var."""
    if var < 0:
        raise DomainError("variance must be >= 0")
    v = math.isqrt(int(math.floor(var)))
    while v * v < var:
        v += 1
    if v > v_plus:
        raise VPlusTooSmall(f"variance {var} needs level {v} > v_plus={v_plus}")
    return v


def integer_feasible(moments, params):
    """Chance check with the integer standard-deviation level (MILP form)."""
    try:
        s = sigma_tilde(moments.var, params.v_plus)
    except VPlusTooSmall:
        return False
    return moments.mu + params.z * s <= params.capacity + 0.5


def poisson_binomial_pmf(riderships):
    return kernels.poisson_binomial_pmf(np.asarray(riderships, dtype=float))


def poisson_binomial_tail(riderships, threshold):
    """Exact P(sum X_i > threshold) by O(n * threshold) convolution."""
    p = np.asarray(riderships, dtype=float)
    if p.size > 10_000:
        raise ValueError("at most 10000 riders supported")
    return kernels.poisson_binomial_tail(p, int(math.floor(threshold)))
