"""Dimension constants, the truncated exponential and two exact binomial identities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import special

# exponent above which exp() is evaluated in the log domain
LOG_OVERFLOW = 700.0


@dataclass(frozen=True)
class DimensionContext:
    n: int
    omega: float
    alpha_n: float
    c_n: float
    harmonic: float
    threshold_poly: float

    @property
    def q(self) -> float:
        """Critical exponent n/(n-1)."""
        return self.n / (self.n - 1)

    @property
    def ball_factor(self) -> float:
        """|B_1| = omega/n."""
        return self.omega / self.n


def _gamma_half(n: int) -> float:
    # Gamma(n/2) from closed forms: factorials for even n, sqrt(pi) multiples for odd n
    if n % 2 == 0:
        return float(math.factorial(n // 2 - 1))
    k = (n - 1) // 2
    # Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
    return math.factorial(2 * k) * math.sqrt(math.pi) / (4**k * math.factorial(k))


def sphere_measure(n: int) -> float:
    """Surface measure of the unit sphere in R^n, 2 pi^{n/2} / Gamma(n/2)."""
    return 2.0 * math.pi ** (n / 2) / _gamma_half(n)


def harmonic_number(m: int) -> Fraction:
    return sum((Fraction(1, j) for j in range(1, m + 1)), Fraction(0))


def make_context(n: int) -> DimensionContext:
    if int(n) != n or n < 2:
        raise ValueError(f"dimension n must be an integer >= 2, got {n!r}")
    n = int(n)
    omega = sphere_measure(n)
    alpha_n = n * omega ** (1.0 / (n - 1))
    c_n = (omega / n) ** (1.0 / (n - 1))
    harmonic = float(harmonic_number(n - 1))
    threshold_poly = alpha_n ** (n - 1) / math.factorial(n - 1)
    return DimensionContext(n, omega, alpha_n, c_n, harmonic, threshold_poly)


def _check_nonneg(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("argument of Phi must be >= 0")
    return t


def _exp_minus_taylor(t: np.ndarray, degree: int) -> np.ndarray:
    # e^t - sum_{j=0}^{degree} t^j/j!  ==  e^t * P(degree+1, t)  (regularized lower gamma)
    if degree < 0:
        return np.exp(t)
    return np.exp(t) * special.gammainc(degree + 1, t)


def _log_exp_minus_taylor(t: np.ndarray, degree: int) -> np.ndarray:
    if degree < 0:
        return t.copy()
    with np.errstate(divide="ignore"):
        return t + np.log(special.gammainc(degree + 1, t))


def phi(ctx: DimensionContext, t):
    """Phi(t) = e^t - sum_{j=0}^{n-2} t^j/j!.

    Evaluated as e^t P(n-1, t) so that the small-t cancellation is avoided.
    Scalar in, scalar out.
    """
    arr = _check_nonneg(t)
    out = _exp_minus_taylor(arr, ctx.n - 2)
    return float(out) if out.ndim == 0 else out


def phi_prime(ctx: DimensionContext, t):
    """Derivative of Phi: e^t - sum_{j=0}^{n-3} t^j/j! (plain e^t when n = 2)."""
    arr = _check_nonneg(t)
    out = _exp_minus_taylor(arr, ctx.n - 3)
    return float(out) if out.ndim == 0 else out


def log_phi(ctx: DimensionContext, t):
    """log Phi(t), finite for arguments where Phi itself overflows."""
    arr = _check_nonneg(t)
    out = _log_exp_minus_taylor(arr, ctx.n - 2)
    return float(out) if out.ndim == 0 else out


def log_phi_prime(ctx: DimensionContext, t):
    arr = _check_nonneg(t)
    out = _log_exp_minus_taylor(arr, ctx.n - 3)
    return float(out) if out.ndim == 0 else out


def alternating_identity(m: int) -> tuple[Fraction, Fraction]:
    """Exact sides of sum_{k=0}^m (-1)^{m-k} C(m,k)/(m-k+1) = 1/(m+1)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    lhs = sum(
        (Fraction((-1) ** (m - k) * math.comb(m, k), m - k + 1) for k in range(m + 1)),
        Fraction(0),
    )
    return lhs, Fraction(1, m + 1)


def harmonic_identity(n: int) -> tuple[Fraction, Fraction]:
    """Exact sides of -sum_{k=0}^{n-2} C(n-1,k)(-1)^{n-1-k}/(n-k-1) = H_{n-1}."""
    if n < 2:
        raise ValueError("n must be >= 2")
    lhs = -sum(
        (
            Fraction(math.comb(n - 1, k) * (-1) ** (n - 1 - k), n - k - 1)
            for k in range(n - 1)
        ),
        Fraction(0),
    )
    return lhs, harmonic_number(n - 1)
