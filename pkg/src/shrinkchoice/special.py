"""Scalar kernels: the standard normal distribution and the worst-case
regret function ``eta``.

``eta(a) = max_{t >= 0} t * Phi(a - t)`` is the largest regret a single
Gaussian threshold decision can suffer when its statistic is biased by ``a``
standard deviations.  Everything in :mod:`shrinkchoice.rules` and
:mod:`shrinkchoice.bounds` reduces to this function.

The maximiser is found from the first-order condition.  Writing
``u = t - a`` the condition ``Phi(-u) = (u + a) phi(u)`` becomes
``log R(u) - log(u + a) = 0`` where ``R`` is the Mills ratio.  The residual
is strictly decreasing on ``u > -a``, so it has exactly one root and
Newton's method with a bisection safeguard converges to it from any
bracket.  The log form keeps Newton steps of order one far in the left
tail, where ``R`` grows like ``exp(u^2 / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special as sc

from shrinkchoice.errors import DomainError

__all__ = [
    "EtaEvaluation",
    "std_normal_cdf",
    "std_normal_pdf",
    "eta",
    "eta_values",
    "eta_prime",
    "capital_h",
    "eta_envelope",
    "T_STAR_0",
    "ETA_0",
    "ETA_PRIME_0",
]

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_HALF_PI = 0.5 * math.log(math.pi / 2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Upper end of the bracket in u = t - a.  R(10) - 10 < 0 for every a >= 0.
_U_HI = 10.0
_MAX_ITER = 100


def _check_finite(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"argument must be finite, got {x!r}")
    return arr


def std_normal_cdf(x):
    """Standard normal distribution function.

    Only the lower tail ``0.5 * erfc(|x| / sqrt(2))`` is ever evaluated;
    positive arguments are reflected, so ``cdf(-x) == 1 - cdf(x)`` holds for
    the returned floats.

    Args:
        x: Finite scalar or array.

    Returns:
        A float for scalar input, otherwise an array of the same shape.
    """
    arr = _check_finite(x)
    tail = 0.5 * sc.erfc(np.abs(arr) / _SQRT2)
    out = np.where(arr < 0, tail, 1.0 - tail)
    if out.ndim == 0:
        return float(out)
    return out


def std_normal_pdf(x):
    arr = _check_finite(x)
    out = _INV_SQRT_2PI * np.exp(-0.5 * arr * arr)
    if out.ndim == 0:
        return float(out)
    return out


def _tail(u):
    # Phi(-u) without the finiteness check, for the inner solver loop.
    tail = 0.5 * sc.erfc(np.abs(u) / _SQRT2)
    return np.where(u > 0, tail, 1.0 - tail)


def _log_mills(u):
    """``log R(u)`` with ``R(u) = Phi(-u) / phi(u)``; finite for all finite u."""
    z = u / _SQRT2
    with np.errstate(over="ignore", divide="ignore"):
        direct = np.log(sc.erfcx(z))
    # erfcx(z) = 2 exp(z^2) - erfcx(-z); the second term is negligible here
    asym = math.log(2.0) + z * z
    return _LOG_SQRT_HALF_PI + np.where(z < -25.0, asym, direct)


def _solve_u(a: np.ndarray) -> np.ndarray:
    """Root of ``log R(u) - log(u + a)`` for every entry of ``a`` (all >= 0).

    The residual is +inf at ``u = -a`` and negative at ``u = 10``.  Newton
    steps are taken while they stay inside the bracket and shrink it fast
    enough; otherwise the bracket is bisected.
    """
    lo = -a.copy()
    hi = np.full_like(a, _U_HI)
    x = 0.75 - np.sqrt(2.0 * np.log1p(a))
    x = np.where(x > lo, x, 0.5 * (lo + hi))
    width = hi - lo
    done = np.zeros(a.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(_MAX_ITER):
            log_r = _log_mills(x)
            resid = log_r - np.log(x + a)
            slope = x - np.exp(-log_r) - 1.0 / (x + a)
            lo = np.where(resid > 0, x, lo)
            hi = np.where(resid < 0, x, hi)
            step = resid / slope
            newton = x - step
            tiny = np.isfinite(step) & (np.abs(step) <= 1e-14 * (1.0 + np.abs(x)))
            ok = (
                np.isfinite(newton)
                & (newton > lo)
                & (newton < hi)
                & (np.abs(step) < 0.5 * width)
            )
            nxt = np.where(ok | tiny, newton, 0.5 * (lo + hi))
            width = np.abs(nxt - x)
            converged = tiny | (resid == 0) | (hi - lo <= 1e-15 * (1.0 + np.abs(x)))
            nxt = np.where(done, x, nxt)
            done |= converged
            x = nxt
            if done.all():
                break
    return x


def eta_values(a):
    """Vectorised ``(t_star, eta)`` for an array of arguments ``a >= 0``.

    This is the hot path used by the shrinkage-factor scans.  It relies on
    the strict monotonicity of the first-order residual and skips the
    peak-scan guard that :func:`eta` performs.
    """
    arr = _check_finite(a)
    if np.any(arr < 0):
        raise DomainError("eta is only defined here for a >= 0")
    flat = np.atleast_1d(arr).astype(float).ravel()
    u = _solve_u(flat)
    t_star = u + flat
    val = t_star * _tail(u)
    return t_star.reshape(arr.shape), val.reshape(arr.shape)


@dataclass(frozen=True)
class EtaEvaluation:
    """Maximiser and value of ``t * Phi(a - t)`` over ``t >= 0``."""

    a: float
    t_star: float
    eta: float

    @property
    def eta_prime(self) -> float:
        return float(_tail(np.float64(self.t_star - self.a)))


def _objective(t, a):
    return t * _tail(t - a)


def _guarded(a: float, t_star: float) -> float:
    """Return ``t_star`` if it beats a 64-point scan, else a fine-grid argmax."""
    grid = np.linspace(0.0, a + _U_HI, 64)
    best = _objective(t_star, a)
    if np.all(_objective(grid, a) <= best * (1.0 + 1e-12)):
        return t_star
    # Not reachable for a well-formed objective; kept as a safety net.
    fine = np.linspace(0.0, a + _U_HI, 2_000_001)
    return float(fine[np.argmax(_objective(fine, a))])


@lru_cache(maxsize=65536)
def _eta_cached(a: float) -> EtaEvaluation:
    u = float(_solve_u(np.array([a]))[0])
    t_star = _guarded(a, u + a)
    return EtaEvaluation(a=a, t_star=t_star, eta=float(_objective(t_star, a)))


def eta(a: float) -> EtaEvaluation:
    """Evaluate ``eta(a) = max_{t >= 0} t * Phi(a - t)``.

    Raises:
        DomainError: if ``a`` is negative or not finite.
    """
    a = float(a)
    if not math.isfinite(a):
        raise DomainError(f"argument must be finite, got {a!r}")
    if a < 0:
        raise DomainError("eta is only defined here for a >= 0")
    return _eta_cached(a + 0.0)  # folds -0.0 into 0.0


def eta_prime(a: float) -> float:
    """Derivative of eta, equal to ``Phi(a - t*(a))``."""
    return eta(a).eta_prime


def capital_h(a: float) -> float:
    """Inflation kernel ``a / eta(a)``; zero at ``a = 0``."""
    ev = eta(a)
    return ev.a / ev.eta


_E0 = eta(0.0)
T_STAR_0: float = _E0.t_star
ETA_0: float = _E0.eta
ETA_PRIME_0: float = _E0.eta_prime


def eta_envelope(a, shifts=range(-3, 4)):
    """Closed-form lower and upper envelopes of eta on ``a >= 0``.

    The lower envelope is the largest of ``eta(0) * sqrt(1 + a^2)`` and the
    supporting lines ``v Phi(-v) + Phi(-v) a`` (the objective at ``t = v + a``);
    the upper envelope is the smaller of ``sqrt(1 + a^2)`` and ``eta(0) + a``.

    Returns:
        ``(lower, upper)`` arrays shaped like ``a``.
    """
    arr = _check_finite(a)
    root = np.sqrt(1.0 + arr * arr)
    lower = ETA_0 * root
    for v in shifts:
        q = _tail(np.float64(v))
        lower = np.maximum(lower, v * q + q * arr)
    upper = np.minimum(root, ETA_0 + arr)
    return lower, upper
