"""Upper bounds on ratios of maximum regrets.

Each calculator returns the bound together with the pieces it is built
from, so that callers can test the two halves separately: the numerator
bounds the shrinkage rule's maximum regret from above, the denominator
bounds the competitor's maximum regret from below.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from shrinkchoice.errors import DomainError
from shrinkchoice.rules import (
    ShrinkageSolution,
    TreatmentProblem,
    _mean_target,
    _std_from_coefficients,
    _target_coefficients,
    solve_shrinkage_factors,
)
from shrinkchoice.special import ETA_0, T_STAR_0, capital_h, eta

__all__ = [
    "CesBound",
    "PoolBound",
    "ces_lower_bound",
    "pool_lower_bound",
    "misspecification_inflation",
    "bound_thm1",
    "bound_thm2",
    "bound_thm3",
    "bound_thm4",
    "all_bounds",
]


def _kappa(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be finite and >= 0, got {value!r}")
    return value


@dataclass(frozen=True)
class CesBound:
    """Bound on ``max regret(shrinkage) / max regret(CES)``.

    Attributes:
        ratio: The bound.
        numerator: Upper bound on the shrinkage rule's maximum regret.
        denominator: Lower bound on the CES rule's maximum regret.
        inflation: Misspecification factor (1 when correctly specified).
        sufficient: Whether ``max sigma - min sigma <= kappa / t*(0)``.
        simplified: ``inflation`` alone, which bounds the ratio whenever
            ``sufficient`` holds.
    """

    ratio: float
    numerator: float
    denominator: float
    inflation: float = 1.0
    sufficient: bool = False
    simplified: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PoolBound:
    """Bound on ``max regret(shrinkage) / max regret(pooling)``.

    Attributes:
        ratio: First-line bound, numerator over ``pool_lower``.
        numerator: Upper bound on the shrinkage rule's maximum regret.
        pool_lower: Lower bound on the pooling rule's maximum regret.
        closed_form: The three-term minimum (``None`` under misspecification).
        terms: The three terms of that minimum.
        inflation: Misspecification factor.
        share: Constant multiplying ``s0 * eta(kappa / s0)`` in ``pool_lower``.
        even: Whether K is even; for odd K ``share`` is computed from the
            largest shares instead of fixed at one half.
    """

    ratio: float
    numerator: float
    pool_lower: float
    closed_form: Optional[float]
    terms: tuple
    inflation: float = 1.0
    share: float = 0.5
    even: bool = True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["terms"] = list(self.terms)
        return out


def _s_at(problem: TreatmentProblem, w: np.ndarray) -> np.ndarray:
    a, b, c = _target_coefficients(problem, _mean_target(problem))
    return _std_from_coefficients(a, b, c, w)


def ces_lower_bound(problem: TreatmentProblem, kappa: float):
    """``eta(0) * (sum_{k in K(kappa)} p_k sigma_k + sum_{k not in K(kappa)} p_k min sigma)``.

    Returns:
        ``(value, members)`` with ``members`` the boolean mask of ``K(kappa)``.
    """
    kappa = _kappa(kappa, "kappa")
    members = problem.sigma <= problem.sigma_min + kappa / T_STAR_0
    mixed = np.where(members, problem.sigma, problem.sigma_min)
    return ETA_0 * float(problem.p @ mixed), members


def _pool_share(problem: TreatmentProblem):
    k = problem.k_count
    if k % 2 == 0:
        return 0.5, True
    top = np.sort(problem.p)[::-1][: k // 2]
    return float(top.sum()), False


def pool_lower_bound(problem: TreatmentProblem, kappa: float):
    """``max{share * s0 eta(kappa/s0), s0 eta(kappa/s0) - kappa}`` and its share."""
    kappa = _kappa(kappa, "kappa")
    s0 = problem.s0
    base = s0 * eta(kappa / s0).eta
    share, even = _pool_share(problem)
    return max(share * base, base - kappa), share, even


def misspecification_inflation(
    problem: TreatmentProblem, kappa: float, kappa_prime: float, solution: ShrinkageSolution
) -> float:
    """``1 + max_k H((1 - w_k) kappa' / s_k(w_k)) * |kappa - kappa'|_+ / kappa'``.

    Exactly 1 when ``kappa' >= kappa``; infinite when ``kappa' = 0 < kappa``.
    """
    excess = max(kappa - kappa_prime, 0.0)
    if excess == 0.0:
        return 1.0
    if kappa_prime == 0.0:
        return math.inf
    w = solution.w_star
    args = (1.0 - w) * kappa_prime / _s_at(problem, w)
    h_max = max(capital_h(float(a)) for a in args)
    return 1.0 + h_max * excess / kappa_prime


def _numerator(problem: TreatmentProblem, solution: ShrinkageSolution) -> float:
    return float(problem.p @ solution.psi_values)


def bound_thm1(problem: TreatmentProblem, kappa: float) -> CesBound:
    """Shrinkage versus CES when the dispersion bound is correctly specified."""
    kappa = _kappa(kappa, "kappa")
    sol = solve_shrinkage_factors(problem, kappa)
    num = _numerator(problem, sol)
    den, _ = ces_lower_bound(problem, kappa)
    sufficient = problem.sigma_max - problem.sigma_min <= kappa / T_STAR_0
    return CesBound(num / den, num, den, 1.0, bool(sufficient), 1.0 if sufficient else None)


def bound_thm2(problem: TreatmentProblem, kappa: float) -> PoolBound:
    """Shrinkage versus pooling when the dispersion bound is correctly specified."""
    kappa = _kappa(kappa, "kappa")
    sol = solve_shrinkage_factors(problem, kappa)
    num = _numerator(problem, sol)
    lower, share, even = pool_lower_bound(problem, kappa)
    s0 = problem.s0
    base = s0 * eta(kappa / s0).eta
    gap = base - kappa
    terms = (
        1.0 / share,
        base / gap if gap > 0 else math.inf,
        2.0 * ETA_0 * float(problem.p @ problem.sigma) / base,
    )
    return PoolBound(num / lower, num, lower, min(terms), terms, 1.0, share, even)


def bound_thm3(problem: TreatmentProblem, kappa: float, kappa_prime: float) -> CesBound:
    """Shrinkage with factors chosen for ``kappa'`` versus CES over ``Theta(kappa)``.

    The numerator is ``sum_k p_k psi_k(w_k*(kappa'); kappa')`` times the
    misspecification inflation; at ``kappa' = kappa`` this equals
    :func:`bound_thm1`.
    """
    kappa = _kappa(kappa, "kappa")
    kappa_prime = _kappa(kappa_prime, "kappa_prime")
    sol = solve_shrinkage_factors(problem, kappa_prime)
    infl = misspecification_inflation(problem, kappa, kappa_prime, sol)
    num = _numerator(problem, sol) * infl
    den, _ = ces_lower_bound(problem, kappa)
    sufficient = problem.sigma_max - problem.sigma_min <= kappa / T_STAR_0
    return CesBound(num / den, num, den, infl, bool(sufficient), infl if sufficient else None)


def bound_thm4(problem: TreatmentProblem, kappa: float, kappa_prime: float) -> PoolBound:
    """Shrinkage with factors chosen for ``kappa'`` versus pooling over ``Theta(kappa)``."""
    kappa = _kappa(kappa, "kappa")
    kappa_prime = _kappa(kappa_prime, "kappa_prime")
    sol = solve_shrinkage_factors(problem, kappa_prime)
    infl = misspecification_inflation(problem, kappa, kappa_prime, sol)
    num = _numerator(problem, sol) * infl
    lower, share, even = pool_lower_bound(problem, kappa)
    closed = None
    terms = ()
    if kappa_prime == kappa:
        closed_bound = bound_thm2(problem, kappa)
        closed, terms = closed_bound.closed_form, closed_bound.terms
    return PoolBound(num / lower, num, lower, closed, terms, infl, share, even)


def all_bounds(problem: TreatmentProblem, kappa: float, kappa_prime: float) -> dict:
    """The four ratio bounds keyed ``thm1`` .. ``thm4``."""
    return {
        "thm1": bound_thm1(problem, kappa).ratio,
        "thm2": bound_thm2(problem, kappa).ratio,
        "thm3": bound_thm3(problem, kappa, kappa_prime).ratio,
        "thm4": bound_thm4(problem, kappa, kappa_prime).ratio,
    }
