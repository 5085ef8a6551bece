"""Treatment rules and the choice of shrinkage factors.

Every rule handled here is a linear threshold rule: subgroup ``k`` is
treated when ``(C @ theta_hat)[k] + v[k] * Z[k] >= 0``.  CES, pooling and
both shrinkage families only differ in the weight matrix ``C``.

Shrinkage factors are chosen one subgroup at a time by minimising the
regret bound ``psi_k(w; kappa) = s_k(w) * eta((1 - w) * kappa / s_k(w))``
over ``w`` in ``[0, 1]``.  Subgroup indices are zero-based throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from shrinkchoice.errors import ConfigurationError, DomainError
from shrinkchoice.special import eta_values

__all__ = [
    "RuleKind",
    "TreatmentProblem",
    "LinearThresholdRule",
    "ShrinkageSolution",
    "Decision",
    "s_k",
    "psi",
    "solve_shrinkage_factors",
    "solve_shrinkage_factors_large_k",
    "solve_regression_shrinkage",
    "build_rule",
    "decide",
]

SCAN_POINTS = 1025  # 1024 intervals on [0, 1]
GOLDEN_TOL = 1e-8
TIE_TOL = 1e-12
SNAP_TOL = 1e-6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class RuleKind(str, enum.Enum):
    CES = "CES"
    POOL = "POOL"
    SHRINK_MEAN = "SHRINK_MEAN"
    SHRINK_REG = "SHRINK_REG"
    CUSTOM = "CUSTOM"


@dataclass(frozen=True, eq=False)
class TreatmentProblem:
    """Fixed design of a treatment-choice problem.

    Attributes:
        sigma: Standard deviations of the K subgroup estimates.
        p: Population shares of the subgroups; must sum to one.
        covariates: Optional ``K x d`` matrix of subgroup covariates, used by
            the regression-shrinkage variant.
    """

    sigma: np.ndarray
    p: np.ndarray
    covariates: Optional[np.ndarray] = None

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float).ravel()
        p = np.asarray(self.p, dtype=float).ravel()
        if sigma.size < 2:
            raise ConfigurationError("need at least two subgroups")
        if p.shape != sigma.shape:
            raise ConfigurationError("sigma and p must have the same length")
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ConfigurationError("every sigma_k must be finite and > 0")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ConfigurationError("population shares must be finite and >= 0")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"population shares sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "p", p)
        if self.covariates is not None:
            x = np.asarray(self.covariates, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != sigma.size:
                raise ConfigurationError("covariates need one row per subgroup")
            gram = x.T @ x
            cond = np.linalg.cond(gram)
            if not np.isfinite(cond) or cond > 1e12:
                raise ConfigurationError("covariate Gram matrix is singular")
            object.__setattr__(self, "covariates", x)

    @property
    def k_count(self) -> int:
        return self.sigma.size

    @property
    def sigma_min(self) -> float:
        return float(self.sigma.min())

    @property
    def sigma_max(self) -> float:
        return float(self.sigma.max())

    @property
    def s0(self) -> float:
        """Standard deviation of the pooled statistic ``ave(theta_hat)``."""
        return float(math.sqrt(np.sum(self.sigma**2)) / self.k_count)

    def hat_matrix(self) -> np.ndarray:
        if self.covariates is None:
            raise ConfigurationError("regression shrinkage needs covariates")
        x = self.covariates
        return x @ np.linalg.solve(x.T @ x, x.T)

    def to_dict(self, kappa_prime: Optional[float] = None) -> dict:
        out = {"sigma": self.sigma.tolist(), "p": self.p.tolist()}
        if self.covariates is not None:
            out["covariates"] = self.covariates.tolist()
        if kappa_prime is not None:
            out["kappa_prime"] = float(kappa_prime)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TreatmentProblem":
        try:
            return cls(
                sigma=data["sigma"],
                p=data["p"],
                covariates=data.get("covariates"),
            )
        except KeyError as exc:
            raise ConfigurationError(f"problem JSON is missing {exc}") from None

    @classmethod
    def homoscedastic(cls, k: int, sigma: float = 1.0) -> "TreatmentProblem":
        return cls(sigma=np.full(k, float(sigma)), p=np.full(k, 1.0 / k))


# -- variance of the shrunk statistic ---------------------------------------
#
# For the statistic w * theta_hat_k + (1 - w) * g_k @ theta_hat the variance is
#   w^2 A + 2 w (1 - w) B + (1 - w)^2 C
# with A = sigma_k^2, B = g_kk sigma_k^2, C = sum_l g_kl^2 sigma_l^2.


def _target_coefficients(problem: TreatmentProblem, target: np.ndarray):
    var = problem.sigma**2
    a = var
    b = np.diag(target) * var
    c = (target**2) @ var
    return a, b, c


def _mean_target(problem: TreatmentProblem) -> np.ndarray:
    k = problem.k_count
    return np.full((k, k), 1.0 / k)


def _std_from_coefficients(a, b, c, w):
    var = w * w * a + 2.0 * w * (1.0 - w) * b + (1.0 - w) ** 2 * c
    return np.sqrt(np.maximum(var, 0.0))


def _check_w(w: float) -> float:
    w = float(w)
    if not (0.0 <= w <= 1.0):
        raise DomainError(f"shrinkage factor must lie in [0, 1], got {w!r}")
    return w


def _check_kappa(kappa: float, name: str = "kappa") -> float:
    kappa = float(kappa)
    if not math.isfinite(kappa) or kappa < 0:
        raise DomainError(f"{name} must be finite and >= 0, got {kappa!r}")
    return kappa


def s_k(problem: TreatmentProblem, k: int, w: float) -> float:
    """Standard deviation of ``w * theta_hat_k + (1 - w) * ave(theta_hat)``."""
    w = _check_w(w)
    a, b, c = _target_coefficients(problem, _mean_target(problem))
    return float(_std_from_coefficients(a[k], b[k], c[k], w))


def _psi_from_coefficients(a, b, c, w, kappa):
    s = _std_from_coefficients(a, b, c, w)
    _, val = eta_values((1.0 - w) * kappa / s)
    return s * val


def psi(problem: TreatmentProblem, k: int, w: float, kappa: float) -> float:
    """Per-subgroup regret bound ``s_k(w) * eta((1 - w) * kappa / s_k(w))``."""
    w = _check_w(w)
    kappa = _check_kappa(kappa)
    a, b, c = _target_coefficients(problem, _mean_target(problem))
    return float(_psi_from_coefficients(a[k], b[k], c[k], np.float64(w), kappa))


# -- one-dimensional minimisation ------------------------------------------


def _golden_rows(fun, lo, hi, tol=GOLDEN_TOL):
    """Golden-section search run in lockstep on independent intervals.

    ``fun`` maps an ``(n,)`` array of abscissae (one per row) to values.
    """
    lo = lo.astype(float).copy()
    hi = hi.astype(float).copy()
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1 = fun(x1)
    f2 = fun(x2)
    while np.any(hi - lo > tol):
        left = f1 <= f2  # minimum lies in [lo, x2]
        lo, hi = np.where(left, lo, x1), np.where(left, x2, hi)
        new_x1 = np.where(left, hi - _GOLDEN * (hi - lo), x2)
        new_x2 = np.where(left, x1, lo + _GOLDEN * (hi - lo))
        fp = fun(np.where(left, new_x1, new_x2))
        f1, f2 = np.where(left, fp, f2), np.where(left, f1, fp)
        x1, x2 = new_x1, new_x2
    mid = 0.5 * (lo + hi)
    return mid, fun(mid)


def _minimize_on_unit_interval(objective: Callable, n: int):
    """Global minimiser on ``[0, 1]`` for ``n`` independent objectives.

    ``objective(W)`` takes an ``(n, m)`` array of abscissae and returns the
    values row by row.  A 1025-point scan locates the best grid point
    (ties broken toward larger ``w``), golden-section search refines it on
    the neighbouring cells, and a refined point within ``SNAP_TOL`` of an
    endpoint snaps to it when the endpoint is no worse.

    Returns:
        ``(w, value, tied)`` arrays; ``tied`` marks rows whose scan had more
        than one grid point within ``TIE_TOL`` of the minimum.
    """
    grid = np.linspace(0.0, 1.0, SCAN_POINTS)
    vals = objective(np.broadcast_to(grid, (n, SCAN_POINTS)))
    best = vals.min(axis=1, keepdims=True)
    ties = vals <= best + TIE_TOL
    idx = SCAN_POINTS - 1 - np.argmax(ties[:, ::-1], axis=1)
    tied = ties.sum(axis=1) > 1
    w_grid = grid[idx]
    f_grid = vals[np.arange(n), idx]

    lo = grid[np.maximum(idx - 1, 0)]
    hi = grid[np.minimum(idx + 1, SCAN_POINTS - 1)]

    def row_fun(x):
        return objective(x[:, None])[:, 0]

    w_ref, f_ref = _golden_rows(row_fun, lo, hi)
    use_ref = (f_ref < f_grid) & ~tied
    w = np.where(use_ref, w_ref, w_grid)
    f = np.where(use_ref, f_ref, f_grid)

    for end in (0.0, 1.0):
        near = np.abs(w - end) <= SNAP_TOL
        if np.any(near):
            f_end = row_fun(np.full(n, end))
            snap = near & (f_end <= f + TIE_TOL)
            w = np.where(snap, end, w)
            f = np.where(snap, f_end, f)
    return w, f, tied


def _solve_coefficients(a, b, c, kappa):
    """Minimise ``psi`` for each coefficient triple, solving duplicates once."""
    coeffs = np.stack([a, b, c], axis=1)
    uniq, inverse = np.unique(coeffs, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    ua, ub, uc = (uniq[:, j][:, None] for j in range(3))

    def objective(w):
        return _psi_from_coefficients(ua, ub, uc, w, kappa)

    w, f, tied = _minimize_on_unit_interval(objective, uniq.shape[0])
    return w[inverse], f[inverse], tied[inverse]


@dataclass(frozen=True, eq=False)
class ShrinkageSolution:
    """Selected shrinkage factors.

    Attributes:
        w_star: One factor in ``[0, 1]`` per subgroup.
        psi_values: Minimised objective for each subgroup.
        kappa_used: Dispersion bound used for the selection.
        kind: ``"mean"``, ``"regression"`` or ``"large_k"``.
        tied: Subgroups whose objective had several grid minimisers (flat
            objective); the largest was returned.
    """

    w_star: np.ndarray
    psi_values: np.ndarray
    kappa_used: float
    kind: str = "mean"
    tied: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def to_dict(self) -> dict:
        return {
            "w_star": self.w_star.tolist(),
            "psi_values": self.psi_values.tolist(),
            "kappa_prime": self.kappa_used,
            "kind": self.kind,
            "tied": [bool(t) for t in self.tied],
        }


def solve_shrinkage_factors(
    problem: TreatmentProblem, kappa_prime: float
) -> ShrinkageSolution:
    """Shrinkage factors toward the mean that minimise ``psi_k(.; kappa')``."""
    kappa_prime = _check_kappa(kappa_prime, "kappa_prime")
    a, b, c = _target_coefficients(problem, _mean_target(problem))
    w, f, tied = _solve_coefficients(a, b, c, kappa_prime)
    return ShrinkageSolution(w, f, kappa_prime, "mean", tied)


def solve_regression_shrinkage(
    problem: TreatmentProblem, kappa_prime: float
) -> ShrinkageSolution:
    """Shrinkage factors toward the regression fit ``x_k' beta_hat``.

    The variance of ``w * theta_hat_k + (1 - w) * x_k' beta_hat`` follows from
    writing the fitted value as row ``k`` of the hat matrix applied to
    ``theta_hat``.
    """
    kappa_prime = _check_kappa(kappa_prime, "kappa_prime")
    a, b, c = _target_coefficients(problem, problem.hat_matrix())
    w, f, tied = _solve_coefficients(a, b, c, kappa_prime)
    return ShrinkageSolution(w, f, kappa_prime, "regression", tied)


def _psi_large_k(sigma, w, kappa):
    """``sigma * w * eta((1/w - 1) * kappa / sigma)`` with its ``w -> 0`` limit."""
    w = np.asarray(w, dtype=float)
    positive = w > 0
    safe_w = np.where(positive, w, 1.0)
    arg = (1.0 / safe_w - 1.0) * kappa / sigma
    _, val = eta_values(arg)
    return np.where(positive, sigma * safe_w * val, kappa)


def solve_shrinkage_factors_large_k(
    problem: TreatmentProblem, kappa_prime: float
) -> ShrinkageSolution:
    """Factors minimising the many-subgroup approximation of ``psi``.

    As ``K`` grows ``s_k(w)`` approaches ``w * sigma_k``; the objective then
    depends on ``kappa' / sigma_k`` only.  At ``w = 0`` the limit value
    ``kappa'`` is used.
    """
    kappa_prime = _check_kappa(kappa_prime, "kappa_prime")
    sig = np.unique(problem.sigma)

    def objective(w):
        return _psi_large_k(sig[:, None], w, kappa_prime)

    w, f, tied = _minimize_on_unit_interval(objective, sig.size)
    pos = np.searchsorted(sig, problem.sigma)
    return ShrinkageSolution(w[pos], f[pos], kappa_prime, "large_k", tied[pos])


# -- rules -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearThresholdRule:
    """Decision ``1{(C theta_hat)_k + v_k Z_k >= 0}`` for every subgroup."""

    weights: np.ndarray
    randomization: np.ndarray
    label: RuleKind = RuleKind.CUSTOM
    factors: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.weights, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ConfigurationError("weight matrix must be K x K")
        v = np.asarray(self.randomization, dtype=float).ravel()
        if v.shape != (c.shape[0],):
            raise ConfigurationError("randomization needs one entry per subgroup")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigurationError("randomization factors must be finite and >= 0")
        object.__setattr__(self, "weights", c)
        object.__setattr__(self, "randomization", v)
        object.__setattr__(self, "label", RuleKind(self.label))

    @property
    def k_count(self) -> int:
        return self.weights.shape[0]

    @property
    def randomized(self) -> bool:
        return bool(np.any(self.randomization > 0))

    def statistic_std(self, sigma: np.ndarray) -> np.ndarray:
        """Standard deviation of each decision statistic, noise included."""
        var = (self.weights**2) @ (np.asarray(sigma, dtype=float) ** 2)
        return np.sqrt(var + self.randomization**2)


def build_rule(
    problem: TreatmentProblem,
    kind,
    w: Optional[Sequence[float]] = None,
    v: Optional[Sequence[float]] = None,
    weights: Optional[np.ndarray] = None,
) -> LinearThresholdRule:
    """Construct a rule of the given kind for ``problem``.

    Args:
        problem: The design; supplies K and, for ``SHRINK_REG``, covariates.
        kind: A :class:`RuleKind` or its name.
        w: Shrinkage factors, required for the two shrinkage kinds.
        v: Randomisation factors (default all zero).
        weights: Explicit matrix, required for ``CUSTOM``.
    """
    kind = RuleKind(kind)
    k = problem.k_count
    vv = np.zeros(k) if v is None else np.asarray(v, dtype=float)
    factors = None
    if kind is RuleKind.CES:
        c = np.eye(k)
    elif kind is RuleKind.POOL:
        c = _mean_target(problem)
    elif kind in (RuleKind.SHRINK_MEAN, RuleKind.SHRINK_REG):
        if w is None:
            raise ConfigurationError(f"{kind.value} needs shrinkage factors")
        factors = np.asarray(w, dtype=float).ravel()
        if factors.shape != (k,):
            raise ConfigurationError("need one shrinkage factor per subgroup")
        if np.any(factors < 0) or np.any(factors > 1):
            raise DomainError("shrinkage factors must lie in [0, 1]")
        target = (
            _mean_target(problem) if kind is RuleKind.SHRINK_MEAN else problem.hat_matrix()
        )
        c = factors[:, None] * np.eye(k) + (1.0 - factors)[:, None] * target
    else:
        if weights is None:
            raise ConfigurationError("CUSTOM rules need an explicit weight matrix")
        c = np.asarray(weights, dtype=float)
    return LinearThresholdRule(c, vv, kind, factors)


@dataclass(frozen=True, eq=False)
class Decision:
    treat: np.ndarray
    statistic: np.ndarray
    draws: Optional[np.ndarray] = None
    seed: Optional[int] = None


def decide(rule: LinearThresholdRule, estimates, seed: Optional[int] = None) -> Decision:
    """Apply ``rule`` to realised estimates.

    ``estimates`` may be an array or anything with a ``theta_hat`` attribute.
    A statistic of exactly zero means treat.  Randomised rules draw ``Z`` from
    ``numpy.random.default_rng(seed)`` and require a seed.
    """
    theta_hat = np.asarray(getattr(estimates, "theta_hat", estimates), dtype=float)
    if theta_hat.shape != (rule.k_count,):
        raise ConfigurationError("estimate vector does not match the rule size")
    stat = rule.weights @ theta_hat
    draws = None
    if rule.randomized:
        if seed is None:
            raise ConfigurationError("randomised rules need an explicit seed")
        draws = np.random.default_rng(seed).standard_normal(rule.k_count)
        stat = stat + rule.randomization * draws
    return Decision((stat >= 0).astype(int), stat, draws, seed)
