"""Regret of linear threshold rules and its maximum over a parameter space.

The regret at a fixed ``theta`` has a closed form because each decision
statistic is Gaussian.  The maximum over ``Theta(kappa)`` does not, so
:func:`max_regret` searches for it.  Every value it reports is attained at
the returned witness and is therefore a certified *lower* bound on the true
maximum; the ratio bounds in :mod:`shrinkchoice.bounds` supply upper bounds.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from shrinkchoice.errors import ConfigurationError, DegenerateRuleError, DomainError
from shrinkchoice.rules import LinearThresholdRule, TreatmentProblem
from shrinkchoice.special import T_STAR_0, _tail, eta

__all__ = [
    "SpaceKind",
    "ParameterSpace",
    "SearchBudget",
    "RegretReport",
    "regret_at",
    "regret_monte_carlo",
    "witness_ces_rectangle",
    "witness_pool_alternating",
    "max_regret",
]


class SpaceKind(str, enum.Enum):
    MEAN_CENTERED = "MEAN_CENTERED"
    REGRESSION = "REGRESSION"


@dataclass(frozen=True, eq=False)
class ParameterSpace:
    """``theta = X b + xi`` with ``X' xi = 0`` and ``|xi_k| <= kappa``.

    With ``kind = MEAN_CENTERED`` the design ``X`` is a column of ones and the
    set is ``{theta : |theta_k - mean(theta)| <= kappa}``.
    """

    kappa: float
    kind: SpaceKind = SpaceKind.MEAN_CENTERED
    covariates: Optional[np.ndarray] = None

    def __post_init__(self):
        kappa = float(self.kappa)
        if not math.isfinite(kappa) or kappa < 0:
            raise DomainError(f"kappa must be finite and >= 0, got {self.kappa!r}")
        object.__setattr__(self, "kappa", kappa)
        kind = SpaceKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is SpaceKind.REGRESSION:
            if self.covariates is None:
                raise ConfigurationError("a regression space needs covariates")
            x = np.asarray(self.covariates, dtype=float)
            object.__setattr__(self, "covariates", x[:, None] if x.ndim == 1 else x)
        elif self.covariates is not None:
            raise ConfigurationError("covariates are only used by REGRESSION spaces")

    def design(self, k: int) -> np.ndarray:
        if self.kind is SpaceKind.MEAN_CENTERED:
            return np.ones((k, 1))
        if self.covariates.shape[0] != k:
            raise ConfigurationError("covariates do not match the number of subgroups")
        return self.covariates

    def split(self, theta: np.ndarray):
        """Least-squares decomposition ``theta = X b + xi``."""
        theta = np.asarray(theta, dtype=float)
        x = self.design(theta.shape[-1])
        b = np.linalg.lstsq(x, theta.T, rcond=None)[0].T
        return b, theta - b @ x.T

    def residuals(self, theta: np.ndarray) -> dict:
        """Constraint violations of ``theta`` (all <= 0 means feasible)."""
        x = self.design(np.shape(theta)[-1])
        _, xi = self.split(theta)
        return {
            "orthogonality": float(np.max(np.abs(x.T @ np.atleast_2d(xi).T))),
            "dispersion": float(np.max(np.abs(xi)) - self.kappa),
        }

    def contains(self, theta: np.ndarray, tol: float = 1e-12) -> bool:
        r = self.residuals(theta)
        return r["orthogonality"] <= tol and r["dispersion"] <= tol


@dataclass(frozen=True)
class SearchBudget:
    """Knobs for :func:`max_regret`.

    Attributes:
        starts: Random starting points.
        refine: Number of best candidates polished by compass search.
        grid_points: Points per axis of the exhaustive grid used when K = 2.
        location_sweep: Location values tried with each sign-pattern vertex.
        max_iter: Compass-search iterations per refinement.
        seed: Seed for the random starts.
    """

    starts: int = 64
    refine: int = 6
    grid_points: int = 801
    location_sweep: int = 41
    max_iter: int = 400
    seed: int = 0

    def validate(self):
        if self.starts < 1 or self.refine < 1 or self.grid_points < 2 or self.max_iter < 1:
            raise ConfigurationError(f"search budget is empty: {self}")


@dataclass(frozen=True, eq=False)
class RegretReport:
    rule_label: str
    max_regret: float
    witness_theta: np.ndarray
    method: str
    bound_values: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "rule": self.rule_label,
            "max_regret": self.max_regret,
            "witness": self.witness_theta.tolist(),
            "method": self.method,
            "bounds": dict(self.bound_values),
            "seed": self.seed,
        }


# -- regret at a point -----------------------------------------------------


def _regret_batch(p, weights, tau, theta):
    """Closed-form regret for a batch ``theta`` of shape ``(n, K)``."""
    mean = theta @ weights.T
    sgn = np.sign(theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = sgn * mean / tau
    degenerate = tau == 0
    if np.any(degenerate):
        bad = degenerate & (mean == 0) & (theta != 0)
        if np.any(bad):
            raise DegenerateRuleError("decision statistic has zero mean and variance")
        z = np.where(degenerate, np.where(sgn * mean >= 0, np.inf, -np.inf), z)
        z = np.where(theta == 0, 0.0, z)
    return np.abs(theta) * _tail(z) @ p


def regret_at(problem: TreatmentProblem, rule: LinearThresholdRule, theta) -> float:
    """Expected welfare loss of ``rule`` relative to the oracle rule at ``theta``.

    ``theta`` may also be a batch of shape ``(n, K)``, in which case an array
    of regrets is returned.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != problem.k_count or rule.k_count != problem.k_count:
        raise ConfigurationError("theta, rule and problem sizes disagree")
    tau = rule.statistic_std(problem.sigma)
    out = _regret_batch(problem.p, rule.weights, tau, np.atleast_2d(theta))
    return float(out[0]) if theta.ndim == 1 else out


def regret_monte_carlo(
    problem: TreatmentProblem,
    rule: LinearThresholdRule,
    theta,
    draws: int,
    seed: int,
    chunk: int = 200_000,
):
    """Simulated regret, as an independent check on :func:`regret_at`.

    Draws ``theta_hat ~ N(theta, diag(sigma^2))`` (and ``Z`` for randomised
    rules) and averages ``sum_k p_k theta_k (d*_k - d_k)``.

    Returns:
        ``(estimate, std_error)`` where the standard error is the sample
        standard deviation of the summand divided by ``sqrt(draws)``.
    """
    if draws < 1:
        raise ConfigurationError("draws must be >= 1")
    theta = np.asarray(theta, dtype=float)
    rng = np.random.default_rng(seed)
    k = problem.k_count
    oracle = (theta >= 0).astype(float)
    gain = problem.p * theta
    total = 0.0
    total_sq = 0.0
    left = int(draws)
    while left > 0:
        n = min(chunk, left)
        theta_hat = theta + problem.sigma * rng.standard_normal((n, k))
        stat = theta_hat @ rule.weights.T
        if rule.randomized:
            stat = stat + rule.randomization * rng.standard_normal((n, k))
        summand = (oracle - (stat >= 0)) @ gain
        total += float(summand.sum())
        total_sq += float(summand @ summand)
        left -= n
    mean = total / draws
    if draws > 1:
        var = max(total_sq - draws * mean * mean, 0.0) / (draws - 1)
    else:
        var = 0.0
    return mean, math.sqrt(var / draws)


# -- witness families --------------------------------------------------------


def witness_ces_rectangle(
    problem: TreatmentProblem, kappa: float, sweep: int = 200
) -> np.ndarray:
    """Points of the cubes ``[t, t + kappa]^K``, all of which lie in ``Theta(kappa)``.

    Includes the cube vertices at ``t = t*(0) * min(sigma)`` (all of them for
    K <= 12) and, for every ``t`` of a sweep over ``[0, 3 (max sigma + kappa)]``,
    the point of the cube that maximises each CES regret term separately.
    """
    k = problem.k_count
    t0 = T_STAR_0 * problem.sigma_min
    base = [np.full(k, t0), np.full(k, t0 + kappa)]
    if k <= 12:
        corners = np.array(list(itertools.product((0.0, 1.0), repeat=k)))
        base.extend(t0 + kappa * corners)
    ts = np.concatenate([[t0], np.linspace(0.0, 3.0 * (problem.sigma_max + kappa), sweep)])
    best = np.clip(T_STAR_0 * problem.sigma, ts[:, None], ts[:, None] + kappa)
    fam = np.vstack([np.array(base), best, np.repeat(ts[:, None], k, axis=1)])
    return np.unique(fam, axis=0)


def _alternating_pattern(problem: TreatmentProblem) -> np.ndarray:
    """Offsets in ``{+1, 0, -1}``: +1 for the largest shares, 0 for the middle
    subgroup when K is odd."""
    k = problem.k_count
    order = np.argsort(-problem.p, kind="stable")
    pattern = np.empty(k)
    half = k // 2
    pattern[order[:half]] = 1.0
    pattern[order[half:]] = -1.0
    if k % 2:
        pattern[order[half]] = 0.0
    return pattern


def witness_pool_alternating(
    problem: TreatmentProblem, kappa: float, sweep: int = 200
) -> np.ndarray:
    """The family ``(t + kappa, ..., t - kappa, ...)`` used to bound pooling regret.

    The ``+kappa`` entries go to the subgroups with the largest shares.  The
    sweep over ``t`` always contains ``s0 * t*(kappa / s0) - kappa``.
    """
    s0 = problem.s0
    pattern = _alternating_pattern(problem)
    t_sub = s0 * eta(kappa / s0).t_star - kappa
    c = 5.0 * (kappa + problem.sigma_max)
    ts = np.concatenate([[t_sub, -t_sub], np.linspace(-c, c, sweep)])
    fam = ts[:, None] + kappa * pattern[None, :]
    return np.vstack([fam, ts[:, None] - kappa * pattern[None, :]])


# -- maximum regret --------------------------------------------------------


class _Param:
    """Maps search variables ``(b, z)`` to feasible ``theta``.

    ``xi = N z`` with ``N`` an orthonormal basis of the null space of ``X'``,
    shrunk radially onto the box ``|xi_k| <= kappa``.  The retraction keeps
    every evaluated point feasible.
    """

    def __init__(self, space: ParameterSpace, problem: TreatmentProblem):
        k = problem.k_count
        self.x = space.design(k)
        self.kappa = space.kappa
        d = self.x.shape[1]
        u, _, _ = np.linalg.svd(self.x, full_matrices=True)
        self.null = u[:, d:]
        c = 5.0 * (space.kappa + problem.sigma_max)
        self.b_box = c / (d * np.max(np.abs(self.x), axis=0))
        self.d = d

    def theta(self, y: np.ndarray) -> np.ndarray:
        b = np.clip(y[:, : self.d], -self.b_box, self.b_box)
        xi = y[:, self.d :] @ self.null.T
        size = np.max(np.abs(xi), axis=1, initial=0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(size > self.kappa, self.kappa / size, 1.0)
        return b @ self.x.T + xi * scale[:, None]

    def variables(self, theta: np.ndarray) -> np.ndarray:
        b = np.linalg.lstsq(self.x, theta.T, rcond=None)[0].T
        xi = theta - b @ self.x.T
        return np.hstack([b, xi @ self.null])

    def project(self, theta: np.ndarray) -> np.ndarray:
        return self.theta(self.variables(theta))


def _compass(fun, y0, steps, max_iter, tol=1e-11):
    """Maximise ``fun`` from every row of ``y0`` by lockstep compass search."""
    y = y0.copy()
    n, dim = y.shape
    f = fun(y)
    step = np.broadcast_to(steps, y.shape).astype(float).copy()
    eye = np.eye(dim)
    for _ in range(max_iter):
        active = np.any(step > tol * (1.0 + np.abs(y)), axis=1)
        if not active.any():
            break
        moves = np.concatenate([eye, -eye])  # (2 dim, dim)
        trial = y[:, None, :] + moves[None, :, :] * step[:, None, :]
        ft = fun(trial.reshape(-1, dim)).reshape(n, 2 * dim)
        j = np.argmax(ft, axis=1)
        gain = ft[np.arange(n), j] > f
        better = gain & active
        y = np.where(better[:, None], trial[np.arange(n), j], y)
        f = np.where(better, ft[np.arange(n), j], f)
        step = np.where(better[:, None], step * 1.5, step * 0.5)
    return y, f


def _k2_grid(problem, space, budget):
    """Exhaustive grid over ``(m, xi_1)`` with ``xi_2 = -xi_1`` for K = 2."""
    c = 5.0 * (space.kappa + problem.sigma_max)
    m = np.linspace(-c, c, budget.grid_points)
    xi = np.linspace(-space.kappa, space.kappa, budget.grid_points)
    mm, xx = np.meshgrid(m, xi, indexing="ij")
    return np.stack([(mm + xx).ravel(), (mm - xx).ravel()], axis=1)


def _vertex_candidates(problem, param, budget):
    k = problem.k_count
    if param.kappa == 0:
        return np.zeros((0, k))
    if k <= 12:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=k)))
    else:
        rng = np.random.default_rng(budget.seed + 1)
        signs = rng.choice((-1.0, 1.0), size=(256, k))
    xi = param.project(signs * param.kappa) - param.project(np.zeros((1, k)))
    c = 5.0 * (param.kappa + problem.sigma_max)
    loc = np.linspace(-c, c, budget.location_sweep)
    shift = loc[:, None] * param.x.sum(axis=1)[None, :] / param.x.shape[1]
    return (xi[:, None, :] + shift[None, :, :]).reshape(-1, k)


def max_regret(
    problem: TreatmentProblem,
    rule: LinearThresholdRule,
    space: ParameterSpace,
    budget: SearchBudget = SearchBudget(),
) -> RegretReport:
    """Search for the maximum regret of ``rule`` over ``space``.

    Candidates come from the witness families, sign-pattern vertices swept
    over a location grid, random starts and, for K = 2 mean-centred spaces,
    an exhaustive grid.  The best few are polished by compass search.  The
    reported value is attained at the reported witness.
    """
    budget.validate()
    param = _Param(space, problem)
    k = problem.k_count
    rng = np.random.default_rng(budget.seed)

    pools = [
        ("WITNESS_FAMILY", witness_ces_rectangle(problem, space.kappa)),
        ("WITNESS_FAMILY", witness_pool_alternating(problem, space.kappa)),
        ("MULTISTART", _vertex_candidates(problem, param, budget)),
    ]
    y_rand = np.hstack(
        [
            rng.uniform(-param.b_box, param.b_box, size=(budget.starts, param.d)),
            rng.standard_normal((budget.starts, k - param.d)) * space.kappa * math.sqrt(k),
        ]
    )
    pools.append(("MULTISTART", param.theta(y_rand)))
    if k == 2 and space.kind is SpaceKind.MEAN_CENTERED:
        pools.append(("GRID", _k2_grid(problem, space, budget)))

    labels, thetas = [], []
    for name, cand in pools:
        if len(cand):
            # witness families are feasible for mean-centred spaces only
            feasible = param.project(cand)
            thetas.append(feasible)
            labels.extend([name] * len(feasible))
    theta_all = np.vstack(thetas)
    values = regret_at(problem, rule, theta_all)

    order = np.argsort(-values, kind="stable")
    chosen, seen = [], []
    for i in order:
        key = np.round(theta_all[i], 6)
        if any(np.array_equal(key, s) for s in seen):
            continue
        seen.append(key)
        chosen.append(i)
        if len(chosen) >= budget.refine:
            break
    chosen = np.array(chosen)

    y0 = param.variables(theta_all[chosen])
    scale = max(space.kappa, problem.sigma_max)
    steps = np.concatenate([np.full(param.d, 0.05 * scale), np.full(k - param.d, 0.05 * scale)])

    def objective(y):
        return regret_at(problem, rule, param.theta(y))

    y_ref, f_ref = _compass(objective, y0, steps, budget.max_iter)
    best_ref = int(np.argmax(f_ref))
    best_raw = int(order[0])
    if f_ref[best_ref] >= values[best_raw]:
        witness = param.theta(y_ref[best_ref : best_ref + 1])[0]
        method = labels[chosen[best_ref]]
    else:
        witness = theta_all[best_raw]
        method = labels[best_raw]
    value = regret_at(problem, rule, witness)
    return RegretReport(rule.label.value, value, witness, method, {}, budget.seed)
