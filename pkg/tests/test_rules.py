import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shrinkchoice.errors import ConfigurationError, DomainError
from shrinkchoice.rules import (
    RuleKind,
    TreatmentProblem,
    build_rule,
    decide,
    psi,
    s_k,
    solve_regression_shrinkage,
    solve_shrinkage_factors,
    solve_shrinkage_factors_large_k,
)
from shrinkchoice.special import ETA_0, ETA_PRIME_0, T_STAR_0, eta, eta_prime

W_GRID = np.linspace(0, 1, 1001)


def grid_min(problem, k, kappa):
    vals = np.array([psi(problem, k, w, kappa) for w in W_GRID])
    return vals.min()


def one_sided(f, x, h, side):
    # second-order stencil pointing into the interval
    return side * (-3 * f(x) + 4 * f(x + side * h) - f(x + 2 * side * h)) / (2 * h)


@pytest.fixture
def pair():
    return TreatmentProblem(np.array([1.0, 1.0]), np.array([0.5, 0.5]))


# -- problem -------------------------------------------------------------------


def test_problem_validation():
    with pytest.raises(ConfigurationError):
        TreatmentProblem(np.array([1.0]), np.array([1.0]))
    with pytest.raises(ConfigurationError):
        TreatmentProblem(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    with pytest.raises(ConfigurationError):
        TreatmentProblem(np.array([1.0, 1.0]), np.array([0.5, 0.6]))
    with pytest.raises(ConfigurationError):
        TreatmentProblem(np.array([1.0, 1.0]), np.array([1.2, -0.2]))
    with pytest.raises(ConfigurationError):
        TreatmentProblem(np.ones(3), np.full(3, 1 / 3), covariates=np.array([[1, 2], [2, 4], [3, 6.0]]))


def test_derived_quantities():
    prob = TreatmentProblem(np.array([0.75, 1.25]), np.array([0.75, 0.25]))
    assert prob.sigma_min == 0.75 and prob.sigma_max == 1.25
    assert prob.s0 == pytest.approx(math.sqrt(0.75**2 + 1.25**2) / 2)


def test_problem_json_round_trip():
    prob = TreatmentProblem(np.array([0.75, 1.25, 2.0]), np.array([0.2, 0.3, 0.5]), np.ones((3, 1)))
    text = json.dumps(prob.to_dict(kappa_prime=0.4))
    data = json.loads(text)
    assert set(data) == {"sigma", "p", "covariates", "kappa_prime"}
    back = TreatmentProblem.from_dict(data)
    assert np.array_equal(back.sigma, prob.sigma)
    assert np.array_equal(back.p, prob.p)
    assert np.array_equal(back.covariates, prob.covariates)


# -- s_k and psi --------------------------------------------------------------------


def test_s_k_examples(pair):
    assert s_k(pair, 0, 1.0) == 1.0
    assert s_k(pair, 0, 0.0) == pytest.approx(pair.s0, rel=1e-15)
    assert s_k(pair, 1, 0.5) == pytest.approx(math.sqrt(0.625), rel=1e-15)
    with pytest.raises(DomainError):
        s_k(pair, 0, 1.5)


def test_s_k_displayed_formula():
    prob = TreatmentProblem(np.array([0.5, 1.0, 2.0]), np.array([0.2, 0.3, 0.5]))
    k_count = 3
    for k in range(3):
        for w in (0.0, 0.2, 0.7, 1.0):
            expect = math.sqrt(
                (w**2 + 2 * w * (1 - w) / k_count) * prob.sigma[k] ** 2
                + (1 - w) ** 2 * np.sum(prob.sigma**2) / k_count**2
            )
            assert s_k(prob, k, w) == pytest.approx(expect, rel=1e-14)
            assert s_k(prob, k, w) > 0


def test_psi_examples(pair):
    for kappa in (0.0, 0.3, 4.0):
        assert psi(pair, 0, 1.0, kappa) == ETA_0 * 1.0
        assert psi(pair, 0, 0.0, kappa) == pytest.approx(pair.s0 * eta(kappa / pair.s0).eta, rel=1e-14)
    assert psi(pair, 0, 0.3, 0.0) == pytest.approx(s_k(pair, 0, 0.3) * ETA_0, rel=1e-14)
    with pytest.raises(DomainError):
        psi(pair, 0, 0.5, -1.0)


# -- factor selection ------------------------------------------------------------------


def test_factor_examples(pair):
    assert np.array_equal(solve_shrinkage_factors(pair, 2.0).w_star, [1.0, 1.0])
    assert np.array_equal(solve_shrinkage_factors(TreatmentProblem.homoscedastic(7), 0.0).w_star, np.zeros(7))
    sol = solve_shrinkage_factors(pair, 0.3)
    assert sol.w_star[0] == sol.w_star[1]
    assert 0 < sol.w_star[0] < 1
    # positive boundary slope at this kappa rules out w = 1
    assert (1 - 1 / 2) * ETA_0 - 0.3 * ETA_PRIME_0 > 0


@pytest.mark.parametrize(
    "sigma,p,kappa",
    [
        ((1.0, 1.0), (0.5, 0.5), 0.1),
        ((0.75, 1.25), (0.75, 0.25), 0.4),
        ((0.5, 1.0, 3.0), (0.2, 0.3, 0.5), 0.8),
        ((1.0, 2.0, 3.0, 4.0, 5.0), (0.2,) * 5, 2.0),
    ],
)
def test_solution_is_grid_optimal(sigma, p, kappa):
    prob = TreatmentProblem(np.array(sigma), np.array(p))
    sol = solve_shrinkage_factors(prob, kappa)
    for k in range(prob.k_count):
        assert 0 <= sol.w_star[k] <= 1
        assert sol.psi_values[k] == pytest.approx(psi(prob, k, sol.w_star[k], kappa), rel=1e-14)
        assert sol.psi_values[k] <= grid_min(prob, k, kappa) + 1e-9
        assert sol.psi_values[k] <= min(psi(prob, k, 0.0, kappa), psi(prob, k, 1.0, kappa)) + 1e-10


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(0.1, 5.0), min_size=2, max_size=6),
    st.floats(0.0, 5.0),
)
def test_endpoint_containment(sigmas, kappa):
    sigma = np.array(sigmas)
    prob = TreatmentProblem(sigma, np.full(sigma.size, 1.0 / sigma.size))
    sol = solve_shrinkage_factors(prob, kappa)
    assert np.all((sol.w_star >= 0) & (sol.w_star <= 1))
    for k in range(sigma.size):
        bound = min(psi(prob, k, 0.0, kappa), psi(prob, k, 1.0, kappa))
        assert sol.psi_values[k] <= bound + 1e-10


@pytest.mark.parametrize("k_count", [2, 5, 100])
def test_homoscedastic_limits(k_count):
    prob = TreatmentProblem.homoscedastic(k_count)
    assert np.all(solve_shrinkage_factors(prob, 0.0).w_star == 0.0)
    for kappa in np.arange(1.0, 3.01, 0.25):
        assert np.all(solve_shrinkage_factors(prob, kappa).w_star == 1.0)


def test_k100_transition_near_t_star():
    prob = TreatmentProblem.homoscedastic(100)
    kappas = np.arange(0.5, 1.0, 0.005)
    w = np.array([solve_shrinkage_factors(prob, k).w_star[0] for k in kappas])
    first_one = kappas[np.argmax(w == 1.0)]
    assert abs(first_one - T_STAR_0) <= 0.05


@pytest.mark.parametrize("k_count", [2, 5])
@pytest.mark.parametrize("kappa", np.round(np.arange(0.1, 1.01, 0.1), 10))
def test_boundary_derivatives(k_count, kappa):
    prob = TreatmentProblem.homoscedastic(k_count)
    f = lambda w: psi(prob, 0, w, kappa)
    d1 = one_sided(f, 1.0, 1e-4, -1)
    d0 = one_sided(f, 0.0, 1e-4, +1)
    assert d1 == pytest.approx((1 - 1 / k_count) * ETA_0 - kappa * ETA_PRIME_0, abs=1e-6)
    assert d0 == pytest.approx(-kappa * eta_prime(kappa * math.sqrt(k_count)), abs=1e-6)
    assert d0 < 0
    assert solve_shrinkage_factors(prob, kappa).w_star[0] > 0


def test_monotone_in_kappa_on_grid():
    for k_count in (2, 5, 100):
        prob = TreatmentProblem.homoscedastic(k_count)
        w = [solve_shrinkage_factors(prob, k).w_star[0] for k in np.arange(0, 1.01, 0.02)]
        assert np.all(np.diff(w) >= -1e-9)


def test_scale_equivariance():
    # Scaling sigma and kappa together leaves the factors unchanged.
    prob = TreatmentProblem(np.array([0.5, 1.0, 2.0]), np.array([0.2, 0.3, 0.5]))
    scaled = TreatmentProblem(prob.sigma * 1000.0, prob.p)
    a = solve_shrinkage_factors(prob, 0.7).w_star
    b = solve_shrinkage_factors(scaled, 700.0).w_star
    assert np.allclose(a, b, atol=1e-7)


def test_solution_json():
    sol = solve_shrinkage_factors(TreatmentProblem.homoscedastic(3), 0.2)
    data = json.loads(json.dumps(sol.to_dict()))
    assert data["kappa_prime"] == 0.2
    assert len(data["w_star"]) == 3


# -- large-K approximation ----------------------------------------------------------------


def test_large_k_examples():
    prob = TreatmentProblem.homoscedastic(4)
    assert np.all(solve_shrinkage_factors_large_k(prob, 1.0).w_star == 1.0)
    assert np.all(solve_shrinkage_factors_large_k(prob, 0.0).w_star == 0.0)
    w = solve_shrinkage_factors_large_k(prob, 0.5).w_star[0]
    assert 0 < w < 1
    # grid oracle on (0, 1]
    grid = np.linspace(1e-4, 1, 10000)
    vals = grid * np.array([eta((1 / g - 1) * 0.5).eta for g in grid])
    assert abs(w - grid[np.argmin(vals)]) <= 2e-3


def test_large_k_above_threshold_is_one():
    prob = TreatmentProblem(np.array([0.5, 1.0, 1.3]), np.full(3, 1 / 3))
    sol = solve_shrinkage_factors_large_k(prob, 1.0)
    over = 1.0 / prob.sigma > T_STAR_0
    assert np.all(sol.w_star[over] == 1.0)


def test_large_k_convergence():
    approx = solve_shrinkage_factors_large_k(TreatmentProblem.homoscedastic(2), 0.4).w_star[0]
    gaps = [
        abs(solve_shrinkage_factors(TreatmentProblem.homoscedastic(k), 0.4).w_star[0] - approx)
        for k in (10, 100, 1000)
    ]
    assert gaps[0] > gaps[1] > gaps[2]


# -- rules ---------------------------------------------------------------------------------------


def test_build_rule_matrices(pair):
    ces = build_rule(pair, RuleKind.CES)
    assert np.array_equal(ces.weights, np.eye(2)) and not ces.randomized
    pool = build_rule(pair, "POOL")
    assert np.allclose(pool.weights, 0.5)
    shrink = build_rule(pair, RuleKind.SHRINK_MEAN, w=[0.5, 0.5])
    assert np.allclose(shrink.weights, [[0.75, 0.25], [0.25, 0.75]])
    with pytest.raises(ConfigurationError):
        build_rule(pair, RuleKind.SHRINK_REG, w=[0.5, 0.5])
    with pytest.raises(ConfigurationError):
        build_rule(pair, RuleKind.SHRINK_MEAN)


def test_regression_rule_with_intercept_matches_mean():
    sigma = np.array([0.5, 1.0, 2.0, 1.5])
    p = np.full(4, 0.25)
    prob = TreatmentProblem(sigma, p, covariates=np.ones((4, 1)))
    w = [0.1, 0.4, 0.8, 1.0]
    a = build_rule(prob, RuleKind.SHRINK_REG, w=w).weights
    b = build_rule(prob, RuleKind.SHRINK_MEAN, w=w).weights
    assert np.allclose(a, b, atol=1e-15)
    ra = solve_regression_shrinkage(prob, 0.6).w_star
    rb = solve_shrinkage_factors(prob, 0.6).w_star
    assert np.allclose(ra, rb, atol=1e-12)


def test_regression_large_kappa_and_saturated():
    x = np.column_stack([np.ones(5), np.arange(5.0)])
    prob = TreatmentProblem(np.array([1.0, 2.0, 1.5, 0.7, 1.1]), np.full(5, 0.2), covariates=x)
    assert np.all(solve_regression_shrinkage(prob, 50.0).w_star == 1.0)
    sat = TreatmentProblem(np.array([1.0, 2.0]), np.array([0.5, 0.5]), covariates=np.eye(2))
    assert np.allclose(sat.hat_matrix(), np.eye(2))
    # the fitted value reproduces theta_hat, so every w gives the same rule
    for w in ([0.0, 0.0], [0.3, 0.9]):
        assert np.allclose(build_rule(sat, RuleKind.SHRINK_REG, w=w).weights, np.eye(2))
    assert np.all(solve_regression_shrinkage(sat, 0.3).w_star == 1.0)
    # at kappa = 0 the objective is flat: largest minimiser, flagged
    flat = solve_regression_shrinkage(sat, 0.0)
    assert np.all(flat.w_star == 1.0)
    assert np.all(flat.tied)


def test_rule_row_std_matches_s_k():
    prob = TreatmentProblem(np.array([0.5, 1.0, 2.0]), np.array([0.2, 0.3, 0.5]))
    w = np.array([0.2, 0.5, 0.9])
    rule = build_rule(prob, RuleKind.SHRINK_MEAN, w=w)
    std = rule.statistic_std(prob.sigma)
    for k in range(3):
        assert abs(std[k] - s_k(prob, k, w[k])) <= 1e-12


def test_decide_examples(pair):
    theta_hat = np.array([0.2, -0.1])
    assert decide(build_rule(pair, RuleKind.CES), theta_hat).treat.tolist() == [1, 0]
    assert decide(build_rule(pair, RuleKind.POOL), theta_hat).treat.tolist() == [1, 1]
    d = decide(build_rule(pair, RuleKind.SHRINK_MEAN, w=[0.5, 0.5]), theta_hat)
    assert d.treat.tolist() == [1, 0]
    assert d.statistic[1] == pytest.approx(-0.025)


def test_decide_tie_treats(pair):
    assert decide(build_rule(pair, RuleKind.CES), np.array([0.0, -0.0])).treat.tolist() == [1, 1]


def test_decide_randomised_needs_seed(pair):
    rule = build_rule(pair, RuleKind.CES, v=[0.5, 0.5])
    with pytest.raises(ConfigurationError):
        decide(rule, np.array([0.2, -0.1]))
    a = decide(rule, np.array([0.2, -0.1]), seed=3)
    b = decide(rule, np.array([0.2, -0.1]), seed=3)
    assert np.array_equal(a.treat, b.treat) and np.array_equal(a.draws, b.draws)
    assert a.seed == 3


@given(
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
    st.floats(1e-3, 1e3),
)
def test_decide_invariant_to_positive_scaling(theta, c):
    prob = TreatmentProblem(np.array([0.5, 1.0, 2.0]), np.array([0.2, 0.3, 0.5]))
    rule = build_rule(prob, RuleKind.SHRINK_MEAN, w=[0.25, 0.5, 1.0])
    theta = np.array(theta)
    stat = rule.weights @ theta
    # Skip statistics within rounding of the threshold.
    if np.min(np.abs(stat)) < 1e-9 * (1 + np.max(np.abs(theta))):
        return
    assert np.array_equal(decide(rule, theta).treat, decide(rule, c * theta).treat)
