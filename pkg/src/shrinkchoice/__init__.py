"""Shrinkage rules for subgroup treatment choice under minimax regret."""

__version__ = "0.1.0"

from shrinkchoice.bounds import (
    all_bounds,
    bound_thm1,
    bound_thm2,
    bound_thm3,
    bound_thm4,
    misspecification_inflation,
)
from shrinkchoice.pipeline import (
    DispersionReport,
    EstimateVector,
    MicroDataset,
    dispersion_diagnostic,
    estimate_groups,
    group_covariates,
)
from shrinkchoice.errors import (
    ConfigurationError,
    DataError,
    DegenerateRuleError,
    DomainError,
    ShrinkChoiceError,
)
from shrinkchoice.regret import (
    ParameterSpace,
    RegretReport,
    SearchBudget,
    SpaceKind,
    max_regret,
    regret_at,
    regret_monte_carlo,
    witness_ces_rectangle,
    witness_pool_alternating,
)
from shrinkchoice.rules import (
    Decision,
    LinearThresholdRule,
    RuleKind,
    ShrinkageSolution,
    TreatmentProblem,
    build_rule,
    decide,
    psi,
    s_k,
    solve_regression_shrinkage,
    solve_shrinkage_factors,
    solve_shrinkage_factors_large_k,
)
from shrinkchoice.special import (
    ETA_0,
    ETA_PRIME_0,
    T_STAR_0,
    EtaEvaluation,
    capital_h,
    eta,
    eta_envelope,
    eta_prime,
    eta_values,
    std_normal_cdf,
    std_normal_pdf,
)
