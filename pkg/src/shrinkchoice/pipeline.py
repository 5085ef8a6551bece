"""From experimental micro-data to subgroup estimates.

Subgroups are the distinct values of a set of categorical key columns.  For
each subgroup the treatment effect is the difference of arm means and its
standard error uses the unequal-variance formula.  Sums are computed with
:func:`math.fsum`, so the output does not depend on the row order.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from shrinkchoice.errors import DataError
from shrinkchoice.rules import TreatmentProblem

logger = logging.getLogger(__name__)

__all__ = [
    "MicroDataset",
    "EstimateVector",
    "DispersionReport",
    "estimate_groups",
    "dispersion_diagnostic",
    "group_covariates",
]


@dataclass
class MicroDataset:
    """Rows of ``(outcome, treatment indicator, subgroup keys)``.

    Rows with a missing outcome, treatment or key are dropped on
    construction and counted in ``missing_rows``.
    """

    frame: pd.DataFrame
    outcome: str
    treatment: str
    keys: Sequence[str]
    missing_rows: int = 0

    def __post_init__(self):
        cols = [self.outcome, self.treatment, *self.keys]
        absent = [c for c in cols if c not in self.frame.columns]
        if absent:
            raise DataError(f"missing columns: {absent}")
        frame = self.frame[cols]
        complete = frame.notna().all(axis=1)
        self.missing_rows += int((~complete).sum())
        frame = frame[complete].copy()
        y = pd.to_numeric(frame[self.outcome], errors="coerce")
        if y.isna().any():
            raise DataError(f"outcome column {self.outcome!r} is not numeric")
        d = pd.to_numeric(frame[self.treatment], errors="coerce")
        if d.isna().any() or not d.isin([0, 1]).all():
            raise DataError(f"treatment column {self.treatment!r} must be 0/1")
        frame[self.outcome] = y.astype(float)
        frame[self.treatment] = d.astype(int)
        self.frame = frame
        self.keys = list(self.keys)

    @classmethod
    def from_csv(cls, path, outcome: str, treatment: str, keys: Sequence[str]):
        try:
            frame = pd.read_csv(path, encoding="utf-8")
        except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        return cls(frame, outcome, treatment, keys)


@dataclass
class EstimateVector:
    """Subgroup estimates in a fixed (lexicographic) subgroup order.

    ``theta_hat`` already has ``cost_offset`` subtracted.  Arm means and
    counts are kept as metadata.
    """

    theta_hat: np.ndarray
    sigma_hat: np.ndarray
    p_hat: np.ndarray
    labels: list
    cost_offset: float = 0.0
    mu1: Optional[np.ndarray] = None
    mu0: Optional[np.ndarray] = None
    n1: Optional[np.ndarray] = None
    n0: Optional[np.ndarray] = None
    key_names: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    missing_rows: int = 0
    covariates: Optional[np.ndarray] = None

    def __post_init__(self):
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        self.sigma_hat = np.asarray(self.sigma_hat, dtype=float)
        self.p_hat = np.asarray(self.p_hat, dtype=float)
        k = self.theta_hat.size
        if self.sigma_hat.shape != (k,) or self.p_hat.shape != (k,) or len(self.labels) != k:
            raise DataError("estimate fields have inconsistent lengths")
        if np.any(self.sigma_hat <= 0):
            raise DataError("standard errors must be positive")
        if abs(self.p_hat.sum() - 1.0) > 1e-12:
            raise DataError("shares must sum to one")

    @property
    def k_count(self) -> int:
        return self.theta_hat.size

    def problem(self, covariates: Optional[np.ndarray] = None) -> TreatmentProblem:
        x = self.covariates if covariates is None else covariates
        return TreatmentProblem(self.sigma_hat, self.p_hat, x)

    def to_dict(self) -> dict:
        def opt(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "labels": [list(lab) for lab in self.labels],
            "key_names": list(self.key_names),
            "theta_hat": self.theta_hat.tolist(),
            "sigma_hat": self.sigma_hat.tolist(),
            "p_hat": self.p_hat.tolist(),
            "cost_offset": self.cost_offset,
            "mu1": opt(self.mu1),
            "mu0": opt(self.mu0),
            "n1": opt(self.n1),
            "n0": opt(self.n0),
            "dropped": [list(lab) for lab in self.dropped],
            "missing_rows": self.missing_rows,
            "covariates": opt(self.covariates),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateVector":
        try:
            theta = data["theta_hat"]
            sigma = data["sigma_hat"]
            p = data["p_hat"]
        except KeyError as exc:
            raise DataError(f"estimates JSON is missing {exc}") from None
        labels = data.get("labels") or [[str(i)] for i in range(len(theta))]
        return cls(
            theta_hat=theta,
            sigma_hat=sigma,
            p_hat=p,
            labels=[tuple(lab) for lab in labels],
            cost_offset=float(data.get("cost_offset", 0.0)),
            mu1=data.get("mu1"),
            mu0=data.get("mu0"),
            n1=data.get("n1"),
            n0=data.get("n0"),
            key_names=list(data.get("key_names", [])),
            dropped=[tuple(lab) for lab in data.get("dropped", [])],
            missing_rows=int(data.get("missing_rows", 0)),
            covariates=None if data.get("covariates") is None else np.asarray(data["covariates"], float),
        )


def _mean_var(values: np.ndarray):
    n = values.size
    mean = math.fsum(values) / n
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, var


def estimate_groups(
    data: MicroDataset, grouping: Optional[Sequence[str]] = None, cost_offset: float = 0.0
) -> EstimateVector:
    """Difference-in-means estimates for every subgroup.

    Subgroups with fewer than two observations in either arm, or with zero
    estimated variance, are dropped with a warning and the remaining shares
    renormalised.

    Args:
        data: The micro-data.
        grouping: Key columns defining subgroups; defaults to ``data.keys``.
        cost_offset: Per-person treatment cost subtracted from each effect.

    Raises:
        DataError: if fewer than two usable subgroups remain.
    """
    keys = list(data.keys if grouping is None else grouping)
    frame = data.frame
    y_col, d_col = data.outcome, data.treatment
    rows = []
    dropped = []
    for label, grp in frame.groupby(keys, sort=True):
        label = label if isinstance(label, tuple) else (label,)
        y1 = grp.loc[grp[d_col] == 1, y_col].to_numpy(float)
        y0 = grp.loc[grp[d_col] == 0, y_col].to_numpy(float)
        if y1.size < 2 or y0.size < 2:
            dropped.append(label)
            warnings.warn(f"dropping subgroup {label}: fewer than two units in an arm")
            continue
        m1, v1 = _mean_var(y1)
        m0, v0 = _mean_var(y0)
        se = math.sqrt(v1 / y1.size + v0 / y0.size)
        if se <= 0:
            dropped.append(label)
            warnings.warn(f"dropping subgroup {label}: zero estimated variance")
            continue
        rows.append((label, m1, m0, se, y1.size, y0.size))
    if len(rows) < 2:
        raise DataError(f"need at least two usable subgroups, found {len(rows)}")
    labels = [r[0] for r in rows]
    mu1 = np.array([r[1] for r in rows])
    mu0 = np.array([r[2] for r in rows])
    n1 = np.array([r[4] for r in rows])
    n0 = np.array([r[5] for r in rows])
    n = n1 + n0
    logger.info("estimated %d subgroups, dropped %d", len(rows), len(dropped))
    return EstimateVector(
        theta_hat=(mu1 - mu0) - float(cost_offset),
        sigma_hat=np.array([r[3] for r in rows]),
        p_hat=n / n.sum(),
        labels=labels,
        cost_offset=float(cost_offset),
        mu1=mu1,
        mu0=mu0,
        n1=n1,
        n0=n0,
        key_names=keys,
        dropped=dropped,
        missing_rows=data.missing_rows,
    )


def group_covariates(estimates: EstimateVector) -> np.ndarray:
    """Intercept plus treatment-coded dummies for each component of the key.

    The first level of every key column is the reference category.
    """
    labels = estimates.labels
    cols = [np.ones(len(labels))]
    for j in range(len(labels[0])):
        levels = sorted({lab[j] for lab in labels}, key=str)
        for level in levels[1:]:
            cols.append(np.array([1.0 if lab[j] == level else 0.0 for lab in labels]))
    return np.column_stack(cols)


@dataclass(frozen=True)
class DispersionReport:
    """Observed spread of the estimates against its no-heterogeneity benchmark.

    ``null_median`` is the simulated median of ``max Z - min Z`` with
    independent ``Z_k ~ N(0, sigma_hat_k^2)``.
    """

    observed_range: float
    null_median: float
    below_null_median: bool
    draws: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "observed_range": self.observed_range,
            "null_median": self.null_median,
            "below_null_median": self.below_null_median,
            "draws": self.draws,
            "seed": self.seed,
        }


def dispersion_diagnostic(
    estimates: EstimateVector, draws: int = 100_000, seed: int = 0
) -> DispersionReport:
    if estimates.k_count < 2:
        raise DataError("need at least two subgroups")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((draws, estimates.k_count)) * estimates.sigma_hat
    null_median = float(np.median(z.max(axis=1) - z.min(axis=1)))
    observed = float(estimates.theta_hat.max() - estimates.theta_hat.min())
    return DispersionReport(observed, null_median, observed < null_median, draws, seed)


def read_csv(path: Path | str, outcome: str, treatment: str, keys: Sequence[str]) -> MicroDataset:
    return MicroDataset.from_csv(path, outcome, treatment, keys)
