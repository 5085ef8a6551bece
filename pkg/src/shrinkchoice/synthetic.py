"""Synthetic job-training experiment with 24 subgroups.

Subgroups are the cells of race (3) x sex (2) x marital status (2) x prior
work history (2).  Cell sizes, the 2:1 assignment ratio and the earnings
scale are chosen so that the subgroup standard errors are in the low
thousands of dollars, which is the regime where shrinkage and CES decisions
can disagree at moderate dispersion bounds.  The data are not drawn from any
real study.
"""

from __future__ import annotations

import itertools
from importlib import resources

import numpy as np
import pandas as pd

__all__ = ["DEFAULT_SEED", "COST_OFFSET", "KEY_COLUMNS", "generate", "load_example"]

DEFAULT_SEED = 4
COST_OFFSET = 774.0
KEY_COLUMNS = ["race", "sex", "married", "worked"]
_FILE = "synthetic_subgroups.csv"

_RACE = {"black": 0.28, "hispanic": 0.12, "other": 0.60}
_SEX = {"female": 0.55, "male": 0.45}
_MARRIED = {"no": 0.70, "yes": 0.30}
_WORKED = {"no": 0.45, "yes": 0.55}
_N = 11_000
_P_TREAT = 2.0 / 3.0
_MEAN_EFFECT = 1315.0
_EFFECT_SD = 300.0


def generate(seed: int = DEFAULT_SEED) -> pd.DataFrame:
    """Draw the synthetic experiment.

    Returns:
        Columns ``earnings`` (30-month earnings, whole dollars), ``treated``
        (0/1) and the four key columns.  Every cell has at least 10 units
        per arm.
    """
    rng = np.random.default_rng(seed)
    frames = []
    for race, sex, married, worked in itertools.product(_RACE, _SEX, _MARRIED, _WORKED):
        share = _RACE[race] * _SEX[sex] * _MARRIED[married] * _WORKED[worked]
        n = max(int(round(_N * share)), 40)
        d = (rng.random(n) < _P_TREAT).astype(int)
        d[:10], d[10:20] = 1, 0
        base = 9_000.0 + 7_000.0 * (worked == "yes") + 3_000.0 * (sex == "male") + 2_000.0 * (married == "yes")
        spread = 1.25 * base
        effect = _MEAN_EFFECT + _EFFECT_SD * rng.standard_normal()
        y = base + effect * d + spread * rng.standard_normal(n)
        frames.append(
            pd.DataFrame(
                {
                    "earnings": np.round(np.maximum(y, 0.0)).astype(np.int64),
                    "treated": d,
                    "race": race,
                    "sex": sex,
                    "married": married,
                    "worked": worked,
                }
            )
        )
    frame = pd.concat(frames, ignore_index=True)
    return frame.sample(frac=1.0, random_state=seed).reset_index(drop=True)


def load_example() -> pd.DataFrame:
    """The shipped copy of ``generate(DEFAULT_SEED)``."""
    with resources.files("shrinkchoice.data").joinpath(_FILE).open("r", encoding="utf-8") as fh:
        return pd.read_csv(fh)
