import numpy as np
import pytest

from ppcm.bart import BartConfig
from ppcm.frames import CohortFrame, PopulationFrame, WaveSchema


@pytest.fixture(scope="session")
def fast_bart() -> BartConfig:
    """Small sampler settings for wiring tests (not calibration tests)."""
    return BartConfig(n_trees=20, n_burn=100, n_keep=100, seed=39)


def make_population(alive, covariates, age=None, schema=None):
    alive = np.asarray(alive, dtype=np.int8)
    n, w = alive.shape
    if schema is None:
        p = covariates[0].shape[1]
        schema = WaveSchema(
            n_waves=w,
            covariates=tuple(
                tuple(f"c{j}" for j in range(block.shape[1])) for block in covariates
            ),
            age_column="age" if age is not None else None,
        )
    return PopulationFrame(
        schema=schema,
        unit_ids=np.array([f"u{i}" for i in range(n)], dtype=object),
        alive=alive,
        covariates=tuple(np.asarray(c, dtype=float) for c in covariates),
        age=None if age is None else np.asarray(age, dtype=float),
    )


def make_cohort(alive, covariates, responded, outcome, age=None, schema=None):
    pop = make_population(alive, covariates, age=age, schema=schema)
    return CohortFrame(
        schema=pop.schema,
        unit_ids=pop.unit_ids,
        alive=pop.alive,
        covariates=pop.covariates,
        responded=np.asarray(responded, dtype=np.int8),
        outcome=np.asarray(outcome, dtype=float),
        age=pop.age,
    )
