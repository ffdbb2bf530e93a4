"""Estimator registry for simulation studies.

Estimator names accepted by the runner and the CLI:

- ``sample``: unadjusted responder mean;
- ``mb-sp``: the semi-parametric estimator (sensitivity offsets zero);
- ``mb-sp:pe=B``: as mb-sp with a practice-effect prior Tri(0, B, B) on
  every post-baseline wave;
- ``mb-lm``: sequential parametric linear estimator;
- ``ht``: cell-and-participation-weighted mean;
- ``greg``: prediction with weighted residual correction;
- ``mrp``: multilevel regression with poststratification.

Several ``mb-sp`` variants in one study share a single set of model fits,
and ``ht``/``greg`` share the cell table and participation models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import competitors
from .bart import BartConfig
from .errors import ConfigError, PpcmError
from .estimator import MORTAL, PpcmOptions, fit_ppcm_models, posterior_from_fits
from .metrics import ReplicateResult
from .rng import derive_seed
from .simgen import SimReplicate, gen_replicate
from .triangular import SensitivityConfig, TriangularPrior

CELL_COLUMNS = ("x1", "x2", "x3", "x4")
MRP_FIXED = ("x1", "x2")
MRP_RANDOM = ("x3", "x4", "x5", "x6", "x7", "x8")

FAMILIES = ("sample", "mb-sp", "mb-lm", "ht", "greg", "mrp")


@dataclass(frozen=True)
class StudySettings:
    """Model settings for study runs (reduced replication profile)."""

    bart_outcome: BartConfig = BartConfig(n_trees=100, n_burn=500, n_keep=500)
    bart_response: BartConfig = BartConfig(n_trees=50, n_burn=500, n_keep=500)
    n_posterior: int = 500
    lm_draws: int = 500
    mrp_draws: int = 500
    mrp_burn: int = 500


@dataclass(frozen=True)
class EstimatorSpec:
    label: str
    family: str
    params: dict


def parse_estimator(name: str) -> EstimatorSpec:
    """Parse an estimator name like ``mb-sp`` or ``mb-sp:pe=0.15``."""
    family, _, param_str = name.partition(":")
    if family not in FAMILIES:
        raise ConfigError(
            f"unknown estimator {family!r}; valid names: {', '.join(FAMILIES)}"
        )
    params = {}
    if param_str:
        if family != "mb-sp":
            raise ConfigError(f"estimator {family!r} takes no parameters")
        for item in param_str.split(","):
            key, _, value = item.partition("=")
            if key != "pe" or not value:
                raise ConfigError(f"unknown estimator parameter {item!r}")
            params["pe"] = float(value)
    return EstimatorSpec(label=name, family=family, params=params)


def _pe_config(n_post_waves: int, bound: float) -> SensitivityConfig:
    delta = tuple(TriangularPrior(0.0, bound, bound) for _ in range(n_post_waves))
    gamma = (TriangularPrior(),) * n_post_waves
    return SensitivityConfig(gamma=gamma, delta=delta)


def _mb_sp(rep: SimReplicate, t, est, seed, settings, shared):
    if "mb-sp-fits" not in shared:
        shared["mb-sp-fits"] = fit_ppcm_models(
            rep.cohort,
            settings.bart_outcome,
            settings.bart_response,
            mode=MORTAL,
            seed=derive_seed(seed, "mb-sp-fit"),
            fit_response=False,  # study variants use practice-effect offsets only
        )
    fits = shared["mb-sp-fits"]
    sens = None
    if "pe" in est.params:
        sens = _pe_config(rep.population.n_waves - 1, est.params["pe"])
    options = PpcmOptions(
        n_posterior=settings.n_posterior, seed=derive_seed(seed, "mb-sp-post", est.label)
    )
    post = posterior_from_fits(rep.population, fits, sens, options)
    return post.wave_point[-1], post.wave_lo[-1], post.wave_hi[-1]


def _weighting_context(rep: SimReplicate, t, seed, shared):
    if "cells" not in shared:
        shared["cells"] = competitors.build_cells(rep.population, rep.cohort, CELL_COLUMNS)
        shared["participation"] = competitors.fit_participation_models(rep.cohort, t)
    return shared["cells"], shared["participation"]


def _ht(rep, t, est, seed, settings, shared):
    cells, probs = _weighting_context(rep, t, seed, shared)
    return competitors.ht_estimate(rep.population, rep.cohort, cells, probs, t)


def _greg(rep, t, est, seed, settings, shared):
    cells, probs = _weighting_context(rep, t, seed, shared)
    return competitors.greg_estimate(rep.population, rep.cohort, cells, probs, t)


def _mb_lm(rep, t, est, seed, settings, shared):
    return competitors.mblm_ppcm(
        rep.population, rep.cohort, t, settings.lm_draws, derive_seed(seed, "mb-lm")
    )


def _mrp(rep, t, est, seed, settings, shared):
    spec = competitors.MrpSpec(fixed=MRP_FIXED, random=MRP_RANDOM)
    return competitors.mrp_estimate(
        rep.population,
        rep.cohort,
        spec,
        t,
        n_draws=settings.mrp_draws,
        n_burn=settings.mrp_burn,
        seed=derive_seed(seed, "mrp"),
    )


def _sample(rep, t, est, seed, settings, shared):
    return competitors.sample_mean_estimate(rep.cohort, t)


_RUNNERS = {
    "sample": _sample,
    "mb-sp": _mb_sp,
    "mb-lm": _mb_lm,
    "ht": _ht,
    "greg": _greg,
    "mrp": _mrp,
}


def run_estimators(spec, rep_index, estimator_specs, rep_seed, settings=None):
    """Generate one replicate and score every requested estimator on it."""
    settings = settings or StudySettings()
    rep = gen_replicate(spec)
    t = rep.population.n_waves - 1
    shared: dict = {}
    results = []
    for est in estimator_specs:
        try:
            point, lo, hi = _RUNNERS[est.family](rep, t, est, rep_seed, settings, shared)
            results.append(
                ReplicateResult(
                    estimator=est.label,
                    replicate=rep_index,
                    point=float(point),
                    lo=float(lo),
                    hi=float(hi),
                    truth=rep.truth,
                )
            )
        except (PpcmError, ValueError, np.linalg.LinAlgError) as exc:
            results.append(
                ReplicateResult(
                    estimator=est.label,
                    replicate=rep_index,
                    point=math.nan,
                    lo=math.nan,
                    hi=math.nan,
                    truth=rep.truth,
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    return results
