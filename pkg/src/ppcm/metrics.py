"""Replication runner and evaluation metrics.

A study generates R replicates of a scenario, runs the requested estimators
on each, and scores them against the per-replicate finite-population truth:
bias is the mean of per-replicate errors, SD the standard deviation of the
point estimates, MSE the mean squared error, and CP the percentage of
replicates whose interval covers the truth.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EstimationError
from .rng import derive_seed
from .simgen import ScenarioSpec


@dataclass(frozen=True)
class ReplicateResult:
    """One estimator's result on one replicate."""

    estimator: str
    replicate: int
    point: float
    lo: float
    hi: float
    truth: float
    error: str | None = None

    def __post_init__(self):
        if self.error is None and self.lo > self.hi:
            raise ConfigError("interval must satisfy lo <= hi")


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    n_replicates: int
    n_failed: int
    bias: float
    sd: float | None
    mse: float
    cp: float | None


@dataclass(frozen=True)
class SummaryTable:
    rows: tuple[SummaryRow, ...]

    def row(self, estimator: str) -> SummaryRow:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)


def credible_interval(draws, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed percentile interval via linear-interpolation quantiles."""
    draws = np.asarray(draws, dtype=float)
    if draws.size < 1:
        raise EstimationError("credible_interval needs at least one draw")
    if not 0.0 <= level <= 1.0:
        raise ConfigError("level must lie in [0, 1]")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


def summarize(results) -> SummaryTable:
    """Collapse replicate results into one row per estimator.

    Failed replicates are excluded from the metrics and counted in
    ``n_failed``.  With a single successful replicate SD and CP are absent.
    """
    order: dict[str, list[ReplicateResult]] = {}
    for res in results:
        order.setdefault(res.estimator, []).append(res)
    rows = []
    for name, group in order.items():
        ok = [r for r in group if r.error is None]
        n_failed = len(group) - len(ok)
        if not ok:
            rows.append(SummaryRow(name, 0, n_failed, math.nan, None, math.nan, None))
            continue
        points = np.array([r.point for r in ok])
        truths = np.array([r.truth for r in ok])
        errors = points - truths
        bias = float(errors.mean())
        mse = float(np.mean(errors**2))
        if len(ok) >= 2:
            sd = float(np.std(points, ddof=1))
            covered = [(r.lo <= r.truth <= r.hi) for r in ok]
            cp = 100.0 * float(np.mean(covered))
        else:
            sd = None
            cp = None
        rows.append(SummaryRow(name, len(ok), n_failed, bias, sd, mse, cp))
    return SummaryTable(rows=tuple(rows))


def _run_replicate(args) -> list[ReplicateResult]:
    from . import study  # deferred: study imports the estimator stack

    spec, rep_index, estimator_specs, seed, settings = args
    rep_seed = derive_seed(seed, "replicate", rep_index)
    rep_spec = ScenarioSpec(
        scenario=spec.scenario,
        n_population=spec.n_population,
        n_sample=spec.n_sample,
        seed=rep_seed,
        response_rate=spec.response_rate,
        calibrate_intercepts=spec.calibrate_intercepts,
    )
    return study.run_estimators(rep_spec, rep_index, estimator_specs, rep_seed, settings)


def run_study(
    spec: ScenarioSpec,
    estimators,
    n_replicates: int,
    seed: int = 0,
    n_workers: int | None = None,
    settings=None,
) -> list[ReplicateResult]:
    """Run every requested estimator on R independent replicates.

    Estimator names are validated up front; a failure of one estimator on
    one replicate is recorded on its result row, not fatal to the study.
    Results are deterministic given (spec, estimators, R, seed) regardless
    of worker count, and come back ordered by (replicate, estimator).
    """
    from . import study

    if n_replicates < 1:
        raise ConfigError("need at least one replicate")
    estimator_specs = [study.parse_estimator(name) for name in estimators]
    if not estimator_specs:
        raise ConfigError("need at least one estimator")

    tasks = [(spec, r, estimator_specs, seed, settings) for r in range(n_replicates)]
    results: list[list[ReplicateResult]] = [None] * n_replicates  # type: ignore[list-item]
    if n_workers is None or n_workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as pool:
            for r, out in enumerate(pool.map(_run_replicate, tasks)):
                results[r] = out
    else:
        for r, task in enumerate(tasks):
            results[r] = _run_replicate(task)
    return [res for group in results for res in group]
