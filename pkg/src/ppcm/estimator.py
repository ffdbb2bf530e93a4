"""Population partly conditional mean estimation.

The estimator fits per-wave outcome models on responders and per-wave
response models on previous-wave responders, then for each retained
posterior draw samples sensitivity offsets, simulates one forward
trajectory of response and outcome history for every population unit, and
averages the final predicted means over survivors at each wave (and,
optionally, over age cohorts pooled across waves).

Modes: ``mortal`` (default) truncates at death so only survivors enter the
estimand; ``immortal`` ignores survival after baseline, keeps every unit at
every wave, forces all sensitivity offsets to zero, and restricts models to
baseline covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .bart import BartConfig, PosteriorEnsemble, fit_continuous, fit_probit, with_seed
from .errors import ConfigError, EstimationError
from .frames import CohortFrame, PopulationFrame, responders_at
from .rng import derive_seed, substream
from .triangular import SensitivityConfig, sample_sensitivity

MORTAL = "mortal"
IMMORTAL = "immortal"


@dataclass(frozen=True)
class PpcmOptions:
    """Estimation options shared by both cohort modes."""

    cohort_mode: str = MORTAL
    n_posterior: int = 1000
    age_grid: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.cohort_mode not in (MORTAL, IMMORTAL):
            raise ConfigError(f"unknown cohort mode {self.cohort_mode!r}")
        if self.n_posterior < 1:
            raise ConfigError("n_posterior must be >= 1")
        if self.age_grid is not None:
            grid = np.asarray(self.age_grid, dtype=float)
            if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
                raise ConfigError("age_grid must be a strictly increasing 1-d grid")
            object.__setattr__(self, "age_grid", grid)


@dataclass(frozen=True)
class FittedModels:
    """Per-wave fitted models plus the design convention they were fit under.

    ``outcome[t]`` is the continuous model for wave t (t = 0..T), fit on
    units with full response through t and alive at t.  ``response[t-1]``
    is the probit model for responding at wave t (t = 1..T), fit on
    previous-wave responders alive at t; ``response`` is None when no
    dropout-offset machinery needs it.
    """

    outcome: tuple[PosteriorEnsemble, ...]
    response: tuple[PosteriorEnsemble, ...] | None
    mode: str
    n_waves: int


@dataclass(frozen=True)
class ForwardResult:
    """Imputed histories and final predictions for one posterior draw.

    ``y_star``/``r_star`` are the sampled outcome and response histories;
    ``y_hat`` holds the final per-wave predicted means (wave 0 unused).
    Cells for units outside the wave's risk set are NaN (or 0 for r_star).
    """

    y_star: np.ndarray
    r_star: np.ndarray
    y_hat: np.ndarray


@dataclass(frozen=True)
class PpcmPosterior:
    """Posterior draws and summaries of the PPCM per wave and per age."""

    waves: np.ndarray
    wave_draws: np.ndarray
    wave_point: np.ndarray
    wave_lo: np.ndarray
    wave_hi: np.ndarray
    age_grid: np.ndarray | None = None
    age_draws: np.ndarray | None = None
    age_point: np.ndarray | None = None
    age_lo: np.ndarray | None = None
    age_hi: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return self.wave_draws.shape[0]

    def targets(self):
        """(label, point, lo, hi) rows for every wave and age target."""
        rows = [
            (f"wave:{t}", self.wave_point[i], self.wave_lo[i], self.wave_hi[i])
            for i, t in enumerate(self.waves)
        ]
        if self.age_grid is not None:
            rows += [
                (f"age:{a:g}", self.age_point[i], self.age_lo[i], self.age_hi[i])
                for i, a in enumerate(self.age_grid)
            ]
        return rows

    def draw_rows(self):
        """(draw, target, value) rows for the long-format posterior CSV."""
        rows = []
        for d in range(self.n_draws):
            for i, t in enumerate(self.waves):
                rows.append((d, f"wave:{t}", self.wave_draws[d, i]))
            if self.age_grid is not None:
                for i, a in enumerate(self.age_grid):
                    rows.append((d, f"age:{a:g}", self.age_draws[d, i]))
        return rows


def _summaries(draws: np.ndarray):
    n_targets = draws.shape[1]
    point = np.full(n_targets, np.nan)
    lo = np.full(n_targets, np.nan)
    hi = np.full(n_targets, np.nan)
    for j in range(n_targets):
        col = draws[:, j]
        if np.isnan(col).any():
            continue
        point[j] = col.mean()
        lo[j], hi[j] = metrics.credible_interval(col)
    return point, lo, hi


def _risk_mask(population: PopulationFrame, t: int, mode: str) -> np.ndarray:
    if mode == IMMORTAL:
        return np.ones(population.n_units, dtype=bool)
    return population.alive[:, t] == 1


def _design(frame, t: int, y_hist: np.ndarray | None, mode: str, rows) -> np.ndarray:
    """Model design at wave t: covariate history (baseline only when
    immortal) plus outcome history columns 0..t-1."""
    if mode == IMMORTAL:
        blocks = [frame.covariates[0][rows]]
    else:
        blocks = [frame.covariates[k][rows] for k in range(t + 1) if frame.covariates[k].shape[1]]
    if t >= 1:
        blocks.append(y_hist[rows, :t])
    if not blocks:
        raise EstimationError(f"wave {t} has an empty model design")
    return np.column_stack(blocks)


def fit_ppcm_models(
    cohort: CohortFrame,
    bart_outcome: BartConfig,
    bart_response: BartConfig,
    mode: str = MORTAL,
    seed: int = 0,
    fit_response: bool = True,
) -> FittedModels:
    """Fit all per-wave observed-data models on the cohort.

    Outcome models are fit for every wave on responders-and-alive; response
    models for waves 1..T on previous-wave responders alive at the wave.
    Each fit gets an independent stream derived from `seed`, so enabling or
    disabling the response fits never changes the outcome fits.
    """
    w = cohort.n_waves
    outcome_fits = []
    for t in range(w):
        rows = np.flatnonzero(responders_at(cohort, t))
        if rows.size == 0:
            raise EstimationError(f"wave {t} has no responders")
        X = _design(cohort, t, cohort.outcome, mode, rows)
        y = cohort.outcome[rows, t]
        cfg = with_seed(bart_outcome, derive_seed(seed, "fit-y", t))
        outcome_fits.append(fit_continuous(X, y, cfg))

    response_fits = None
    if fit_response and w > 1:
        response_fits = []
        for t in range(1, w):
            prev = responders_at(cohort, t - 1) & (cohort.alive[:, t] == 1)
            rows = np.flatnonzero(prev)
            if rows.size == 0:
                raise EstimationError(f"wave {t} has no response-model risk set")
            X = _design(cohort, t, cohort.outcome, mode, rows)
            r = cohort.responded[rows, t].astype(float)
            cfg = with_seed(bart_response, derive_seed(seed, "fit-r", t))
            response_fits.append(fit_probit(X, r, cfg))
        response_fits = tuple(response_fits)

    return FittedModels(
        outcome=tuple(outcome_fits), response=response_fits, mode=mode, n_waves=w
    )


def impute_forward(
    population: PopulationFrame,
    fits: FittedModels,
    gamma: np.ndarray,
    delta: np.ndarray,
    draw: int,
    seed: int = 0,
) -> ForwardResult:
    """Sequentially sample one trajectory per unit and predict each wave.

    For waves k = 1..t, response is Bernoulli with the fitted probability
    (zero once a unit has dropped out) and the outcome history is the
    responder-model mean plus the dropout offset for non-responders plus
    model-scale noise.  The final prediction at each wave is the model mean
    plus the dropout offset for non-responders minus the practice-effect
    offset.  History noise and response draws come from separate streams,
    so predictions under a zero dropout prior are identical whether or not
    response models are simulated.
    """
    w = fits.n_waves
    n = population.n_units
    rng_noise = substream(seed, "fwd-noise", draw)
    rng_resp = substream(seed, "fwd-resp", draw)

    y_star = np.full((n, w), np.nan)
    r_star = np.zeros((n, w), dtype=np.int8)
    y_hat = np.full((n, w), np.nan)

    rows0 = np.flatnonzero(_risk_mask(population, 0, fits.mode))
    f0 = fits.outcome[0].draws[draw]
    X0 = _design(population, 0, None, fits.mode, rows0)
    eps0 = rng_noise.standard_normal(n)
    y_star[rows0, 0] = f0.latent(X0) + f0.sigma * eps0[rows0]
    r_star[rows0, 0] = 1

    for t in range(1, w):
        alive = _risk_mask(population, t, fits.mode)
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            continue
        X = _design(population, t, y_star, fits.mode, rows)
        u = rng_resp.random(n)
        if fits.response is not None:
            pi = fits.response[t - 1].draws[draw].predict(X)
            resp = (u[rows] < pi) & (r_star[rows, t - 1] == 1)
        else:
            resp = r_star[rows, t - 1] == 1
        r_star[rows, t] = resp.astype(np.int8)

        fy = fits.outcome[t].draws[draw]
        mean_t = fy.latent(X)
        drop_offset = gamma[rows, t] * (1 - r_star[rows, t])
        eps = rng_noise.standard_normal(n)
        y_hat[rows, t] = mean_t + drop_offset - delta[rows, t]
        y_star[rows, t] = mean_t + drop_offset + fy.sigma * eps[rows]

    return ForwardResult(y_star=y_star, r_star=r_star, y_hat=y_hat)


def ppcm_at_wave(predictions: np.ndarray, population: PopulationFrame, t: int,
                 mode: str = MORTAL):
    """Survivor mean of the per-unit predictions at wave t.

    Returns None when nobody is in the wave's risk set (an explicitly
    absent value, never 0).  Uses compensated summation so the result does
    not depend on unit order.
    """
    alive = _risk_mask(population, t, mode)
    count = int(alive.sum())
    if count == 0:
        return None
    values = predictions[alive]
    if np.isnan(values).any():
        raise EstimationError(f"missing predictions for survivors at wave {t}")
    return math.fsum(values) / count


def ppcm_by_age(
    predictions: np.ndarray,
    population: PopulationFrame,
    age_grid: np.ndarray,
    mode: str = MORTAL,
) -> np.ndarray:
    """Age-cohort PPCM pooled over waves 1..T.

    Each (unit, wave) pair alive at the wave joins the age cohort whose
    grid value is nearest its age at that wave; the pooled value is the
    survivor-count-weighted average of the per-wave cohort means, i.e. the
    pooled mean over contributing (unit, wave) pairs.  Ages with no
    survivors at any wave come back NaN.
    """
    if population.age is None:
        raise ConfigError("age-aggregated PPCM needs an age column")
    grid = np.asarray(age_grid, dtype=float)
    sums = np.zeros(grid.size)
    counts = np.zeros(grid.size, dtype=np.int64)
    w = population.n_waves
    for t in range(1, w):
        alive = _risk_mask(population, t, mode)
        ages = population.age[:, t][alive]
        if np.isnan(ages).any():
            raise EstimationError(f"age missing for survivors at wave {t}")
        values = predictions[alive, t] if predictions.ndim == 2 else predictions[alive]
        idx = np.abs(ages[:, None] - grid[None, :]).argmin(axis=1)
        sums += np.bincount(idx, weights=values, minlength=grid.size)
        counts += np.bincount(idx, minlength=grid.size)
    out = np.full(grid.size, np.nan)
    nonzero = counts > 0
    out[nonzero] = sums[nonzero] / counts[nonzero]
    return out


def posterior_from_fits(
    population: PopulationFrame,
    fits: FittedModels,
    sensitivity: SensitivityConfig | None,
    options: PpcmOptions,
) -> PpcmPosterior:
    """Steps 2-5 of the estimation algorithm from already-fitted models.

    One PPCM draw per retained model draw: sample offsets, impute forward,
    average over the risk set per wave (and age cohort).  Sharing `fits`
    across several sensitivity settings keeps step 1 identical between
    settings.
    """
    w = fits.n_waves
    n_post = options.n_posterior
    for ens in fits.outcome + (fits.response or ()):
        if ens.n_draws < n_post:
            raise ConfigError(
                f"n_posterior={n_post} exceeds the {ens.n_draws} retained model draws"
            )
    sens = sensitivity if sensitivity is not None else SensitivityConfig.zeros(w - 1)
    if fits.mode == IMMORTAL:
        sens = SensitivityConfig.zeros(w - 1)  # offsets are 0 by definition

    mode = fits.mode
    grid = options.age_grid
    wave_draws = np.empty((n_post, w - 1))
    age_draws = np.empty((n_post, grid.size)) if grid is not None else None
    pop_for_risk = population
    for d in range(n_post):
        draw_seed = derive_seed(options.seed, "ppcm-draw", d)
        gamma, delta = sample_sensitivity(sens, population, draw_seed)
        fwd = impute_forward(population, fits, gamma, delta, d, seed=draw_seed)
        for t in range(1, w):
            value = ppcm_at_wave(fwd.y_hat[:, t], pop_for_risk, t, mode)
            wave_draws[d, t - 1] = np.nan if value is None else value
        if grid is not None:
            age_draws[d] = ppcm_by_age(fwd.y_hat, population, grid, mode)

    wave_point, wave_lo, wave_hi = _summaries(wave_draws)
    result = {
        "waves": np.arange(1, w),
        "wave_draws": wave_draws,
        "wave_point": wave_point,
        "wave_lo": wave_lo,
        "wave_hi": wave_hi,
    }
    if grid is not None:
        age_point, age_lo, age_hi = _summaries(age_draws)
        result.update(
            age_grid=grid,
            age_draws=age_draws,
            age_point=age_point,
            age_lo=age_lo,
            age_hi=age_hi,
        )
    return PpcmPosterior(**result)


def _check_alignment(population: PopulationFrame, cohort: CohortFrame) -> None:
    if population.schema.n_waves != cohort.schema.n_waves:
        raise ConfigError("population and cohort frames must cover the same waves")
    if population.schema.covariates != cohort.schema.covariates:
        raise ConfigError("population and cohort frames must share covariate columns")


def estimate_ppcm(
    population: PopulationFrame,
    cohort: CohortFrame,
    bart_outcome: BartConfig,
    bart_response: BartConfig,
    sensitivity: SensitivityConfig | None = None,
    options: PpcmOptions = PpcmOptions(),
) -> PpcmPosterior:
    """Full mortal-cohort estimation: fit models, then integrate forward.

    Response models are fitted only when a non-zero dropout prior makes
    them matter; the purpose-keyed streams guarantee this never changes the
    outcome-model draws or the resulting PPCM under a zero dropout prior.
    """
    _check_alignment(population, cohort)
    if options.cohort_mode != MORTAL:
        raise ConfigError("use estimate_ppcm_immortal for the immortal mode")
    needs_response = sensitivity is not None and not sensitivity.gamma_is_zero
    fits = fit_ppcm_models(
        cohort,
        bart_outcome,
        bart_response,
        mode=MORTAL,
        seed=options.seed,
        fit_response=needs_response,
    )
    return posterior_from_fits(population, fits, sensitivity, options)


def estimate_ppcm_immortal(
    population: PopulationFrame,
    cohort: CohortFrame,
    bart_outcome: BartConfig,
    options: PpcmOptions = PpcmOptions(),
) -> PpcmPosterior:
    """Immortal-cohort contrast: death treated as ignorable dropout.

    All units stay in the estimand at every wave, models use baseline
    covariates only, and sensitivity offsets are zero.
    """
    _check_alignment(population, cohort)
    fits = fit_ppcm_models(
        cohort,
        bart_outcome,
        bart_outcome,
        mode=IMMORTAL,
        seed=options.seed,
        fit_response=False,
    )
    opts = PpcmOptions(
        cohort_mode=IMMORTAL,
        n_posterior=options.n_posterior,
        age_grid=options.age_grid,
        seed=options.seed,
    )
    return posterior_from_fits(population, fits, None, opts)
