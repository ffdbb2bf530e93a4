"""Competitor estimators of the survivor mean at a wave.

Four adjusted estimators share the data model: a parametric sequential
linear predictor (``mb-lm``), a weighting estimator with cell and
longitudinal participation weights (``ht``), a calibration estimator
combining an outcome model with weighted residual correction (``greg``),
and multilevel regression with unit-level poststratification (``mrp``).
The unadjusted responder mean (``sample``) is the no-adjustment baseline.
All point estimators come with 95% intervals: posterior percentiles for
the model-based ones, normal-theory linearization for ht/greg/sample.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr as scipy_qr
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.special import log_ndtr, ndtr

from .errors import ConfigError, EstimationError
from .frames import CohortFrame, PopulationFrame, responders_at
from .rng import substream

log = logging.getLogger("ppcm.competitors")

_Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# adjustment cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellTable:
    """Poststratification cells over categorized baseline covariates.

    ``cells`` holds (key, population count, sample count, trimmed weight)
    after sparse-cell merging; ``assignment`` maps every original key to
    its final cell index.  ``merge_log`` records (absorbed key, target key)
    pairs and ``trim_log`` records (key, raw weight) pairs capped at the
    trim limit.
    """

    columns: tuple[str, ...]
    coders: tuple
    cells: tuple
    assignment: dict
    merge_log: tuple
    trim_log: tuple

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def total_population(self) -> int:
        return sum(c[1] for c in self.cells)

    def total_sample(self) -> int:
        return sum(c[2] for c in self.cells)

    def keys_for(self, frame) -> list[tuple]:
        values = _baseline_matrix(frame, self.columns)
        coded = np.column_stack(
            [_apply_coder(values[:, j], self.coders[j]) for j in range(len(self.columns))]
        )
        return [tuple(row) for row in coded]

    def weights_for(self, frame) -> np.ndarray:
        """Trimmed cell weight for each unit of `frame`."""
        weights = np.empty(frame.n_units)
        for i, key in enumerate(self.keys_for(frame)):
            if key not in self.assignment:
                raise EstimationError(f"unit {frame.unit_ids[i]} falls in an unknown cell")
            weights[i] = self.cells[self.assignment[key]][3]
        return weights


def _baseline_matrix(frame, columns) -> np.ndarray:
    names = frame.schema.covariates[0]
    idx = []
    for c in columns:
        if c not in names:
            raise ConfigError(f"covariate {c!r} is not a baseline column")
        idx.append(names.index(c))
    return frame.covariates[0][:, idx]


def _make_coder(sample_values: np.ndarray):
    uniq = np.unique(sample_values)
    if uniq.size <= 2 and np.isin(uniq, (0.0, 1.0)).all():
        return ("binary", None)
    return ("tertile", np.quantile(sample_values, [1.0 / 3.0, 2.0 / 3.0]))


def _apply_coder(values: np.ndarray, coder) -> np.ndarray:
    kind, edges = coder
    if kind == "binary":
        return values.astype(np.int64)
    return np.digitize(values, edges)


def build_cells(
    population: PopulationFrame,
    cohort: CohortFrame,
    columns,
    n_min: int = 20,
    weight_cap: float = 30.0,
) -> CellTable:
    """Build adjustment cells on categorized baseline covariates.

    Continuous covariates are cut at sample tertiles; every unique code
    combination is a cell.  Cells with fewer than `n_min` sample units are
    merged into their nearest (Hamming distance) non-sparse neighbor, ties
    broken toward the larger sample count then lexicographic key order.
    Weights N_j/n_j above `weight_cap` are trimmed.
    """
    columns = tuple(columns)
    sample_values = _baseline_matrix(cohort, columns)
    coders = tuple(_make_coder(sample_values[:, j]) for j in range(len(columns)))

    pop_keys = [
        tuple(row)
        for row in np.column_stack(
            [_apply_coder(_baseline_matrix(population, columns)[:, j], coders[j])
             for j in range(len(columns))]
        )
    ]
    sam_keys = [
        tuple(row)
        for row in np.column_stack(
            [_apply_coder(sample_values[:, j], coders[j]) for j in range(len(columns))]
        )
    ]

    counts: dict[tuple, list[int]] = {}
    for key in pop_keys:
        counts.setdefault(key, [0, 0])[0] += 1
    for key in sam_keys:
        counts.setdefault(key, [0, 0])[1] += 1

    live = {key: (n_pop, n_sam) for key, (n_pop, n_sam) in counts.items()}
    assignment = {key: key for key in live}
    merge_log = []
    while True:
        sparse = sorted(
            (key for key, (_np, ns) in live.items() if ns < n_min),
            key=lambda k: (live[k][1], k),
        )
        if not sparse:
            break
        victim = sparse[0]
        hosts = [k for k, (_np, ns) in live.items() if ns >= n_min]
        if not hosts:
            raise EstimationError("cell structure degenerate: no non-sparse cell to merge into")

        def _distance(host):
            ham = sum(a != b for a, b in zip(victim, host))
            return (ham, -live[host][1], host)

        target = min(hosts, key=_distance)
        live[target] = (live[target][0] + live[victim][0], live[target][1] + live[victim][1])
        del live[victim]
        merge_log.append((victim, target))
        for key, assigned in assignment.items():
            if assigned == victim:
                assignment[key] = target

    ordered = sorted(live)
    index = {key: i for i, key in enumerate(ordered)}
    trim_log = []
    cells = []
    for key in ordered:
        n_pop, n_sam = live[key]
        raw = n_pop / n_sam
        weight = raw
        if raw > weight_cap:
            trim_log.append((key, raw))
            weight = weight_cap
        cells.append((key, n_pop, n_sam, weight))

    return CellTable(
        columns=columns,
        coders=coders,
        cells=tuple(cells),
        assignment={key: index[assigned] for key, assigned in assignment.items()},
        merge_log=tuple(merge_log),
        trim_log=tuple(trim_log),
    )


# ---------------------------------------------------------------------------
# participation-probability weights and the weighting estimator
# ---------------------------------------------------------------------------


def _probit_mle(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Probit regression coefficients by maximum likelihood."""
    n, p = X.shape
    sign = 2.0 * y - 1.0

    def negloglik(beta):
        z = sign * (X @ beta)
        return -log_ndtr(z).sum()

    def grad(beta):
        z = sign * (X @ beta)
        ratio = np.exp(-0.5 * z**2 - 0.5 * np.log(2 * np.pi) - log_ndtr(z))
        return -X.T @ (sign * ratio)

    start = np.zeros(p)
    res = minimize(negloglik, start, jac=grad, method="BFGS",
                   options={"maxiter": 200, "gtol": 1e-8})
    return res.x


def _history_design(frame, t: int, rows) -> np.ndarray:
    blocks = [np.ones((len(rows), 1))]
    blocks += [frame.covariates[k][rows] for k in range(t + 1) if frame.covariates[k].shape[1]]
    if t >= 1:
        blocks.append(frame.outcome[rows, :t])
    return np.column_stack(blocks)


def fit_participation_models(cohort: CohortFrame, t: int) -> list[np.ndarray]:
    """Per-wave probit participation probabilities for cohort units.

    For each wave k = 1..t a probit regression of response on covariate
    history and previous outcomes is fit on previous-wave responders alive
    at k; returns one array per wave with fitted probabilities (NaN for
    units outside the wave's design).
    """
    probs = []
    for k in range(1, t + 1):
        risk = responders_at(cohort, k - 1) & (cohort.alive[:, k] == 1)
        rows = np.flatnonzero(risk)
        if rows.size == 0:
            raise EstimationError(f"wave {k} has no response-model risk set")
        X = _history_design(cohort, k, rows)
        r = cohort.responded[rows, k].astype(float)
        if r.min() == r.max():
            fitted = np.full(rows.size, float(r[0]))
        else:
            beta = _probit_mle(X, r)
            fitted = ndtr(X @ beta)
        out = np.full(cohort.n_units, np.nan)
        out[rows] = fitted
        probs.append(out)
    return probs


def ht_point(y: np.ndarray, weights: np.ndarray) -> float:
    """Weighted ratio mean."""
    return math.fsum(weights * y) / math.fsum(weights)


def ht_estimate(
    population: PopulationFrame,
    cohort: CohortFrame,
    cells: CellTable,
    response_probs: list[np.ndarray] | None,
    t: int,
):
    """Weighted mean of wave-t responders' outcomes.

    Weights are baseline cell weights divided by the cumulative fitted
    participation probabilities through wave t; the interval comes from the
    ratio-estimator linearization variance.
    """
    resp = np.flatnonzero(responders_at(cohort, t))
    if resp.size == 0:
        raise EstimationError(f"no responders at wave {t}")
    w = cells.weights_for(cohort)[resp]
    if response_probs is not None:
        for k in range(t):
            pk = response_probs[k][resp]
            if np.isnan(pk).any():
                raise EstimationError("participation probability undefined for a responder")
            if np.any(pk <= 0.0):
                raise EstimationError("participation probability of 0 for a responder")
            w = w / pk
    y = cohort.outcome[resp, t]
    point = ht_point(y, w)
    wsum = math.fsum(w)
    var = math.fsum(w**2 * (y - point) ** 2) / wsum**2
    half = _Z95 * math.sqrt(var)
    return point, point - half, point + half


# ---------------------------------------------------------------------------
# parametric sequential linear model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearPosterior:
    """Exact conjugate posterior draws for a linear regression.

    Flat coefficient prior with a Jeffreys-type scale prior; the first
    coefficient is the intercept.
    """

    coef: np.ndarray
    sigma: np.ndarray

    @property
    def n_draws(self) -> int:
        return len(self.sigma)

    def predict(self, X: np.ndarray, draw: int) -> np.ndarray:
        Xd = np.column_stack([np.ones(len(X)), X])
        return Xd @ self.coef[draw]


def fit_mblm(
    X: np.ndarray,
    y: np.ndarray,
    n_draws: int = 500,
    seed: int = 0,
    column_names=None,
) -> LinearPosterior:
    """Sample the conjugate normal-inverse-gamma posterior exactly.

    An intercept column is prepended.  Raises on rank-deficient designs,
    naming the collinear columns.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n <= p + 1:
        raise EstimationError(f"need n > p + 1 observations, got n={n}, p={p}")
    Xd = np.column_stack([np.ones(n), X])
    q = p + 1

    _q, r_piv, piv = scipy_qr(Xd, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_piv))
    tol = diag.max() * max(n, q) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < q:
        names = column_names or [f"x{j}" for j in range(1, q)]
        labels = ["intercept"] + list(names)
        bad = sorted(labels[j] for j in piv[rank:])
        raise EstimationError(f"design is rank deficient; collinear columns: {bad}")

    coef_hat, _res, _rank, _sv = np.linalg.lstsq(Xd, y, rcond=None)
    resid = y - Xd @ coef_hat
    ssr = float(resid @ resid)
    r_mat = np.linalg.qr(Xd, mode="r")

    rng = substream(seed, "mblm")
    shape = (n - q) / 2.0
    sigma2 = (ssr / 2.0 + 1e-300) / rng.gamma(shape, size=n_draws)
    z = rng.standard_normal((n_draws, q))
    coef = coef_hat + np.sqrt(sigma2)[:, None] * solve_triangular(r_mat, z.T).T
    return LinearPosterior(coef=coef, sigma=np.sqrt(sigma2))


def mblm_ppcm(
    population: PopulationFrame,
    cohort: CohortFrame,
    t: int,
    n_draws: int = 500,
    seed: int = 0,
):
    """Sequential linear analogue of the semi-parametric estimator.

    Fits y_k | (covariate history, outcome history) for k = 0..t with
    conjugate linear models, then per posterior draw imputes the population
    outcome history forward with noise and averages the final linear
    prediction over wave-t survivors.
    """
    from .rng import derive_seed

    fits = []
    for k in range(t + 1):
        rows = np.flatnonzero(responders_at(cohort, k))
        if rows.size == 0:
            raise EstimationError(f"no responders at wave {k}")
        X = _history_design(cohort, k, rows)[:, 1:]  # fit_mblm adds the intercept
        fits.append(fit_mblm(X, cohort.outcome[rows, k], n_draws, derive_seed(seed, "wave", k)))

    def pop_design(k, y_hist):
        blocks = [
            population.covariates[j] for j in range(k + 1) if population.covariates[j].shape[1]
        ]
        if k >= 1:
            blocks.append(y_hist[:, :k])
        return np.column_stack(blocks)

    surv = population.alive[:, t] == 1
    if not surv.any():
        raise EstimationError(f"no survivors at wave {t}")
    n_pop = population.n_units
    rng = substream(seed, "mblm-forward")
    draws = np.empty(n_draws)
    y_hist = np.empty((n_pop, max(t, 1)))
    for d in range(n_draws):
        for k in range(t):
            mean = fits[k].predict(pop_design(k, y_hist), d)
            y_hist[:, k] = mean + fits[k].sigma[d] * rng.standard_normal(n_pop)
        final = fits[t].predict(pop_design(t, y_hist), d)
        draws[d] = math.fsum(final[surv]) / surv.sum()
    from .metrics import credible_interval

    lo, hi = credible_interval(draws)
    return float(draws.mean()), lo, hi


# ---------------------------------------------------------------------------
# calibration (prediction + weighted residual correction)
# ---------------------------------------------------------------------------


def greg_estimate(
    population: PopulationFrame,
    cohort: CohortFrame,
    cells: CellTable,
    response_probs: list[np.ndarray] | None,
    t: int,
):
    """Survivor mean of a baseline-covariate linear prediction plus the
    weighted mean correction of its responder residuals.

    The outcome model uses baseline covariates only (they are the
    population-known predictors); weights are the ht weights.  With zero
    residuals this reduces exactly to the model prediction mean.
    """
    resp = np.flatnonzero(responders_at(cohort, t))
    if resp.size == 0:
        raise EstimationError(f"no responders at wave {t}")
    X_s = cohort.covariates[0][resp]
    y = cohort.outcome[resp, t]
    Xd = np.column_stack([np.ones(len(X_s)), X_s])
    coef, *_ = np.linalg.lstsq(Xd, y, rcond=None)

    surv = population.alive[:, t] == 1
    n_t = int(surv.sum())
    if n_t == 0:
        raise EstimationError(f"no survivors at wave {t}")
    X_pop = np.column_stack([np.ones(population.n_units), population.covariates[0]])
    m_pop = X_pop @ coef

    w = cells.weights_for(cohort)[resp]
    if response_probs is not None:
        for k in range(t):
            pk = response_probs[k][resp]
            if np.any(~(pk > 0.0)):
                raise EstimationError("participation probability of 0 for a responder")
            w = w / pk
    e = y - Xd @ coef
    point = (math.fsum(m_pop[surv]) + math.fsum(w * e)) / n_t
    e_bar = math.fsum(w * e) / math.fsum(w)
    var = math.fsum(w**2 * (e - e_bar) ** 2) / math.fsum(w) ** 2
    half = _Z95 * math.sqrt(var)
    return point, point - half, point + half


# ---------------------------------------------------------------------------
# multilevel regression with poststratification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MrpSpec:
    """Variable roles for the hierarchical model.

    Binary covariates (and the imputed baseline outcome) enter as fixed
    effects; continuous covariates are binned to sample quartiles and enter
    as exchangeable random-effect groups, with an extra category for an
    exact-zero point mass when `zero_category` is set.
    """

    fixed: tuple[str, ...]
    random: tuple[str, ...]
    zero_category: bool = False

    def __post_init__(self):
        overlap = set(self.fixed) & set(self.random)
        if overlap:
            raise ConfigError(f"covariates in both roles: {sorted(overlap)}")


def _bin_edges(sample_values: np.ndarray) -> np.ndarray:
    return np.quantile(sample_values, [0.25, 0.5, 0.75])


def _bin_values(values: np.ndarray, edges: np.ndarray, zero_category: bool) -> np.ndarray:
    codes = np.digitize(values, edges)
    if zero_category:
        codes = np.where(values == 0.0, 4, codes)
    return codes


def _hier_gibbs(F, groups, y, n_burn, n_keep, scale0, rng, fixed_tau2=None):
    """Gibbs sampler for y = F beta + sum_g a_g[idx_g] + eps.

    Flat prior on beta, sigma^2 ~ 1/sigma^2, tau_g^2 ~ IG(1/2, scale0^2/2)
    (a half-Cauchy(scale0) on tau_g).  `groups` is a list of (codes,
    n_levels) pairs.  Yields (beta, effects, sigma2) per kept draw.
    """
    n, q = F.shape
    ftf = F.T @ F
    chol = np.linalg.cholesky(ftf)
    n_groups = len(groups)
    effects = [np.zeros(L) for _codes, L in groups]
    tau2 = [float(scale0**2)] * n_groups
    sigma2 = float(np.var(y)) or 1.0
    beta = np.zeros(q)
    total_re = np.zeros(n)
    draws = []
    for it in range(n_burn + n_keep):
        resid = y - total_re
        mean = np.linalg.solve(ftf, F.T @ resid)
        z = rng.standard_normal(q)
        beta = mean + math.sqrt(sigma2) * solve_triangular(chol.T, z)
        fit_f = F @ beta
        for g, (codes, L) in enumerate(groups):
            resid_g = y - fit_f - total_re + effects[g][codes]
            n_l = np.bincount(codes, minlength=L)
            s_l = np.bincount(codes, weights=resid_g, minlength=L)
            t2 = fixed_tau2 if fixed_tau2 is not None else tau2[g]
            var_l = 1.0 / (n_l / sigma2 + 1.0 / t2)
            mean_l = var_l * s_l / sigma2
            new = mean_l + np.sqrt(var_l) * rng.standard_normal(L)
            total_re += new[codes] - effects[g][codes]
            effects[g] = new
            if fixed_tau2 is None:
                a = 0.5 * (1.0 + L)
                b = 0.5 * (scale0**2 + float(new @ new))
                tau2[g] = b / rng.gamma(a)
        resid = y - fit_f - total_re
        sigma2 = (float(resid @ resid) / 2.0 + 1e-300) / rng.gamma(n / 2.0)
        if it >= n_burn:
            draws.append((beta.copy(), [e.copy() for e in effects], sigma2))
    return draws


def _mrp_design(frame, spec, rows, y0=None):
    names = frame.schema.covariates[0]
    fixed_idx = [names.index(c) for c in spec.fixed]
    F = [np.ones((len(rows), 1))]
    if fixed_idx:
        F.append(frame.covariates[0][rows][:, fixed_idx])
    if y0 is not None:
        F.append(np.asarray(y0)[:, None])
    return np.column_stack(F)


def mrp_estimate(
    population: PopulationFrame,
    cohort: CohortFrame,
    spec: MrpSpec,
    t: int,
    n_draws: int = 500,
    n_burn: int = 500,
    seed: int = 0,
    fixed_tau2: float | None = None,
):
    """Two-stage hierarchical model with unit-level poststratification.

    A wave-0 model imputes the baseline outcome for every population unit;
    the wave-t model (binary fixed effects, imputed baseline outcome as a
    fixed effect, quartile-binned random effects) predicts every unit, and
    the estimate averages over wave-t survivors.  Random-effect levels
    present in the population but empty in the sample predict from the
    fixed part alone (effect 0) and are logged.
    """
    names = cohort.schema.covariates[0]
    rnd_idx = [names.index(c) for c in spec.random]
    rows0 = np.flatnonzero(responders_at(cohort, 0))
    rows_t = np.flatnonzero(responders_at(cohort, t))
    if rows_t.size == 0:
        raise EstimationError(f"no responders at wave {t}")

    edges = [_bin_edges(cohort.covariates[0][rows0][:, j]) for j in rnd_idx]

    def group_codes(frame, rows):
        values = frame.covariates[0][rows]
        out = []
        for j, col in enumerate(rnd_idx):
            codes = _bin_values(values[:, col], edges[j], spec.zero_category)
            out.append((codes, 5 if spec.zero_category else 4))
        return out

    y0_s = cohort.outcome[rows0, 0]
    scale0 = (float(np.max(y0_s)) - float(np.min(y0_s))) / 2.0 or 1.0
    rng_a = substream(seed, "mrp-stage0")
    groups0 = group_codes(cohort, rows0)
    f0 = _mrp_design(cohort, spec, rows0)
    draws0 = _hier_gibbs(f0, groups0, y0_s, n_burn, n_draws, scale0, rng_a, fixed_tau2)

    y_t = cohort.outcome[rows_t, t]
    rng_b = substream(seed, "mrp-stage1")
    groups_t = group_codes(cohort, rows_t)
    f_t = _mrp_design(cohort, spec, rows_t, y0=cohort.outcome[rows_t, 0])
    scale_t = (float(np.max(y_t)) - float(np.min(y_t))) / 2.0 or 1.0
    draws_t = _hier_gibbs(f_t, groups_t, y_t, n_burn, n_draws, scale_t, rng_b, fixed_tau2)

    # population-side codes; levels unseen in the sample predict as 0
    pop_rows = np.arange(population.n_units)
    pop_groups = group_codes(population, pop_rows)
    for g, (codes, L) in enumerate(pop_groups):
        seen0 = np.bincount(groups0[g][0], minlength=L) > 0
        unseen = np.unique(codes[~seen0[codes]])
        if unseen.size:
            log.info("mrp: random-effect group %d levels %s unseen in sample; using 0",
                     g, unseen.tolist())

    surv = population.alive[:, t] == 1
    if not surv.any():
        raise EstimationError(f"no survivors at wave {t}")
    rng_n = substream(seed, "mrp-noise")
    out = np.empty(n_draws)
    for d in range(n_draws):
        beta0, eff0, sig0 = draws0[d]
        pred0 = _mrp_design(population, spec, pop_rows) @ beta0
        for g, (codes, L) in enumerate(pop_groups):
            seen = np.bincount(groups0[g][0], minlength=L) > 0
            vals = np.where(seen, eff0[g], 0.0)
            pred0 += vals[codes]
        y0_pop = pred0 + math.sqrt(sig0) * rng_n.standard_normal(population.n_units)

        beta1, eff1, _sig1 = draws_t[d]
        pred1 = _mrp_design(population, spec, pop_rows, y0=y0_pop) @ beta1
        for g, (codes, L) in enumerate(pop_groups):
            seen = np.bincount(groups_t[g][0], minlength=L) > 0
            vals = np.where(seen, eff1[g], 0.0)
            pred1 += vals[codes]
        out[d] = math.fsum(pred1[surv]) / surv.sum()

    from .metrics import credible_interval

    lo, hi = credible_interval(out)
    return float(out.mean()), lo, hi


# ---------------------------------------------------------------------------
# unadjusted baseline
# ---------------------------------------------------------------------------


def sample_mean_estimate(cohort: CohortFrame, t: int):
    """Responder mean with a normal-theory interval; no adjustment at all."""
    resp = np.flatnonzero(responders_at(cohort, t))
    if resp.size == 0:
        raise EstimationError(f"no responders at wave {t}")
    y = cohort.outcome[resp, t]
    point = float(y.mean())
    se = float(np.std(y, ddof=1)) / math.sqrt(len(y)) if len(y) > 1 else 0.0
    return point, point - _Z95 * se, point + _Z95 * se
