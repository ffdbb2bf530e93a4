"""Public fitting surface for the sum-of-trees models.

Continuous fits internally shift and scale the outcome to [-0.5, 0.5] for
the leaf prior; returned forests predict on the original scale, including
the residual-scale draws.  Probit fits model the latent mean around a fixed
offset; predictions are response probabilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import chi2

from ..errors import ConfigError, DegenerateDataError
from ..rng import substream
from . import _fastpred, sampler
from .trees import Tree

CONTINUOUS = "continuous"
PROBIT = "probit"

_FORMAT = "ppcm-ensemble"
_VERSION = 1


@dataclass(frozen=True)
class BartConfig:
    """Sampler settings.

    ``n_trees=None`` resolves to 200 for continuous and 50 for probit fits.
    ``dart_warmup=None`` starts sparsity updates halfway through burn-in.
    The tree prior makes a depth-d node internal with probability
    ``tree_alpha / (1 + d)**tree_beta``; the leaf prior scale is set from
    ``leaf_scale_k`` over the rescaled outcome; the residual-variance prior
    has ``sigma_df`` degrees of freedom anchored so probability
    ``sigma_quantile`` lies below a least-squares residual estimate.
    """

    n_trees: int | None = None
    n_burn: int = 1000
    n_keep: int = 1000
    tree_alpha: float = 0.95
    tree_beta: float = 2.0
    leaf_scale_k: float = 2.0
    sigma_df: float = 3.0
    sigma_quantile: float = 0.9
    dart: bool = True
    dart_a: float = 0.5
    dart_b: float = 1.0
    dart_warmup: int | None = None
    p_grow: float = 0.28
    p_prune: float = 0.28
    p_change: float = 0.44
    min_leaf: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.n_keep < 1:
            raise ConfigError(f"n_keep must be >= 1, got {self.n_keep}")
        if self.n_burn < 0:
            raise ConfigError("n_burn must be >= 0")
        if self.n_trees is not None and self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be >= 1")
        total = self.p_grow + self.p_prune + self.p_change
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"move probabilities must sum to 1, got {total}")
        if not 0.0 < self.tree_alpha < 1.0:
            raise ConfigError("tree_alpha must lie in (0, 1)")
        if self.tree_beta <= 0 or self.leaf_scale_k <= 0 or self.sigma_df <= 0:
            raise ConfigError("tree_beta, leaf_scale_k and sigma_df must be positive")
        if not 0.0 < self.sigma_quantile < 1.0:
            raise ConfigError("sigma_quantile must lie in (0, 1)")

    def resolved_trees(self, kind: str) -> int:
        if self.n_trees is not None:
            return self.n_trees
        return 50 if kind == PROBIT else 200

    def warmup(self) -> int:
        return self.n_burn // 2 if self.dart_warmup is None else self.dart_warmup


@dataclass(frozen=True)
class Forest:
    """One posterior draw: K trees plus scale and sparsity state."""

    trees: tuple[Tree, ...]
    kind: str
    offset: float
    split_probs: np.ndarray
    n_predictors: int
    sigma: float | None = None

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ConfigError("a forest needs at least one tree")
        if self.kind == CONTINUOUS and (self.sigma is None or self.sigma <= 0):
            raise ConfigError("continuous forests need sigma > 0")
        if abs(float(np.sum(self.split_probs)) - 1.0) > 1e-12:
            raise ConfigError("split_probs must sum to 1")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def _packed(self):
        return _fastpred.pack_trees(self.trees)

    def latent(self, X: np.ndarray) -> np.ndarray:
        """Offset plus summed tree output for each row of X."""
        X = np.atleast_2d(np.ascontiguousarray(X, dtype=float))
        if X.shape[1] != self.n_predictors:
            raise ValueError(
                f"x has {X.shape[1]} entries, forest expects {self.n_predictors}"
            )
        out = np.full(X.shape[0], self.offset)
        _fastpred.eval_packed(*self._packed, X, out)
        return out

    def predict(self, x: np.ndarray):
        """Model mean at x: the latent sum, through Phi for probit forests."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        out = self.latent(x)
        if self.kind == PROBIT:
            out = ndtr(out)
        return float(out[0]) if scalar else out


def predict(forest: Forest, x: np.ndarray):
    """Prediction for a single covariate vector or a matrix of rows."""
    return forest.predict(x)


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Retained posterior draws of a fit plus training metadata."""

    draws: tuple[Forest, ...]
    kind: str
    n_predictors: int
    y_center: float = 0.0
    y_scale: float = 1.0

    def __post_init__(self):
        if not self.draws:
            raise ConfigError("an ensemble needs at least one draw")
        for f in self.draws:
            if f.kind != self.kind or f.n_predictors != self.n_predictors:
                raise ConfigError("all draws must share kind and predictor count")
            if f.n_trees != self.draws[0].n_trees:
                raise ConfigError("all draws must share the tree count")

    @property
    def n_draws(self) -> int:
        return len(self.draws)

    def predict_mean(self, X: np.ndarray) -> np.ndarray:
        """Posterior-mean prediction at each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        acc = np.zeros(X.shape[0])
        for forest in self.draws:
            acc += forest.predict(X)
        return acc / self.n_draws

    def split_proportions(self) -> np.ndarray:
        """Share of all decision rules using each predictor, over all draws."""
        counts = np.zeros(self.n_predictors, dtype=np.int64)
        for forest in self.draws:
            for tree in forest.trees:
                counts += tree.split_counts(self.n_predictors)
        total = counts.sum()
        return counts / total if total else np.full(self.n_predictors, 1.0 / self.n_predictors)

    def save(self, path) -> None:
        payload = {
            "format": _FORMAT,
            "version": _VERSION,
            "kind": self.kind,
            "n_predictors": self.n_predictors,
            "y_center": self.y_center,
            "y_scale": self.y_scale,
            "draws": [
                {
                    "offset": f.offset,
                    "sigma": f.sigma,
                    "split_probs": f.split_probs.tolist(),
                    "trees": [t.to_dict() for t in f.trees],
                }
                for f in self.draws
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "PosteriorEnsemble":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != _FORMAT:
            raise ConfigError(f"{path} is not an ensemble file")
        if payload.get("version") != _VERSION:
            raise ConfigError(f"unsupported ensemble version {payload.get('version')}")
        kind = payload["kind"]
        n_pred = payload["n_predictors"]
        draws = tuple(
            Forest(
                trees=tuple(Tree.from_dict(t) for t in d["trees"]),
                kind=kind,
                offset=d["offset"],
                split_probs=np.asarray(d["split_probs"], dtype=float),
                n_predictors=n_pred,
                sigma=d["sigma"],
            )
            for d in payload["draws"]
        )
        return cls(
            draws=draws,
            kind=kind,
            n_predictors=n_pred,
            y_center=payload["y_center"],
            y_scale=payload["y_scale"],
        )


def _check_matrix(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d matrix")
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if n < 2:
        raise ValueError("need at least 2 observations")
    if p < 1:
        raise ValueError("need at least 1 predictor")
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("X and y must not contain missing cells")
    return np.ascontiguousarray(X), y


def _residual_scale_estimate(X, y_scaled):
    """Least-squares residual SD on the scaled outcome, with fallbacks."""
    n, p = X.shape
    if n > p + 1:
        xc = X - X.mean(axis=0)
        yc = y_scaled - y_scaled.mean()
        coef, rss, rank, _ = np.linalg.lstsq(xc, yc, rcond=None)
        dof = n - rank - 1
        if rss.size and dof > 0:
            return max(float(np.sqrt(rss[0] / dof)), 1e-8)
        resid = yc - xc @ coef
        dof = max(dof, 1)
        return max(float(np.sqrt(resid @ resid / dof)), 1e-8)
    return max(float(np.std(y_scaled)), 1e-8)


def fit_continuous(X, y, cfg: BartConfig) -> PosteriorEnsemble:
    """Fit the continuous-outcome model and return retained draws.

    A zero-variance outcome is legal: the fit degenerates to forests that
    predict the constant.
    """
    cfg.validate()
    X, y = _check_matrix(X, y)
    n, p = X.shape
    k_trees = cfg.resolved_trees(CONTINUOUS)

    lo, hi = float(y.min()), float(y.max())
    center = (hi + lo) / 2.0
    scale = hi - lo
    if scale <= 0:
        scale = 1.0
    y_scaled = (y - center) / scale

    sigest = _residual_scale_estimate(X, y_scaled)
    lam = sigest**2 * chi2.ppf(1.0 - cfg.sigma_quantile, cfg.sigma_df) / cfg.sigma_df
    sigma_mu = 0.5 / (cfg.leaf_scale_k * np.sqrt(k_trees))

    params = sampler.ChainParams(
        n_trees=k_trees,
        n_burn=cfg.n_burn,
        n_keep=cfg.n_keep,
        alpha=cfg.tree_alpha,
        beta=cfg.tree_beta,
        tau2=sigma_mu**2,
        nu=cfg.sigma_df,
        lam=lam,
        sigma2_init=sigest**2,
        p_grow=cfg.p_grow,
        p_prune=cfg.p_prune,
        p_change=cfg.p_change,
        min_leaf=cfg.min_leaf,
        dart=cfg.dart,
        dart_a=cfg.dart_a,
        dart_b=cfg.dart_b,
        dart_warmup=cfg.warmup(),
    )
    rng = substream(cfg.seed, "bart-continuous")
    raw = sampler.run_continuous_chain(X, y_scaled, params, rng)
    draws = tuple(
        Forest(
            trees=tuple(_scaled_tree(arrs, scale) for arrs in tree_list),
            kind=CONTINUOUS,
            offset=center,
            split_probs=probs,
            n_predictors=p,
            sigma=float(np.sqrt(sigma2) * scale),
        )
        for tree_list, sigma2, probs in raw
    )
    return PosteriorEnsemble(
        draws=draws, kind=CONTINUOUS, n_predictors=p, y_center=center, y_scale=scale
    )


def fit_probit(X, r, cfg: BartConfig) -> PosteriorEnsemble:
    """Fit the probit response model; forests predict P(r = 1 | x)."""
    cfg.validate()
    X, r = _check_matrix(X, r)
    n, p = X.shape
    if not np.isin(r, (0.0, 1.0)).all():
        raise ValueError("r must be a 0/1 vector")
    rate = float(r.mean())
    if rate in (0.0, 1.0):
        raise DegenerateDataError("r contains a single class; probit fit undefined")
    k_trees = cfg.resolved_trees(PROBIT)
    offset = float(ndtri(np.clip(rate, 1.0 / (n + 1), n / (n + 1.0))))
    sigma_mu = 3.0 / (cfg.leaf_scale_k * np.sqrt(k_trees))

    params = sampler.ChainParams(
        n_trees=k_trees,
        n_burn=cfg.n_burn,
        n_keep=cfg.n_keep,
        alpha=cfg.tree_alpha,
        beta=cfg.tree_beta,
        tau2=sigma_mu**2,
        sigma2_init=1.0,
        p_grow=cfg.p_grow,
        p_prune=cfg.p_prune,
        p_change=cfg.p_change,
        min_leaf=cfg.min_leaf,
        dart=cfg.dart,
        dart_a=cfg.dart_a,
        dart_b=cfg.dart_b,
        dart_warmup=cfg.warmup(),
    )
    rng = substream(cfg.seed, "bart-probit")
    raw = sampler.run_probit_chain(X, r, offset, params, rng)
    draws = tuple(
        Forest(
            trees=tuple(Tree(*arrs) for arrs in tree_list),
            kind=PROBIT,
            offset=offset,
            split_probs=probs,
            n_predictors=p,
        )
        for tree_list, _sigma2, probs in raw
    )
    return PosteriorEnsemble(draws=draws, kind=PROBIT, n_predictors=p)


def _scaled_tree(arrs, scale: float) -> Tree:
    feature, threshold, left, right, value = arrs
    return Tree(feature, threshold, left, right, value * scale)


def with_seed(cfg: BartConfig, seed: int) -> BartConfig:
    """Copy of `cfg` with a replaced stream seed."""
    return replace(cfg, seed=seed)
