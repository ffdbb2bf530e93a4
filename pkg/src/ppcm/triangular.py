"""Triangular priors for the dropout and practice-effect offsets.

Two per-wave sensitivity offsets index departures from the default
assumptions: a signed additive offset applied to non-responders' outcomes
(negative values mean dropouts perform worse) and a practice-effect offset
subtracted from every post-baseline prediction.  Each offset gets a
triangular prior whose min/mode/max may be constants or quadratics in age.

Sign conventions.  Configurations that bound a *decline after dropout* plug
in directly as negative dropout bounds, e.g. ``Tri(L(age), L(age), 0)`` with
L < 0.  A notation where a positive parameter is *subtracted* from dropouts
corresponds to the negated offset here.  The practice-effect offset is
positive when observed scores overstate true performance, typically
``Tri(0, B, B)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import substream

Bound = float | tuple[float, float, float]


def _as_bound(value) -> Bound:
    if isinstance(value, (int, float)):
        return float(value)
    coeffs = tuple(float(c) for c in value)
    if len(coeffs) != 3:
        raise ConfigError(f"quadratic bound needs 3 coefficients, got {len(coeffs)}")
    return coeffs


def _bound_at(bound: Bound, age) -> np.ndarray | float:
    if isinstance(bound, float):
        return bound if np.isscalar(age) else np.full(np.shape(age), bound)
    c0, c1, c2 = bound
    return c0 + c1 * np.asarray(age, dtype=float) + c2 * np.asarray(age, dtype=float) ** 2


@dataclass(frozen=True)
class TriangularPrior:
    """A Tri(min, mode, max) prior; each bound constant or quadratic in age.

    Quadratic bounds are coefficient triples (c0, c1, c2) evaluated as
    c0 + c1*age + c2*age**2.  The degenerate prior (0, 0, 0) yields the
    constant 0.
    """

    minimum: Bound = 0.0
    mode: Bound = 0.0
    maximum: Bound = 0.0

    def __post_init__(self):
        object.__setattr__(self, "minimum", _as_bound(self.minimum))
        object.__setattr__(self, "mode", _as_bound(self.mode))
        object.__setattr__(self, "maximum", _as_bound(self.maximum))

    @property
    def age_dependent(self) -> bool:
        return any(isinstance(b, tuple) for b in (self.minimum, self.mode, self.maximum))

    @property
    def is_zero(self) -> bool:
        return self.minimum == 0.0 and self.mode == 0.0 and self.maximum == 0.0

    def to_dict(self) -> dict:
        def enc(b):
            return list(b) if isinstance(b, tuple) else b

        return {"min": enc(self.minimum), "mode": enc(self.mode), "max": enc(self.maximum)}

    @classmethod
    def from_dict(cls, data: dict) -> "TriangularPrior":
        return cls(
            minimum=data.get("min", 0.0),
            mode=data.get("mode", 0.0),
            maximum=data.get("max", 0.0),
        )


def eval_bound(prior: TriangularPrior, age, scale: float = 1.0):
    """Evaluate (min, mode, max) at `age`, scaled by `scale`.

    Raises ConfigError if the evaluated bounds violate min <= mode <= max.
    Accepts scalar or array ages; returns matching shapes.
    """
    lo = np.asarray(_bound_at(prior.minimum, age), dtype=float) * scale
    mo = np.asarray(_bound_at(prior.mode, age), dtype=float) * scale
    hi = np.asarray(_bound_at(prior.maximum, age), dtype=float) * scale
    bad = (lo > mo + 1e-12) | (mo > hi + 1e-12)
    if bad.any():
        a = np.asarray(age)[bad].flat[0] if np.ndim(age) else age
        raise ConfigError(
            f"triangular bounds violate min <= mode <= max at age {a}: "
            f"({lo[bad].flat[0] if np.ndim(lo) else lo}, "
            f"{mo[bad].flat[0] if np.ndim(mo) else mo}, "
            f"{hi[bad].flat[0] if np.ndim(hi) else hi})"
        )
    if np.isscalar(age):
        return float(lo), float(mo), float(hi)
    return lo, mo, hi


def triangular_ppf(u, lo, mode, hi):
    """Inverse CDF of Tri(lo, mode, hi), vectorized and monotone in bounds."""
    u = np.asarray(u, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), u.shape)
    mode = np.broadcast_to(np.asarray(mode, dtype=float), u.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), u.shape)
    width = hi - lo
    out = np.where(width <= 0, lo, 0.0)
    ok = width > 0
    if np.any(ok):
        fc = np.divide(mode - lo, width, out=np.zeros_like(u), where=ok)
        rising = ok & (u <= fc)
        falling = ok & ~rising
        out = np.where(
            rising,
            lo + np.sqrt(np.maximum(u * width * (mode - lo), 0.0)),
            out,
        )
        out = np.where(
            falling,
            hi - np.sqrt(np.maximum((1.0 - u) * width * (hi - mode), 0.0)),
            out,
        )
    return out


def triangular_mean(lo, mode, hi):
    return (lo + mode + hi) / 3.0


def triangular_var(lo, mode, hi):
    return (lo**2 + mode**2 + hi**2 - lo * mode - lo * hi - mode * hi) / 18.0


@dataclass(frozen=True)
class SensitivityConfig:
    """Per-wave priors for the dropout and practice-effect offsets.

    ``gamma`` and ``delta`` each hold one prior per post-baseline wave
    t = 1..T.  ``scale_k`` multiplies every evaluated bound, supporting
    sweeps over prior width.  All-(0,0,0) priors recover the default
    analysis with no adjustment.
    """

    gamma: tuple[TriangularPrior, ...]
    delta: tuple[TriangularPrior, ...]
    scale_k: float = 1.0

    def __post_init__(self):
        if self.scale_k < 0:
            raise ConfigError(f"scale_k must be >= 0, got {self.scale_k}")
        if len(self.gamma) != len(self.delta):
            raise ConfigError("gamma and delta must cover the same waves")

    @property
    def n_post_waves(self) -> int:
        return len(self.gamma)

    @property
    def gamma_is_zero(self) -> bool:
        return self.scale_k == 0 or all(p.is_zero for p in self.gamma)

    @property
    def delta_is_zero(self) -> bool:
        return self.scale_k == 0 or all(p.is_zero for p in self.delta)

    @property
    def age_dependent(self) -> bool:
        return any(p.age_dependent for p in self.gamma + self.delta)

    @classmethod
    def zeros(cls, n_post_waves: int) -> "SensitivityConfig":
        zero = TriangularPrior()
        return cls(gamma=(zero,) * n_post_waves, delta=(zero,) * n_post_waves)

    def with_scale(self, scale_k: float) -> "SensitivityConfig":
        return SensitivityConfig(gamma=self.gamma, delta=self.delta, scale_k=scale_k)

    def with_zero_gamma(self) -> "SensitivityConfig":
        zero = (TriangularPrior(),) * self.n_post_waves
        return SensitivityConfig(gamma=zero, delta=self.delta, scale_k=self.scale_k)

    def with_zero_delta(self) -> "SensitivityConfig":
        zero = (TriangularPrior(),) * self.n_post_waves
        return SensitivityConfig(gamma=self.gamma, delta=zero, scale_k=self.scale_k)

    def to_dict(self) -> dict:
        return {
            "scale_k": self.scale_k,
            "gamma": [p.to_dict() for p in self.gamma],
            "delta": [p.to_dict() for p in self.delta],
        }

    @classmethod
    def from_dict(cls, data: dict, n_post_waves: int | None = None) -> "SensitivityConfig":
        gamma = [TriangularPrior.from_dict(d) for d in data.get("gamma", [])]
        delta = [TriangularPrior.from_dict(d) for d in data.get("delta", [])]
        n = n_post_waves or max(len(gamma), len(delta), 1)
        zero = TriangularPrior()
        gamma += [zero] * (n - len(gamma))
        delta += [zero] * (n - len(delta))
        if len(gamma) != n or len(delta) != n:
            raise ConfigError(
                f"sensitivity file declares more waves than the data has ({n} post-baseline)"
            )
        return cls(gamma=tuple(gamma), delta=tuple(delta), scale_k=float(data.get("scale_k", 1.0)))

    @classmethod
    def from_json(cls, path, n_post_waves: int | None = None) -> "SensitivityConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), n_post_waves)


def sample_sensitivity(cfg: SensitivityConfig, population, seed: int):
    """Draw one (gamma, delta) offset per unit and post-baseline wave.

    Returns two (N, T+1) arrays whose wave-0 column is identically 0 (no
    offsets at baseline).  Draws are by inverse CDF from fixed-shape uniform
    streams, so two configs with pointwise-ordered bounds produce pointwise
    ordered draws under the same seed.  Dead units receive 0.

    Raises ConfigError if an age-dependent prior meets a unit alive at the
    wave without an age value.
    """
    n, w = population.n_units, population.n_waves
    if cfg.n_post_waves != w - 1:
        raise ConfigError(
            f"sensitivity config covers {cfg.n_post_waves} waves, data has {w - 1} post-baseline"
        )
    gamma = np.zeros((n, w))
    delta = np.zeros((n, w))
    rng_g = substream(seed, "sens-gamma")
    rng_d = substream(seed, "sens-delta")
    for t in range(1, w):
        u_g = rng_g.random(n)
        u_d = rng_d.random(n)
        alive = population.alive[:, t] == 1
        gamma[:, t] = _draw_wave(cfg.gamma[t - 1], cfg.scale_k, u_g, population, t, alive)
        delta[:, t] = _draw_wave(cfg.delta[t - 1], cfg.scale_k, u_d, population, t, alive)
        gamma[~alive, t] = 0.0
        delta[~alive, t] = 0.0
    return gamma, delta


def _draw_wave(prior, scale_k, u, population, t, alive):
    if prior.is_zero or scale_k == 0:
        return np.zeros_like(u)
    if prior.age_dependent:
        if population.age is None:
            raise ConfigError(f"age-dependent prior at wave {t} but frame has no ages")
        age = population.age[:, t]
        if np.isnan(age[alive]).any():
            missing = population.unit_ids[alive][np.isnan(age[alive])][0]
            raise ConfigError(
                f"age missing for unit {missing} alive at wave {t} with age-dependent prior"
            )
        age = np.where(np.isnan(age), 0.0, age)  # dead rows; draws discarded
        try:
            lo, mo, hi = eval_bound(prior, age[alive], scale=scale_k)
        except ConfigError as exc:
            raise ConfigError(f"wave {t}: {exc}") from exc
        full_lo = np.zeros_like(u)
        full_mo = np.zeros_like(u)
        full_hi = np.zeros_like(u)
        full_lo[alive], full_mo[alive], full_hi[alive] = lo, mo, hi
        return triangular_ppf(u, full_lo, full_mo, full_hi)
    lo, mo, hi = eval_bound(prior, 0.0, scale=scale_k)
    return triangular_ppf(u, lo, mo, hi)
