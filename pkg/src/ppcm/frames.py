"""Longitudinal data containers for the two-source setting.

Two frames describe the data: a :class:`PopulationFrame` holding auxiliary
covariates and survival indicators for every unit of the target population,
and a :class:`CohortFrame` holding, in addition, response indicators and the
observed outcomes for the sampled cohort.  Both are immutable after loading
and validated against a :class:`WaveSchema`.

File format (CSV, UTF-8, header row, long format): one row per (unit, wave)
with columns ``unit_id, wave, alive, responded*, outcome*, age*, <covariate
columns>`` where starred columns apply to cohort files or optional schema
features.  Empty strings denote nulls.  Waves are consecutive integers
starting at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import InvariantError, ParseError, SchemaError

_RESERVED = ("unit_id", "wave", "alive", "responded", "outcome")


@dataclass(frozen=True)
class WaveSchema:
    """Declares the wave layout of a longitudinal data set.

    Args:
        n_waves: number of waves T+1, indexed t = 0..T.
        covariates: per-wave tuples of covariate column names.  Categorical
            covariates must arrive pre-encoded as numeric columns.
        age_column: optional column with age in years at each wave; required
            for age-aggregated estimation and age-dependent priors.

    Death and any analyst-declared truncating event (for example dementia
    onset) are folded into the single ``alive`` indicator by the data
    preparer; the library sees one truncation indicator.
    """

    n_waves: int
    covariates: tuple[tuple[str, ...], ...]
    age_column: str | None = None

    def __post_init__(self):
        if self.n_waves < 1:
            raise SchemaError(f"wave count must be >= 1, got {self.n_waves}")
        covs = tuple(tuple(c) for c in self.covariates)
        object.__setattr__(self, "covariates", covs)
        if len(covs) != self.n_waves:
            raise SchemaError(
                f"covariates lists ({len(covs)}) must match wave count ({self.n_waves})"
            )
        for t, names in enumerate(covs):
            if len(set(names)) != len(names):
                raise SchemaError(f"duplicate covariate names at wave {t}")
            for name in names:
                if name in _RESERVED or name == self.age_column:
                    raise SchemaError(f"covariate name {name!r} is reserved")

    @property
    def n_units_axis(self) -> int:
        return self.n_waves

    def all_covariate_columns(self) -> tuple[str, ...]:
        """Union of covariate columns across waves, in first-seen order."""
        seen: dict[str, None] = {}
        for names in self.covariates:
            for name in names:
                seen.setdefault(name, None)
        return tuple(seen)

    def to_dict(self) -> dict:
        return {
            "waves": self.n_waves,
            "covariates": [list(names) for names in self.covariates],
            "age_column": self.age_column,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WaveSchema":
        try:
            return cls(
                n_waves=int(data["waves"]),
                covariates=tuple(tuple(c) for c in data["covariates"]),
                age_column=data.get("age_column"),
            )
        except KeyError as exc:
            raise SchemaError(f"schema file missing key {exc}") from exc


@dataclass(frozen=True)
class PopulationFrame:
    """Per-unit longitudinal covariates and survival for all N units.

    ``covariates[t]`` is an (N, p_t) float array aligned with
    ``schema.covariates[t]``; cells may be NaN only after death.  ``alive``
    is (N, T+1) with monotone rows starting at 1.
    """

    schema: WaveSchema
    unit_ids: np.ndarray
    alive: np.ndarray
    covariates: tuple[np.ndarray, ...]
    age: np.ndarray | None = None

    def __post_init__(self):
        _validate_common(self, kind="population")

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_waves(self) -> int:
        return self.schema.n_waves

    def survivors_at(self, t: int) -> np.ndarray:
        """Boolean mask of units alive at wave t."""
        _check_wave(self, t)
        return self.alive[:, t] == 1

    def covariate_history(self, t: int) -> tuple[np.ndarray, list[str]]:
        """Stacked covariate values for waves 0..t with qualified names.

        Returns an (N, sum p_k) array and column labels ``name@wave``.
        """
        _check_wave(self, t)
        blocks, names = [], []
        for k in range(t + 1):
            if self.covariates[k].shape[1]:
                blocks.append(self.covariates[k])
                names.extend(f"{c}@{k}" for c in self.schema.covariates[k])
        if not blocks:
            return np.empty((self.n_units, 0)), names
        return np.column_stack(blocks), names


@dataclass(frozen=True)
class CohortFrame:
    """The sampled cohort: response indicators and observed outcomes.

    ``responded`` is (n, T+1) monotone with r=1 at wave 0 and r <= alive.
    ``outcome`` holds the observed score exactly where responded and alive,
    NaN elsewhere.
    """

    schema: WaveSchema
    unit_ids: np.ndarray
    alive: np.ndarray
    covariates: tuple[np.ndarray, ...]
    responded: np.ndarray = field(default=None)  # type: ignore[assignment]
    outcome: np.ndarray = field(default=None)  # type: ignore[assignment]
    age: np.ndarray | None = None

    def __post_init__(self):
        _validate_common(self, kind="cohort")
        r, s, y = self.responded, self.alive, self.outcome
        if r is None or y is None:
            raise SchemaError("cohort frame requires responded and outcome arrays")
        ids = self.unit_ids
        for i in range(len(ids)):
            row = r[i]
            if row[0] != 1:
                raise InvariantError(f"unit {ids[i]}: responded must be 1 at wave 0")
            dropped = False
            for t in range(self.schema.n_waves):
                if row[t] not in (0, 1):
                    raise InvariantError(f"unit {ids[i]}: responded not binary at wave {t}")
                if dropped and row[t] == 1:
                    raise InvariantError(
                        f"unit {ids[i]}: non-monotone response at wave {t}"
                    )
                if row[t] == 0:
                    dropped = True
                if row[t] == 1 and s[i, t] == 0:
                    raise InvariantError(
                        f"unit {ids[i]}: response after truncation at wave {t}"
                    )
                observed = not math.isnan(y[i, t])
                should = row[t] == 1 and s[i, t] == 1
                if should and not observed:
                    raise InvariantError(
                        f"unit {ids[i]}: outcome missing at responded wave {t}"
                    )
                if observed and not should:
                    raise InvariantError(
                        f"unit {ids[i]}: outcome present at non-responded wave {t}"
                    )

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_waves(self) -> int:
        return self.schema.n_waves

    def survivors_at(self, t: int) -> np.ndarray:
        _check_wave(self, t)
        return self.alive[:, t] == 1

    def covariate_history(self, t: int) -> tuple[np.ndarray, list[str]]:
        return PopulationFrame.covariate_history(self, t)  # type: ignore[arg-type]


def responders_at(cohort: CohortFrame, t: int) -> np.ndarray:
    """Boolean mask of units with full response through wave t and alive at t."""
    _check_wave(cohort, t)
    full_response = np.all(cohort.responded[:, : t + 1] == 1, axis=1)
    return full_response & (cohort.alive[:, t] == 1)


def _check_wave(frame, t: int) -> None:
    if not 0 <= t < frame.schema.n_waves:
        raise IndexError(f"wave {t} out of range [0, {frame.schema.n_waves - 1}]")


def _validate_common(frame, kind: str) -> None:
    schema, ids, s = frame.schema, frame.unit_ids, frame.alive
    n, w = len(ids), schema.n_waves
    if len(np.unique(ids)) != n:
        raise InvariantError(f"{kind} frame has duplicate unit ids")
    if s.shape != (n, w):
        raise SchemaError(f"alive array must be shaped ({n}, {w}), got {s.shape}")
    if len(frame.covariates) != w:
        raise SchemaError("covariate blocks must match wave count")
    for t, block in enumerate(frame.covariates):
        expected = (n, len(schema.covariates[t]))
        if block.shape != expected:
            raise SchemaError(
                f"covariate block at wave {t} must be shaped {expected}, got {block.shape}"
            )
    if frame.age is not None and frame.age.shape != (n, w):
        raise SchemaError(f"age array must be shaped ({n}, {w})")

    bad_start = np.flatnonzero(s[:, 0] != 1)
    if bad_start.size:
        raise InvariantError(f"unit {ids[bad_start[0]]}: alive must be 1 at wave 0")
    if not np.isin(s, (0, 1)).all():
        raise InvariantError(f"{kind} frame has non-binary alive values")
    # monotone survival: once 0, always 0
    dead_then_alive = (s[:, :-1] == 0) & (s[:, 1:] == 1)
    rows, cols = np.nonzero(dead_then_alive)
    if rows.size:
        raise InvariantError(
            f"unit {ids[rows[0]]}: non-monotone survival at wave {cols[0] + 1}"
        )
    # covariates must be present while alive
    for t, block in enumerate(frame.covariates):
        if not block.shape[1]:
            continue
        missing = np.isnan(block) & (s[:, t] == 1)[:, None]
        rows, cols = np.nonzero(missing)
        if rows.size:
            col = schema.covariates[t][cols[0]]
            raise SchemaError(
                f"unit {ids[rows[0]]}: missing covariate {col!r} at wave {t} while alive"
            )


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------


def load_population(path, schema: WaveSchema) -> PopulationFrame:
    """Load and validate a population CSV file against `schema`."""
    table = _read_long_csv(path, schema, cohort=False)
    return PopulationFrame(schema=schema, **table)


def load_cohort(path, schema: WaveSchema) -> CohortFrame:
    """Load and validate a cohort CSV file against `schema`."""
    table = _read_long_csv(path, schema, cohort=True)
    return CohortFrame(schema=schema, **table)


def _read_long_csv(path, schema: WaveSchema, cohort: bool) -> dict:
    try:
        df = pd.read_csv(path, dtype={"unit_id": str})
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if df.empty:
        raise ParseError(f"{path} contains no rows")

    required = ["unit_id", "wave", "alive"]
    if cohort:
        required += ["responded", "outcome"]
    if schema.age_column:
        required.append(schema.age_column)
    all_covs = schema.all_covariate_columns()
    for col in list(required) + list(all_covs):
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column {col!r}")

    try:
        df["wave"] = df["wave"].astype(int)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: non-integer wave value ({exc})") from exc

    w = schema.n_waves
    if df["wave"].min() < 0 or df["wave"].max() >= w:
        raise SchemaError(f"{path}: wave indices must lie in 0..{w - 1}")

    # preserve first-appearance order of units so round-trips are stable
    ids = pd.unique(df["unit_id"])
    index = {u: i for i, u in enumerate(ids)}
    n = len(ids)
    counts = df.groupby("unit_id", sort=False)["wave"].agg(["count", "nunique"])
    short = counts[(counts["count"] != w) | (counts["nunique"] != w)]
    if len(short):
        raise ParseError(
            f"{path}: unit {short.index[0]!r} must have exactly one row per wave 0..{w - 1}"
        )

    rows = df["unit_id"].map(index).to_numpy()
    waves = df["wave"].to_numpy()

    def grid(col, dtype=float):
        out = np.full((n, w), np.nan)
        values = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)
        bad = np.isnan(values) & df[col].notna().to_numpy()
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ParseError(f"{path}: malformed value {df[col].iloc[i]!r} in column {col!r}")
        out[rows, waves] = values
        return out

    alive_grid = grid("alive")
    if np.isnan(alive_grid).any():
        i, t = np.argwhere(np.isnan(alive_grid))[0]
        raise SchemaError(f"{path}: unit {ids[i]!r} missing alive value at wave {t}")
    out = {
        "unit_ids": np.asarray(ids, dtype=object),
        "alive": alive_grid.astype(np.int8),
        "covariates": tuple(
            np.column_stack([grid(c)[:, t] for c in schema.covariates[t]])
            if schema.covariates[t]
            else np.empty((n, 0))
            for t in range(w)
        ),
        "age": grid(schema.age_column) if schema.age_column else None,
    }
    if cohort:
        responded = grid("responded")
        if np.isnan(responded).any():
            i, t = np.argwhere(np.isnan(responded))[0]
            raise SchemaError(f"{path}: unit {ids[i]!r} missing responded value at wave {t}")
        out["responded"] = responded.astype(np.int8)
        out["outcome"] = grid("outcome")
    return out


def write_population(frame: PopulationFrame, path) -> None:
    """Write a population frame in the long CSV format."""
    _write_long_csv(frame, path, cohort=False)


def write_cohort(frame: CohortFrame, path) -> None:
    """Write a cohort frame in the long CSV format."""
    _write_long_csv(frame, path, cohort=True)


def _write_long_csv(frame, path, cohort: bool) -> None:
    schema = frame.schema
    n, w = frame.n_units, schema.n_waves
    records: dict[str, list] = {"unit_id": [], "wave": [], "alive": []}
    if cohort:
        records["responded"] = []
        records["outcome"] = []
    if schema.age_column:
        records[schema.age_column] = []
    all_covs = schema.all_covariate_columns()
    for c in all_covs:
        records[c] = []

    for i in range(n):
        for t in range(w):
            records["unit_id"].append(frame.unit_ids[i])
            records["wave"].append(t)
            records["alive"].append(int(frame.alive[i, t]))
            if cohort:
                records["responded"].append(int(frame.responded[i, t]))
                records["outcome"].append(frame.outcome[i, t])
            if schema.age_column:
                records[schema.age_column].append(
                    frame.age[i, t] if frame.age is not None else np.nan
                )
            wave_cols = schema.covariates[t]
            for c in all_covs:
                if c in wave_cols:
                    j = wave_cols.index(c)
                    records[c].append(frame.covariates[t][i, j])
                else:
                    records[c].append(np.nan)
    pd.DataFrame(records).to_csv(path, index=False)
