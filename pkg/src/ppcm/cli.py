"""Command-line surface.

Four commands: ``simulate`` (replication studies), ``ppcm`` (estimate on
data files), ``sensitivity`` (the standard sensitivity settings plus the
immortal-cohort contrast under one shared set of model fits), and
``compare`` (the semi-parametric estimator against the competitors on the
same data).  Every run writes a ``manifest.json`` recording the resolved
configuration, seed, and package version; outputs are byte-identical given
identical inputs, flags, and seed.

Exit codes: 0 success, 1 runtime/estimation failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, competitors, metrics, study
from .bart import BartConfig
from .errors import ConfigError, PpcmError
from .estimator import (
    IMMORTAL,
    MORTAL,
    PpcmOptions,
    estimate_ppcm_immortal,
    fit_ppcm_models,
    posterior_from_fits,
)
from .frames import WaveSchema, load_cohort, load_population, write_cohort, write_population
from .rng import derive_seed
from .simgen import ScenarioSpec, gen_replicate
from .triangular import SensitivityConfig

SENSITIVITY_SETTINGS = ("mars_pe", "mnars_nope", "doubled", "mars_nope")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override file values")
    p.add_argument("--seed", type=int, help="global seed (env PPCM_SEED as fallback)")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--threads", type=int, help="worker-pool cap for parallel stages")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--population", help="population CSV file")
    p.add_argument("--cohort", help="cohort CSV file")
    p.add_argument("--schema", help="wave schema JSON file")
    p.add_argument("--age-grid", help="age grid as lo:hi:step")


def _add_bart_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", type=int, help="trees per continuous forest")
    p.add_argument("--burn", type=int, help="burn-in iterations")
    p.add_argument("--keep", type=int, help="retained iterations")
    p.add_argument("--draws", type=int, help="retained posterior draws of the estimand")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppcm",
        description="Population partly conditional mean estimation and replication",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario replication study")
    p_sim.add_argument("--scenario", type=int, help="scenario id 1..5")
    p_sim.add_argument("--reps", type=int, help="number of replicates")
    p_sim.add_argument("--estimators", help="comma-separated estimator names")
    p_sim.add_argument("--population-size", type=int, help="population size N")
    p_sim.add_argument("--sample-size", type=int, help="target sample size n")
    p_sim.add_argument("--write-data", action="store_true",
                       help="also write each replicate's population/cohort CSVs")
    _add_bart_flags(p_sim)
    _add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_ppcm = sub.add_parser("ppcm", help="estimate the PPCM from data files")
    _add_data_flags(p_ppcm)
    p_ppcm.add_argument("--sensitivity", help="sensitivity configuration JSON")
    p_ppcm.add_argument("--scale-k", type=float, help="multiplier on all prior bounds")
    p_ppcm.add_argument("--mode", choices=(MORTAL, IMMORTAL), help="cohort mode")
    _add_bart_flags(p_ppcm)
    _add_common(p_ppcm)
    p_ppcm.set_defaults(func=cmd_ppcm)

    p_sens = sub.add_parser(
        "sensitivity", help="standard sensitivity settings plus the immortal contrast"
    )
    _add_data_flags(p_sens)
    p_sens.add_argument("--sensitivity", help="main-analysis sensitivity JSON (required)")
    p_sens.add_argument("--scale-k", type=float, help="multiplier on all prior bounds")
    _add_bart_flags(p_sens)
    _add_common(p_sens)
    p_sens.set_defaults(func=cmd_sensitivity)

    p_cmp = sub.add_parser("compare", help="compare estimators on the same data")
    _add_data_flags(p_cmp)
    p_cmp.add_argument("--estimators", help="comma-separated estimator names")
    _add_bart_flags(p_cmp)
    _add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


class _Resolver:
    """Flag > config file > environment/default precedence."""

    def __init__(self, args):
        self.args = vars(args)
        self.file = {}
        if self.args.get("config"):
            with open(self.args["config"], "r", encoding="utf-8") as fh:
                self.file = json.load(fh)
        self.resolved: dict = {}

    def get(self, key: str, default=None, required: bool = False):
        flag = self.args.get(key.replace("-", "_"))
        value = flag if flag not in (None, False) else self.file.get(key, default)
        if value in (None, False) and default is not None:
            value = default
        if required and value in (None, ""):
            raise ConfigError(f"missing required option --{key}")
        self.resolved[key] = value
        return value

    def seed(self) -> int:
        flag = self.args.get("seed")
        if flag is not None:
            value = int(flag)
        elif "seed" in self.file:
            value = int(self.file["seed"])
        else:
            value = int(os.environ.get("PPCM_SEED", "0"))
        self.resolved["seed"] = value
        return value


def _out_dir(resolver) -> Path:
    out = Path(resolver.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, resolver) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "options": {k: v for k, v in sorted(resolver.resolved.items())},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _bart_configs(resolver) -> tuple[BartConfig, BartConfig, int]:
    trees = int(resolver.get("trees", 100))
    burn = int(resolver.get("burn", 500))
    keep = int(resolver.get("keep", 500))
    draws = int(resolver.get("draws", keep))
    if draws > keep:
        raise ConfigError(f"--draws {draws} exceeds retained iterations {keep}")
    outcome = BartConfig(n_trees=trees, n_burn=burn, n_keep=keep)
    response = BartConfig(n_trees=max(trees // 2, 1), n_burn=burn, n_keep=keep)
    return outcome, response, draws


def _parse_age_grid(text: str | None) -> np.ndarray | None:
    if not text:
        return None
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError("--age-grid must be lo:hi:step")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ConfigError("--age-grid must satisfy lo <= hi and step > 0")
    return np.arange(lo, hi + step / 2.0, step)


def _load_frames(resolver):
    schema_path = resolver.get("schema", required=True)
    with open(schema_path, "r", encoding="utf-8") as fh:
        schema = WaveSchema.from_dict(json.load(fh))
    population = load_population(resolver.get("population", required=True), schema)
    cohort = load_cohort(resolver.get("cohort", required=True), schema)
    return population, cohort


def _load_sensitivity(resolver, n_post_waves: int) -> SensitivityConfig | None:
    path = resolver.get("sensitivity")
    scale = resolver.get("scale-k")
    cfg = None
    if path:
        cfg = SensitivityConfig.from_json(path, n_post_waves)
    if scale is not None:
        cfg = (cfg or SensitivityConfig.zeros(n_post_waves)).with_scale(float(scale))
    return cfg


def _posterior_frames(post):
    draws = pd.DataFrame(post.draw_rows(), columns=["draw", "wave_or_age", "value"])
    summary = pd.DataFrame(post.targets(), columns=["target", "point", "lo95", "hi95"])
    return draws, summary


def cmd_simulate(args) -> int:
    resolver = _Resolver(args)
    scenario = resolver.get("scenario", required=True)
    reps = int(resolver.get("reps", required=True))
    names = resolver.get("estimators", required=True)
    estimators = [n.strip() for n in str(names).split(",") if n.strip()]
    seed = resolver.seed()
    n_pop = int(resolver.get("population-size", 10_000))
    n_sam = int(resolver.get("sample-size", 1_000))
    threads = resolver.get("threads")
    outcome_cfg, response_cfg, draws = _bart_configs(resolver)
    out = _out_dir(resolver)

    spec = ScenarioSpec(scenario=int(scenario), n_population=n_pop, n_sample=n_sam, seed=seed)
    settings = study.StudySettings(
        bart_outcome=outcome_cfg, bart_response=response_cfg, n_posterior=draws,
        lm_draws=draws, mrp_draws=draws,
    )
    results = metrics.run_study(
        spec,
        estimators,
        reps,
        seed=seed,
        n_workers=int(threads) if threads else None,
        settings=settings,
    )
    table = metrics.summarize(results)

    rows = [
        {
            "scenario": int(scenario),
            "estimator": r.estimator,
            "bias_x100": 100.0 * r.bias,
            "sd_x100": 100.0 * r.sd if r.sd is not None else "",
            "mse": r.mse,
            "cp_pct": r.cp if r.cp is not None else "",
        }
        for r in table.rows
    ]
    pd.DataFrame(rows).to_csv(out / "summary.csv", index=False)
    pd.DataFrame(
        [
            {
                "replicate": r.replicate,
                "estimator": r.estimator,
                "point": r.point,
                "lo95": r.lo,
                "hi95": r.hi,
                "truth": r.truth,
                "error": r.error or "",
            }
            for r in results
        ]
    ).to_csv(out / "results.csv", index=False)

    if resolver.get("write-data", False):
        data_dir = out / "data"
        data_dir.mkdir(exist_ok=True)
        for r in range(reps):
            rep_spec = ScenarioSpec(
                scenario=int(scenario), n_population=n_pop, n_sample=n_sam,
                seed=derive_seed(seed, "replicate", r),
            )
            rep = gen_replicate(rep_spec)
            write_population(rep.population, data_dir / f"rep{r:04d}_population.csv")
            write_cohort(rep.cohort, data_dir / f"rep{r:04d}_cohort.csv")

    _write_manifest(out, "simulate", resolver)
    return 0


def cmd_ppcm(args) -> int:
    resolver = _Resolver(args)
    seed = resolver.seed()
    population, cohort = _load_frames(resolver)
    mode = resolver.get("mode", MORTAL)
    grid = _parse_age_grid(resolver.get("age-grid"))
    outcome_cfg, response_cfg, draws = _bart_configs(resolver)
    sens = _load_sensitivity(resolver, population.n_waves - 1)
    out = _out_dir(resolver)

    options = PpcmOptions(n_posterior=draws, age_grid=grid, seed=seed)
    if mode == IMMORTAL:
        post = estimate_ppcm_immortal(population, cohort, outcome_cfg, options)
    else:
        needs_response = sens is not None and not sens.gamma_is_zero
        fits = fit_ppcm_models(
            cohort, outcome_cfg, response_cfg, mode=MORTAL, seed=seed,
            fit_response=needs_response,
        )
        post = posterior_from_fits(population, fits, sens, options)

    draws_df, summary_df = _posterior_frames(post)
    draws_df.to_csv(out / "draws.csv", index=False)
    summary_df.to_csv(out / "summary.csv", index=False)
    _write_manifest(out, "ppcm", resolver)
    return 0


def cmd_sensitivity(args) -> int:
    resolver = _Resolver(args)
    seed = resolver.seed()
    population, cohort = _load_frames(resolver)
    grid = _parse_age_grid(resolver.get("age-grid"))
    outcome_cfg, response_cfg, draws = _bart_configs(resolver)
    main = _load_sensitivity(resolver, population.n_waves - 1)
    if main is None:
        raise ConfigError("--sensitivity is required for the sensitivity command")
    out = _out_dir(resolver)
    options = PpcmOptions(n_posterior=draws, age_grid=grid, seed=seed)

    variants = {
        "mars_pe": main.with_zero_gamma(),
        "mnars_nope": main.with_zero_delta(),
        "doubled": main.with_scale(main.scale_k * 2.0),
        "mars_nope": SensitivityConfig.zeros(population.n_waves - 1),
    }
    needs_response = any(not v.gamma_is_zero for v in variants.values())
    fits = fit_ppcm_models(
        cohort, outcome_cfg, response_cfg, mode=MORTAL, seed=seed,
        fit_response=needs_response,
    )
    combined = []
    for name in SENSITIVITY_SETTINGS:
        post = posterior_from_fits(population, fits, variants[name], options)
        _, summary_df = _posterior_frames(post)
        summary_df.to_csv(out / f"curve_{name}.csv", index=False)
        for target, point, lo, hi in post.targets():
            combined.append((name, target, point, lo, hi))

    post_imm = estimate_ppcm_immortal(population, cohort, outcome_cfg, options)
    _, summary_df = _posterior_frames(post_imm)
    summary_df.to_csv(out / "curve_immortal.csv", index=False)
    for target, point, lo, hi in post_imm.targets():
        combined.append(("immortal", target, point, lo, hi))

    pd.DataFrame(combined, columns=["setting", "target", "point", "lo95", "hi95"]).to_csv(
        out / "combined.csv", index=False
    )
    _write_manifest(out, "sensitivity", resolver)
    return 0


def cmd_compare(args) -> int:
    resolver = _Resolver(args)
    seed = resolver.seed()
    population, cohort = _load_frames(resolver)
    grid = _parse_age_grid(resolver.get("age-grid"))
    outcome_cfg, response_cfg, draws = _bart_configs(resolver)
    names = resolver.get("estimators", required=True)
    requested = [n.strip() for n in str(names).split(",") if n.strip()]
    valid = ("mb-sp", "mb-lm", "ht", "greg", "mrp", "sample")
    for name in requested:
        if name not in valid:
            raise ConfigError(f"unknown estimator {name!r}; valid names: {', '.join(valid)}")
    out = _out_dir(resolver)
    t = population.n_waves - 1
    options = PpcmOptions(n_posterior=draws, age_grid=grid, seed=seed)

    rows = []
    shared: dict = {}

    def weighting_ctx():
        if "cells" not in shared:
            baseline = cohort.schema.covariates[0]
            shared["cells"] = competitors.build_cells(population, cohort, baseline)
            shared["participation"] = competitors.fit_participation_models(cohort, t)
        return shared["cells"], shared["participation"]

    for name in requested:
        if name == "mb-sp":
            fits = fit_ppcm_models(
                cohort, outcome_cfg, response_cfg, mode=MORTAL,
                seed=derive_seed(seed, "mb-sp"), fit_response=False,
            )
            post = posterior_from_fits(population, fits, None, options)
            for target, point, lo, hi in post.targets():
                rows.append((name, target, point, lo, hi))
            continue
        if name == "mb-lm":
            point, lo, hi = competitors.mblm_ppcm(
                population, cohort, t, n_draws=draws, seed=derive_seed(seed, "mb-lm")
            )
        elif name == "ht":
            cells, probs = weighting_ctx()
            point, lo, hi = competitors.ht_estimate(population, cohort, cells, probs, t)
        elif name == "greg":
            cells, probs = weighting_ctx()
            point, lo, hi = competitors.greg_estimate(population, cohort, cells, probs, t)
        elif name == "mrp":
            names0 = cohort.schema.covariates[0]
            binary = [c for c in names0
                      if set(np.unique(cohort.covariates[0][:, names0.index(c)])) <= {0.0, 1.0}]
            spec = competitors.MrpSpec(
                fixed=tuple(binary), random=tuple(c for c in names0 if c not in binary)
            )
            point, lo, hi = competitors.mrp_estimate(
                population, cohort, spec, t, n_draws=draws, seed=derive_seed(seed, "mrp")
            )
        else:  # sample
            point, lo, hi = competitors.sample_mean_estimate(cohort, t)
        rows.append((name, f"wave:{t}", point, lo, hi))

    pd.DataFrame(rows, columns=["estimator", "target", "point", "lo95", "hi95"]).to_csv(
        out / "compare.csv", index=False
    )
    _write_manifest(out, "compare", resolver)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PpcmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
