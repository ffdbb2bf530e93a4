"""Population partly conditional mean estimation for longitudinal data.

A Bayesian semi-parametric estimator of the finite-population mean of a
longitudinal outcome among units alive at each wave, for two-source data
(a sampled cohort with monotone dropout plus full-population auxiliary
registers), with sensitivity parameters for non-ignorable dropout and
practice effects, competitor estimators, scenario generators, and a
replication harness.
"""

__version__ = "0.1.0"

from . import bart, competitors, metrics, simgen, study
from .errors import (
    ConfigError,
    DegenerateDataError,
    EstimationError,
    InvariantError,
    ParseError,
    PpcmError,
    SchemaError,
)
from .estimator import (
    IMMORTAL,
    MORTAL,
    FittedModels,
    ForwardResult,
    PpcmOptions,
    PpcmPosterior,
    estimate_ppcm,
    estimate_ppcm_immortal,
    fit_ppcm_models,
    impute_forward,
    posterior_from_fits,
    ppcm_at_wave,
    ppcm_by_age,
)
from .frames import (
    CohortFrame,
    PopulationFrame,
    WaveSchema,
    load_cohort,
    load_population,
    responders_at,
    write_cohort,
    write_population,
)
from .metrics import (
    ReplicateResult,
    SummaryRow,
    SummaryTable,
    credible_interval,
    run_study,
    summarize,
)
from .simgen import ScenarioSpec, SimReplicate, gen_replicate, sample_skew_normal
from .triangular import (
    SensitivityConfig,
    TriangularPrior,
    eval_bound,
    sample_sensitivity,
    triangular_mean,
    triangular_ppf,
    triangular_var,
)

__all__ = [
    "__version__",
    "bart",
    "competitors",
    "metrics",
    "simgen",
    "study",
    "ConfigError",
    "DegenerateDataError",
    "EstimationError",
    "InvariantError",
    "ParseError",
    "PpcmError",
    "SchemaError",
    "IMMORTAL",
    "MORTAL",
    "FittedModels",
    "ForwardResult",
    "PpcmOptions",
    "PpcmPosterior",
    "estimate_ppcm",
    "estimate_ppcm_immortal",
    "fit_ppcm_models",
    "impute_forward",
    "posterior_from_fits",
    "ppcm_at_wave",
    "ppcm_by_age",
    "CohortFrame",
    "PopulationFrame",
    "WaveSchema",
    "load_cohort",
    "load_population",
    "responders_at",
    "write_cohort",
    "write_population",
    "ReplicateResult",
    "SummaryRow",
    "SummaryTable",
    "credible_interval",
    "run_study",
    "summarize",
    "ScenarioSpec",
    "SimReplicate",
    "gen_replicate",
    "sample_skew_normal",
    "SensitivityConfig",
    "TriangularPrior",
    "eval_bound",
    "sample_sensitivity",
    "triangular_mean",
    "triangular_ppf",
    "triangular_var",
]
