"""Mixture clustering of variable-length count vectors with penalized
selection of the number of components."""

from .corpus import (
    Corpus,
    Vocabulary,
    dump_bag_of_words,
    load_corpus,
    load_year_sidecar,
    loads_corpus,
    parse_bag_of_words,
    prune_vocabulary,
    save_corpus,
)
from .em import (
    EmConfig,
    FitResult,
    e_step,
    m_step,
    random_init,
    robust_em,
    run_em,
    short_em,
    water_fill_project,
)
from .errors import (
    ConfigError,
    DegenerateFitError,
    DegenerateRegressionError,
    DocmixError,
    EmptyVocabularyError,
    FormatError,
    InfeasibleFloorError,
    InsufficientDataError,
    NumericalError,
    OracleInfeasibleError,
    ParseError,
)
from .mixture import (
    Assignment,
    DocLogJoint,
    IdentifiabilityWarning,
    MixtureModel,
    default_floor,
    doc_log_joint,
    kl_categorical,
    load_model,
    log_likelihood,
    map_assign,
    per_doc_log_density,
    save_model,
    weighted_kl_risk,
)
from .selection import (
    SelectionReport,
    SlopeDiagnostics,
    SweepEntry,
    SweepResult,
    aic_bic,
    load_sweep,
    penalty_rate,
    run_sweep,
    save_sweep,
    select_from_sweep,
    select_model,
    slope_heuristics,
    sweep_from_csv,
    sweep_to_csv,
    theoretical_penalty,
    varying_vocab_penalty,
)
from .synth import (
    EvalReport,
    PlantedCorpus,
    PlantedMixture,
    brute_force_loglik,
    evaluate_run,
    generate_corpus,
    label_agreement,
    planted_mixture,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "ConfigError",
    "Corpus",
    "DegenerateFitError",
    "DegenerateRegressionError",
    "DocLogJoint",
    "DocmixError",
    "EmConfig",
    "EmptyVocabularyError",
    "EvalReport",
    "FitResult",
    "FormatError",
    "IdentifiabilityWarning",
    "InfeasibleFloorError",
    "InsufficientDataError",
    "MixtureModel",
    "NumericalError",
    "OracleInfeasibleError",
    "ParseError",
    "PlantedCorpus",
    "PlantedMixture",
    "SelectionReport",
    "SlopeDiagnostics",
    "SweepEntry",
    "SweepResult",
    "Vocabulary",
    "aic_bic",
    "brute_force_loglik",
    "default_floor",
    "doc_log_joint",
    "dump_bag_of_words",
    "e_step",
    "evaluate_run",
    "generate_corpus",
    "kl_categorical",
    "label_agreement",
    "load_corpus",
    "load_model",
    "load_sweep",
    "load_year_sidecar",
    "loads_corpus",
    "log_likelihood",
    "m_step",
    "map_assign",
    "parse_bag_of_words",
    "penalty_rate",
    "per_doc_log_density",
    "planted_mixture",
    "prune_vocabulary",
    "random_init",
    "robust_em",
    "run_em",
    "run_sweep",
    "save_corpus",
    "save_model",
    "save_sweep",
    "select_from_sweep",
    "select_model",
    "short_em",
    "slope_heuristics",
    "sweep_from_csv",
    "sweep_to_csv",
    "theoretical_penalty",
    "varying_vocab_penalty",
    "water_fill_project",
]
