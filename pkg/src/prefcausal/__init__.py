"""Bayesian spatial causal inference under preferential sampling."""

from __future__ import annotations

from .errors import (
    ConfigError,
    GeometryError,
    IngestError,
    NumericalError,
    PrefcausalError,
    ValidationError,
)
from .geometry import Domain, GridGeometry, build_grid, pairwise_distances
from .harness import (
    ReplicateResult,
    StudyConfig,
    StudyResult,
    format_table,
    run_study,
    write_manifest,
    write_study_csv,
)
from .mcmc import (
    ChainOutput,
    GewekeResult,
    McmcConfig,
    PriorSpec,
    RangePrior,
    chain_columns,
    geweke_validate,
    run_chain,
    summarize,
    toy_validation_problem,
    write_chain_csv,
)
from .model import (
    CausalSummary,
    CovParams,
    Dataset,
    LatentState,
    ModelParams,
    average_effect,
    empirical_single_cell_moments,
    local_effects,
    log_intensity_mean,
    log_joint,
    log_joint_terms,
    moment_identities,
    outcome_mean,
    propensity,
    read_dataset,
    sampling_bias,
    standardize_covariates,
    write_dataset,
)
from .randfield import (
    CovarianceFactor,
    LmcSpec,
    MaternParams,
    bessel_k,
    build_covariance,
    cholesky_with_jitter,
    derive_stream,
    lmc_compose,
    lmc_cross_moments,
    matern_correlation,
    sample_mvn,
)
from .simgen import (
    SCENARIO_IDS,
    ScenarioSpec,
    SimTruth,
    generate_covariates,
    generate_dataset,
    sample_point_process,
    scenario,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GeometryError",
    "IngestError",
    "NumericalError",
    "PrefcausalError",
    "ValidationError",
    "Domain",
    "GridGeometry",
    "build_grid",
    "pairwise_distances",
    "CovarianceFactor",
    "LmcSpec",
    "MaternParams",
    "bessel_k",
    "build_covariance",
    "cholesky_with_jitter",
    "derive_stream",
    "lmc_compose",
    "lmc_cross_moments",
    "matern_correlation",
    "sample_mvn",
    "CausalSummary",
    "CovParams",
    "Dataset",
    "LatentState",
    "ModelParams",
    "average_effect",
    "empirical_single_cell_moments",
    "local_effects",
    "log_intensity_mean",
    "log_joint",
    "log_joint_terms",
    "moment_identities",
    "outcome_mean",
    "propensity",
    "read_dataset",
    "sampling_bias",
    "standardize_covariates",
    "write_dataset",
    "SCENARIO_IDS",
    "ScenarioSpec",
    "SimTruth",
    "generate_covariates",
    "generate_dataset",
    "sample_point_process",
    "scenario",
    "ChainOutput",
    "GewekeResult",
    "McmcConfig",
    "PriorSpec",
    "RangePrior",
    "chain_columns",
    "geweke_validate",
    "run_chain",
    "summarize",
    "toy_validation_problem",
    "write_chain_csv",
    "ReplicateResult",
    "StudyConfig",
    "StudyResult",
    "format_table",
    "run_study",
    "write_manifest",
    "write_study_csv",
    "__version__",
]
