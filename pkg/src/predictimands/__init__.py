"""Time-to-event risk prediction under four strategies for treatment started
after baseline: ignore-treatment, composite, while-untreated and
hypothetical."""

from . import competing, cox, data, errors, scenarios, simulate, strategies, weights
from .curves import RiskCurve, StepFunction, SurvivalCurve
from .data import (
    CountingProcessDataset,
    CovariateSchema,
    DesignFlavor,
    Episode,
    Status,
    SubjectRecord,
    compose_outcome,
    impute_tv_covariates,
    ingest_csv,
    split_at_treatment,
    write_csv,
)
from .strategies import HypotheticalMethod, Strategy, StrategySpec, estimate, estimate_all

__version__ = "0.1.0"

__all__ = [
    "CountingProcessDataset",
    "CovariateSchema",
    "DesignFlavor",
    "Episode",
    "HypotheticalMethod",
    "RiskCurve",
    "Status",
    "StepFunction",
    "Strategy",
    "StrategySpec",
    "SubjectRecord",
    "SurvivalCurve",
    "competing",
    "compose_outcome",
    "cox",
    "data",
    "errors",
    "estimate",
    "estimate_all",
    "impute_tv_covariates",
    "ingest_csv",
    "scenarios",
    "simulate",
    "split_at_treatment",
    "strategies",
    "weights",
    "write_csv",
]
