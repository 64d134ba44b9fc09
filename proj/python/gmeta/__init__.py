"""Generalized meta-analysis of regression summaries with heterogeneous covariate sets."""

from ._gmeta import (
    ConvergenceError,
    CorrelationError,
    DimensionError,
    DispersionError,
    GlmFit,
    GmetaError,
    GmetaFit,
    IdentifiabilityError,
    MetaFit,
    MissingCovarianceError,
    ParseError,
    ReferenceSample,
    SeparationError,
    SingularCovarianceError,
    StudySummary,
    fit_gmeta,
    fit_mle,
    fixed_effect_meta,
    load_reference,
    load_summaries,
    simulate,
    stacked_moment,
)

__version__ = "0.1.0"
