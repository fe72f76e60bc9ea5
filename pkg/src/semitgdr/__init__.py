"""Integrative gene-environment interaction analysis with TGDR and splines."""

from .core_model import (
    CoefficientState,
    DataError,
    DatasetBundle,
    InteractionIndex,
    ModelFamily,
    StudyCollection,
    standardize,
)
from .splines import LinearBasis, SplineBasis
from .tgdr_engine import FitResult, TgdrConfig, Variant, cross_validate, fit_path, fit_variant

__all__ = [
    "CoefficientState",
    "DataError",
    "DatasetBundle",
    "FitResult",
    "InteractionIndex",
    "LinearBasis",
    "ModelFamily",
    "SplineBasis",
    "StudyCollection",
    "TgdrConfig",
    "Variant",
    "cross_validate",
    "fit_path",
    "fit_variant",
    "standardize",
]
