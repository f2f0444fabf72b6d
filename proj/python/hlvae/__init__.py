"""Heterogeneous longitudinal VAE with an additive Gaussian-process prior.

Thin Python layer over the C++ core: configs are plain dicts, tables expose
numpy views of covariates, values and the observation mask.
"""

import json

from ._core import (
    DomainViolation,
    EmptyHoldout,
    Error,
    FactorizationFailure,
    IncompleteInstance,
    MissingCovariate,
    MissingIndividualComponent,
    Model,
    NonFiniteLoss,
    NonFiniteValue,
    NotScalar,
    NotSorted,
    NumericalError,
    ParseError,
    Schema,
    SchemaMismatch,
    ShapeMismatch,
    SingularTriangular,
    Table,
    TooFewVisits,
    UnknownCovariate,
    UnknownInstance,
    accuracy_error,
    displacement_error,
    error_report,
    impute,
    inject_mcar,
    nrmse,
    predict_future,
    run_cli,
    split_longitudinal,
)
from ._core import _generate

__all__ = [
    "Error",
    "NumericalError",
    "Schema",
    "Table",
    "Model",
    "generate",
    "create_model",
    "train",
    "impute",
    "predict_future",
    "inject_mcar",
    "split_longitudinal",
    "error_report",
    "nrmse",
    "accuracy_error",
    "displacement_error",
    "run_cli",
]


def generate(config=None, seed=0):
    """Synthetic longitudinal table. Returns (table, latents)."""
    return _generate(json.dumps(config or {}), seed)


def create_model(table, config=None, seed=0):
    """Model with freshly initialized parameters fitted to `table`."""
    return Model._create(table, json.dumps(config or {}), seed)


def train(model, config=None, validation=None):
    """Trains in place; returns the per-epoch history as a list of dicts."""
    return model._train(json.dumps(config or {}), validation)
