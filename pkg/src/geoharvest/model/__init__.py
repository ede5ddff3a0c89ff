"""Hedonic models of rent per square metre: P-spline GAMs and random forests."""

from .evaluate import PredictionGrid, evaluate, nearest_postal, predict, prediction_grid
from .features import (
    DEFAULT_VOCAB,
    FeatureRow,
    FeatureSchema,
    Profile,
    build_features,
    read_features_csv,
    train_test_split,
    write_features_csv,
)
from .forest import BACKEND, ForestModel, ForestParams, fit_random_forest
from .gam import GamError, GamModel, GamSpec, SmoothTerm, fit_gam, shrinkage_spec, simple_spec
from .io import load_model, save_model

__all__ = [
    "BACKEND",
    "DEFAULT_VOCAB",
    "FeatureRow",
    "FeatureSchema",
    "ForestModel",
    "ForestParams",
    "GamError",
    "GamModel",
    "GamSpec",
    "PredictionGrid",
    "Profile",
    "SmoothTerm",
    "build_features",
    "evaluate",
    "fit_gam",
    "fit_random_forest",
    "load_model",
    "nearest_postal",
    "predict",
    "prediction_grid",
    "read_features_csv",
    "save_model",
    "shrinkage_spec",
    "simple_spec",
    "train_test_split",
    "write_features_csv",
]
