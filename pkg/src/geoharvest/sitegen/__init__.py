"""Synthetic listing site generator and fixture HTTP server."""

from .generator import (
    AnomalyRates,
    HedonicSpec,
    Listing,
    PostalGrid,
    SyntheticSiteSpec,
    build_gazetteer,
    generate_site,
    manifest_feature_rows,
    sample_listings,
    synthetic_rows,
)
from .server import FixtureServer, ServerError, serve

__all__ = [
    "AnomalyRates",
    "FixtureServer",
    "HedonicSpec",
    "Listing",
    "PostalGrid",
    "ServerError",
    "SyntheticSiteSpec",
    "build_gazetteer",
    "generate_site",
    "manifest_feature_rows",
    "sample_listings",
    "serve",
    "synthetic_rows",
]
