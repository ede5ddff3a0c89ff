"""geoharvest: polite scraping of real-estate listings into geocoded hedonic rent models."""

__version__ = "0.1.0"

from .compliance import (  # noqa: E402
    ComplianceVerdict,
    RobotsPolicy,
    ViabilityAssessment,
    assess_viability,
    is_allowed,
    parse_robots,
)
from .extractor import ExtractionRuleSet, ListingRecord, extract_record, parse_numeric  # noqa: E402
from .fetcher import FetchPlan, PoliteClient, run_plan  # noqa: E402
from .geo import GeoPoint, distance_to_center, geocode, normalize_address  # noqa: E402
from .quality import QualityReport, apply_rules, quality_report  # noqa: E402

__all__ = [
    "__version__",
    "ComplianceVerdict",
    "RobotsPolicy",
    "ViabilityAssessment",
    "assess_viability",
    "is_allowed",
    "parse_robots",
    "ExtractionRuleSet",
    "ListingRecord",
    "extract_record",
    "parse_numeric",
    "FetchPlan",
    "PoliteClient",
    "run_plan",
    "GeoPoint",
    "distance_to_center",
    "geocode",
    "normalize_address",
    "QualityReport",
    "apply_rules",
    "quality_report",
]
