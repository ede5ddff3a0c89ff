"""Corpus-level data quality: missingness/plausibility reports, exclusions, imputation."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .extractor import RECORD_FIELD_NAMES, ListingRecord
from .geo import (
    MISSING_HOUSE_NUMBER,
    OUTSIDE,
    CityFrame,
    GeoPoint,
    as_imputed,
    bbox_filter,
    distance_to_center,
    to_local_xy,
)

logger = logging.getLogger(__name__)

# record flags set by this module and the geocoding stage
OUTSIDE_BBOX = "outside_bbox"
IMPUTED_DISTANCE = "imputed_distance"
UNIMPUTED = "unimputed"
GEOCODE_NO_MATCH = "geocode_no_match"
GEOCODE_BACKEND_ERROR = "geocode_backend_error"
ADDRESS_UNRESOLVABLE = "address_unresolvable"

# (attribute, label) in report order
ATTRIBUTES = (
    ("rent_net_eur", "Monthly (net) rent"),
    ("size_sqm", "Apartment size"),
    ("price_per_sqm", "Price per square meter"),
    ("running_costs_eur", "Running costs"),
    ("rooms", "Number of rooms"),
    ("year_built", "Year of construction"),
    ("energy_class", "Energy efficiency class"),
    ("postal_code", "Postal code"),
    ("coords", "Geocoded coordinates"),
)


class QualityError(ValueError):
    pass


def attribute_value(r: ListingRecord, attribute: str):
    """Numeric (or text) value of a report attribute, or None when missing."""
    if attribute == "price_per_sqm":
        if r.rent_net_eur is None or r.size_sqm is None:
            return None
        return r.rent_net_eur.value / r.size_sqm.value
    v = getattr(r, attribute)
    if hasattr(v, "value"):
        return v.value
    return v


@dataclass(frozen=True)
class PlausibilityRule:
    id: str
    attribute: str
    range: tuple[float, float] | None = None
    inclusive: bool = True
    relation: str | None = None  # named cross-field check
    params: dict = field(default_factory=dict)
    action: str = "flag"  # flag | null_out
    severity: str = "implausible"  # implausible | note

    def __post_init__(self):
        if (self.range is None) == (self.relation is None):
            raise QualityError(f"rule {self.id}: give exactly one of range or relation")
        if self.range is not None and not self.range[0] < self.range[1]:
            raise QualityError(f"rule {self.id}: range min must be < max")
        if self.relation is not None and self.relation not in RELATIONS:
            raise QualityError(f"rule {self.id}: unknown relation {self.relation!r}")
        if self.action not in ("flag", "null_out"):
            raise QualityError(f"rule {self.id}: unknown action {self.action!r}")
        if self.severity not in ("implausible", "note"):
            raise QualityError(f"rule {self.id}: unknown severity {self.severity!r}")
        if self.attribute not in dict(ATTRIBUTES):
            raise QualityError(f"rule {self.id}: unknown attribute {self.attribute!r}")

    def hits(self, r: ListingRecord, ctx: dict) -> bool:
        v = attribute_value(r, self.attribute)
        if v is None:
            return False
        if self.range is not None:
            lo, hi = self.range
            ok = lo <= v <= hi if self.inclusive else lo < v < hi
            return not ok
        return RELATIONS[self.relation](r, v, self.params, ctx)

    @classmethod
    def from_dict(cls, d: dict) -> PlausibilityRule:
        rng = d.get("range")
        return cls(
            id=d["id"],
            attribute=d["attribute"],
            range=(float(rng[0]), float(rng[1])) if rng is not None else None,
            inclusive=bool(d.get("inclusive", True)),
            relation=d.get("relation"),
            params=dict(d.get("params", {})),
            action=d.get("action", "flag"),
            severity=d.get("severity", "implausible"),
        )

    def to_dict(self) -> dict:
        d = {"id": self.id, "attribute": self.attribute, "action": self.action, "severity": self.severity}
        if self.range is not None:
            d["range"] = list(self.range)
            d["inclusive"] = self.inclusive
        else:
            d["relation"] = self.relation
            d["params"] = self.params
        return d


def _renovated_built_after(r, v, params, ctx):
    return "renovated" in r.amenities and v > params.get("year", 2010)


def _outside_bbox(r, v, params, ctx):
    bbox = params.get("bbox") or ctx.get("bbox")
    if bbox is None:
        return OUTSIDE_BBOX in r.flags
    return bbox_filter(v, tuple(bbox)) == OUTSIDE


def _not_in_set(r, v, params, ctx):
    allowed = params.get("values") or ctx.get("postal_codes")
    return allowed is not None and v not in set(allowed)


RELATIONS = {
    "renovated_built_after": _renovated_built_after,
    "outside_bbox": _outside_bbox,
    "not_in_set": _not_in_set,
}


def default_rules(scrape_year: int, bbox=None) -> list[PlausibilityRule]:
    rules = [
        PlausibilityRule("year_range", "year_built", range=(1200, scrape_year + 2)),
        PlausibilityRule("rent_positive", "rent_net_eur", range=(0, math.inf), inclusive=False),
        PlausibilityRule("size_positive", "size_sqm", range=(0, math.inf), inclusive=False),
        PlausibilityRule("price_per_sqm_range", "price_per_sqm", range=(1, 100), inclusive=False),
        PlausibilityRule("running_costs_range", "running_costs_eur", range=(0, 5000)),
        PlausibilityRule("renovated_after_2010", "year_built", relation="renovated_built_after",
                         params={"year": 2010}, severity="note"),
        PlausibilityRule("coords_in_bbox", "coords", relation="outside_bbox",
                         params={"bbox": list(bbox)} if bbox else {}),
    ]
    return rules


def load_rules(path: str | Path) -> list[PlausibilityRule]:
    rules = [PlausibilityRule.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]
    ids = [r.id for r in rules]
    if len(set(ids)) != len(ids):
        raise QualityError("plausibility rule ids must be unique")
    return rules


@dataclass
class AttributeStats:
    missing: int = 0
    implausible: int = 0
    missing_pct: float = 0.0
    implausible_pct: float = 0.0
    valid_pct: float = 100.0
    rule_hits: dict[str, int] = field(default_factory=dict)


@dataclass
class QualityReport:
    corpus_size: int
    records_retained: int
    attributes: dict[str, AttributeStats]
    gap_days: list[date] = field(default_factory=list)
    qualified_values: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "corpus_size": self.corpus_size,
            "records_retained": self.records_retained,
            "attributes": {
                a: {
                    "missing": s.missing,
                    "implausible": s.implausible,
                    "missing_pct": s.missing_pct,
                    "implausible_pct": s.implausible_pct,
                    "valid_pct": s.valid_pct,
                    "rule_hits": dict(sorted(s.rule_hits.items())),
                }
                for a, s in self.attributes.items()
            },
            "gap_days": [d.isoformat() for d in self.gap_days],
            "qualified_values": dict(sorted(self.qualified_values.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        """Aligned text table: one row per attribute, missing and implausible percentages."""
        labels = dict(ATTRIBUTES)
        width = max(len(labels[a]) for a in self.attributes)
        head = f"{'':<{width}} | {'Missing':>8} | {'Implausible':>11}"
        rule = "-" * len(head)
        lines = [f"Percentages of missing and implausible data ({self.corpus_size} records)", rule, head, rule]
        for a, s in self.attributes.items():
            imp = f"{s.implausible_pct:.2f}" if s.implausible else ""
            lines.append(f"{labels[a]:<{width}} | {s.missing_pct:>8.2f} | {imp:>11}")
        lines.append(rule)
        lines.append(f"records retained: {self.records_retained} of {self.corpus_size}")
        if self.gap_days:
            lines.append(f"days without records: {len(self.gap_days)}")
        if self.qualified_values:
            q = ", ".join(f"{k}={v}" for k, v in sorted(self.qualified_values.items()))
            lines.append(f"values with qualifiers: {q}")
        return "\n".join(lines) + "\n"


def _pct(count: int, total: int) -> float:
    return round(100.0 * count / total, 2)


def quality_report(corpus, rules, retained: int | None = None, ctx: dict | None = None) -> QualityReport:
    corpus = list(corpus)
    if not corpus:
        raise QualityError("quality report needs a non-empty corpus")
    ctx = ctx or {}
    n = len(corpus)
    stats: dict[str, AttributeStats] = {}
    by_attr: dict[str, list[PlausibilityRule]] = {}
    for rule in rules:
        by_attr.setdefault(rule.attribute, []).append(rule)
    for attr, _ in ATTRIBUTES:
        s = AttributeStats()
        for r in corpus:
            v = attribute_value(r, attr)
            if v is None:
                s.missing += 1
                continue
            bad = False
            for rule in by_attr.get(attr, ()):
                if rule.hits(r, ctx):
                    s.rule_hits[rule.id] = s.rule_hits.get(rule.id, 0) + 1
                    bad = bad or rule.severity == "implausible"
            if bad:
                s.implausible += 1
        s.missing_pct = _pct(s.missing, n)
        s.implausible_pct = _pct(s.implausible, n)
        s.valid_pct = round(100.0 - s.missing_pct - s.implausible_pct, 2)
        stats[attr] = s
    qualified = Counter()
    for r in corpus:
        for name in ("rent_net_eur", "size_sqm", "rooms", "running_costs_eur"):
            pn = getattr(r, name)
            if pn is not None and pn.qualifier != "exact":
                qualified[name] += 1
    return QualityReport(
        corpus_size=n,
        records_retained=n if retained is None else retained,
        attributes=stats,
        gap_days=gap_days(corpus),
        qualified_values=dict(qualified),
    )


def gap_days(corpus) -> list[date]:
    days = set()
    for r in corpus:
        if r.scraped_at:
            days.add(date.fromisoformat(r.scraped_at[:10]))
    if not days:
        return []
    lo, hi = min(days), max(days)
    out = []
    d = lo
    while d <= hi:
        if d not in days:
            out.append(d)
        d += timedelta(days=1)
    return out


def apply_rules(corpus, rules, ctx: dict | None = None) -> list[ListingRecord]:
    """Flag rule hits on records (``rule:<id>``); ``null_out`` rules also clear the value."""
    ctx = ctx or {}
    out = []
    for r in corpus:
        for rule in rules:
            if attribute_value(r, rule.attribute) is not None and rule.hits(r, ctx):
                r = r.with_flag(f"rule:{rule.id}")
                if rule.action == "null_out" and rule.attribute in RECORD_FIELD_NAMES:
                    r = replace(r, **{rule.attribute: None})
        out.append(r)
    return out


# -- exclusions --------------------------------------------------------------


@dataclass(frozen=True)
class ExclusionCriteria:
    require: tuple[str, ...] = ("rent_net_eur", "size_sqm", "year_built", "dist_center_m")
    exclude_flags: tuple[str, ...] = ()
    building_level: bool = False

    def __post_init__(self):
        for f in self.require:
            if f not in RECORD_FIELD_NAMES:
                raise QualityError(f"exclusion criterion names unknown record field {f!r}")

    def ordered(self) -> list[tuple[str, object]]:
        crit = [(f"require:{f}", f) for f in self.require]
        crit += [(f"flag:{f}", f) for f in self.exclude_flags]
        if self.building_level:
            crit.append(("building_level", None))
        return crit

    @classmethod
    def from_dict(cls, d: dict) -> ExclusionCriteria:
        return cls(tuple(d.get("require", cls.require)), tuple(d.get("exclude_flags", ())),
                   bool(d.get("building_level", False)))


def _is_building_level(r: ListingRecord) -> bool:
    if r.coords is None or r.coords.quality == "imputed":
        return False
    if r.address is not None and MISSING_HOUSE_NUMBER in r.address.flags:
        return False
    return True


def apply_exclusions(corpus, criteria: ExclusionCriteria) -> tuple[list[ListingRecord], dict[str, int], list[tuple[str, str]]]:
    """Drop records failing a criterion; each record is charged to its first failing criterion.

    Returns (retained, counts per criterion, per-record ledger rows).
    """
    retained = []
    counts: dict[str, int] = {}
    ledger = []
    crit = criteria.ordered()
    for r in corpus:
        failed = None
        for name, arg in crit:
            if name.startswith("require:"):
                bad = getattr(r, arg) is None
            elif name.startswith("flag:"):
                bad = arg in r.flags or any(f.startswith(arg + ":") for f in r.flags)
            else:
                bad = not _is_building_level(r)
            if bad:
                failed = name
                break
        if failed is None:
            retained.append(r)
        else:
            counts[failed] = counts.get(failed, 0) + 1
            ledger.append((r.id, failed))
    return retained, counts, ledger


def write_exclusion_ledger(counts: dict[str, int], ledger, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "criterion"])
        for rid, crit in ledger:
            w.writerow([rid, crit])


# -- imputation --------------------------------------------------------------


def impute_distance_by_postal(corpus, postal_centroids: dict[str, GeoPoint], center: GeoPoint,
                              radius_m: float = 1000.0) -> list[ListingRecord]:
    """Give records without coordinates the distance of their postal-code centroid."""
    out = []
    for r in corpus:
        if r.coords is not None or r.dist_center_m is not None:
            out.append(r)
            continue
        centroid = postal_centroids.get(r.postal_code) if r.postal_code else None
        if centroid is None:
            out.append(r.with_flag(UNIMPUTED))
            continue
        p = as_imputed(centroid, radius_m)
        r = replace(r, coords=p, dist_center_m=distance_to_center(p, center))
        out.append(r.with_flag(IMPUTED_DISTANCE))
    return out


# -- obfuscation -------------------------------------------------------------


def obfuscation_aggregation_check(points_true, points_jittered, cell_size_m: float,
                                  origin: GeoPoint | None = None) -> tuple[float, float]:
    """Mean point displacement vs mean displacement of cell centroids.

    Points are grouped by the grid cell of their true location on a square
    grid in the local projection; each cell's centroid error is the
    distance between the mean true and the mean jittered position.
    """
    if len(points_true) != len(points_jittered):
        raise QualityError("point lists differ in length")
    if not cell_size_m > 0:
        raise QualityError("cell_size_m must be positive")
    if not points_true:
        return 0.0, 0.0
    if origin is None:
        origin = GeoPoint(float(np.mean([p.lat for p in points_true])), float(np.mean([p.lon for p in points_true])))
    t = np.array([to_local_xy(p.lat, p.lon, origin) for p in points_true])
    j = np.array([to_local_xy(p.lat, p.lon, origin) for p in points_jittered])
    point_err = float(np.mean(np.hypot(*(t - j).T)))
    cells = np.floor(t / cell_size_m).astype(np.int64)
    _, inv = np.unique(cells, axis=0, return_inverse=True)
    inv = inv.ravel()
    k = inv.max() + 1
    cnt = np.bincount(inv, minlength=k).astype(float)
    ct = np.column_stack([np.bincount(inv, t[:, d], k) / cnt for d in range(2)])
    cj = np.column_stack([np.bincount(inv, j[:, d], k) / cnt for d in range(2)])
    cell_err = float(np.mean(np.hypot(*(ct - cj).T)))
    return point_err, cell_err


def postal_codes_of(corpus) -> list[str]:
    return sorted({r.postal_code for r in corpus if r.postal_code})


def flag_outside(corpus, frame: CityFrame) -> list[ListingRecord]:
    out = []
    for r in corpus:
        if r.coords is not None and bbox_filter(r.coords, frame.bbox) == OUTSIDE:
            r = r.with_flag(OUTSIDE_BBOX)
        out.append(r)
    return out
