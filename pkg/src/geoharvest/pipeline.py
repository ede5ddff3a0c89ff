"""Stage functions joining extraction, geocoding and quality into a corpus flow.

The CLI wraps each of these in a file-based stage; tests call them directly.
"""

from __future__ import annotations

import logging
from dataclasses import replace

from .extractor import ExtractionRuleSet, FieldIssue, ListingRecord, extract_record
from .geo import (
    CityFrame,
    GeocodeCache,
    GeocodeFailure,
    GeoError,
    distance_to_center,
    geocode,
    normalize_address,
)
from .quality import (
    ADDRESS_UNRESOLVABLE,
    GEOCODE_BACKEND_ERROR,
    GEOCODE_NO_MATCH,
    flag_outside,
)

logger = logging.getLogger(__name__)


def extract_pages(pages, rules: ExtractionRuleSet, scraped_at: str | None = None):
    """Extract every ``(url, html)`` pair; returns (records, issues) in input order.

    Records sharing an id with an earlier record are dropped with a
    ``duplicate`` issue so that ids stay unique within the corpus.
    """
    records: list[ListingRecord] = []
    issues: list[FieldIssue] = []
    seen = set()
    for url, html in pages:
        rec, iss = extract_record(html, rules, url, scraped_at=scraped_at)
        if rec.id in seen:
            issues.append(FieldIssue(rec.id, "id", "duplicate", url))
            continue
        seen.add(rec.id)
        records.append(rec)
        issues.extend(iss)
    return records, issues


def geocode_records(records, backend, frame: CityFrame, cache: GeocodeCache | None = None,
                    fallback_embedded: bool = False) -> list[ListingRecord]:
    """Normalize each raw address, geocode it and derive the distance to the centre.

    Records without a usable address keep ``coords`` empty unless
    ``fallback_embedded`` is set, in which case the page's embedded
    coordinates are used. Points outside the frame's bbox are flagged,
    never dropped.
    """
    out = []
    for r in records:
        coords = None
        addr = None
        flags = list(r.flags)
        if r.raw_address:
            try:
                addr = normalize_address(r.raw_address, city_hint=frame.name or None)
            except GeoError:
                addr = None
        if addr is not None and not addr.resolvable:
            flags.append(ADDRESS_UNRESOLVABLE)
        elif addr is not None and (addr.city or addr.postal_code):
            res = geocode(addr, backend, cache)
            if isinstance(res, GeocodeFailure):
                flags.append(GEOCODE_NO_MATCH if res.reason == "no_match" else GEOCODE_BACKEND_ERROR)
            else:
                coords = res
        if coords is None and fallback_embedded and r.coords_embedded is not None:
            coords = r.coords_embedded
        postal = r.postal_code or (addr.postal_code if addr else None)
        dist = distance_to_center(coords, frame.center) if coords is not None else None
        out.append(replace(r, address=addr, coords=coords, dist_center_m=dist, postal_code=postal,
                           flags=tuple(dict.fromkeys(flags))))
    return flag_outside(out, frame)
