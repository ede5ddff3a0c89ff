"""Rule-driven extraction of listing records from HTML pages."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urldefrag, urljoin, urlparse

from bs4 import BeautifulSoup

from .geo import EMBEDDED, Address, GeoError, GeoPoint

logger = logging.getLogger(__name__)

EXACT, APPROX, AT_LEAST, AT_MOST = "exact", "approx", "at_least", "at_most"
QUALIFIERS = (EXACT, APPROX, AT_LEAST, AT_MOST)
UNITS = ("eur", "sqm", "rooms", "none")

AMENITY_VOCABULARY = ("balcony", "parking", "basement", "kitchen", "senior_friendly", "renovated", "elevator", "garden")


class ExtractionError(ValueError):
    pass


class UnparseableNumber(ExtractionError):
    pass


@dataclass(frozen=True)
class ParsedNumber:
    value: float
    unit: str = "none"
    qualifier: str = EXACT

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ExtractionError(f"non-finite value {self.value}")
        if self.unit not in UNITS:
            raise ExtractionError(f"unknown unit {self.unit!r}")
        if self.qualifier not in QUALIFIERS:
            raise ExtractionError(f"unknown qualifier {self.qualifier!r}")

    def to_dict(self) -> dict:
        return {"value": self.value, "unit": self.unit, "qualifier": self.qualifier}

    @classmethod
    def from_dict(cls, d):
        return None if d is None else cls(float(d["value"]), d.get("unit", "none"), d.get("qualifier", EXACT))


# -- numbers -------------------------------------------------------------------

_QUALIFIER_PATTERNS = (
    (AT_LEAST, re.compile(r"\bmind\.|\bmindestens\b|\bat least\b|\bmin\.", re.IGNORECASE)),
    (AT_MOST, re.compile(r"\bbis zu\b|\bat most\b|\bup to\b|\bmax\.|\bhöchstens\b", re.IGNORECASE)),
    (APPROX, re.compile(r"\bca\.|\bca\b|\bcirca\b|\bapprox\.|\bapproximately\b|\betwa\b|~", re.IGNORECASE)),
)

_UNIT_PATTERNS = (
    ("eur", re.compile(r"€|\beur\b|\beuro\b", re.IGNORECASE)),
    ("sqm", re.compile(r"m²|\bm2\b|\bqm\b|\bsqm\b|\bm\^2", re.IGNORECASE)),
    ("rooms", re.compile(r"\bzimmer\b|\bzi\.|\brooms?\b", re.IGNORECASE)),
)

_NUM = {
    # grouped thousands first, then plain numbers with an optional decimal part
    "de": re.compile(r"[0-9]{1,3}(?:\.[0-9]{3})+(?:,[0-9]+)?|[0-9]+(?:[,.][0-9]+)?"),
    "en": re.compile(r"[0-9]{1,3}(?:,[0-9]{3})+(?:\.[0-9]+)?|[0-9]+(?:\.[0-9]+)?"),
}


def _to_float(token: str, locale: str) -> float:
    if locale == "de":
        if "," in token:
            return float(token.replace(".", "").replace(",", "."))
        if re.fullmatch(r"[0-9]{1,3}(?:\.[0-9]{3})+", token):
            return float(token.replace(".", ""))
        return float(token)
    return float(token.replace(",", ""))


def parse_numeric(text: str, locale: str = "de") -> ParsedNumber:
    """Parse a number with optional unit and qualifier ("ca. 56,5 m²", "mind. 1.200 €")."""
    if locale not in _NUM:
        raise ExtractionError(f"unsupported locale {locale!r}")
    if not text or not text.strip():
        raise UnparseableNumber("empty text")
    m = _NUM[locale].search(text)
    if not m:
        raise UnparseableNumber(f"no digits in {text!r}")
    value = _to_float(m.group(0), locale)
    qualifier = EXACT
    for q, rx in _QUALIFIER_PATTERNS:
        if rx.search(text):
            qualifier = q
            break
    unit = "none"
    for u, rx in _UNIT_PATTERNS:
        if rx.search(text):
            unit = u
            break
    return ParsedNumber(value, unit, qualifier)


_QUALIFIER_TEXT = {
    "de": {APPROX: "ca. ", AT_LEAST: "mind. ", AT_MOST: "bis zu ", EXACT: ""},
    "en": {APPROX: "approx. ", AT_LEAST: "at least ", AT_MOST: "at most ", EXACT: ""},
}
_UNIT_TEXT = {
    "de": {"eur": " €", "sqm": " m²", "rooms": " Zimmer", "none": ""},
    "en": {"eur": " €", "sqm": " m²", "rooms": " rooms", "none": ""},
}


def format_decimal(value: float, decimals: int, locale: str = "de") -> str:
    s = f"{value:,.{decimals}f}"
    if locale == "de":
        s = s.replace(",", "\0").replace(".", ",").replace("\0", ".")
    return s


def render_number(n: ParsedNumber, locale: str = "de", decimals: int = 2) -> str:
    return _QUALIFIER_TEXT[locale][n.qualifier] + format_decimal(n.value, decimals, locale) + _UNIT_TEXT[locale][n.unit]


# -- records -------------------------------------------------------------------

NUMBER_FIELDS = ("rent_net_eur", "size_sqm", "rooms", "running_costs_eur")
POSITIVE_FIELDS = ("rent_net_eur", "size_sqm", "rooms")
INT_FIELDS = ("year_built",)
TEXT_FIELDS = ("id", "energy_class", "raw_address", "postal_code", "description")


@dataclass(frozen=True)
class ListingRecord:
    id: str
    url: str
    rent_net_eur: ParsedNumber | None = None
    size_sqm: ParsedNumber | None = None
    rooms: ParsedNumber | None = None
    year_built: int | None = None
    running_costs_eur: ParsedNumber | None = None
    amenities: frozenset[str] = frozenset()
    energy_class: str | None = None
    raw_address: str | None = None
    postal_code: str | None = None
    description: str | None = None
    coords_embedded: GeoPoint | None = None
    scraped_at: str | None = None
    # filled by the geocoding / quality stages
    address: Address | None = None
    coords: GeoPoint | None = None
    dist_center_m: float | None = None
    flags: tuple[str, ...] = ()

    def with_flag(self, flag: str) -> ListingRecord:
        if flag in self.flags:
            return self
        return replace(self, flags=self.flags + (flag,))

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (ParsedNumber, GeoPoint, Address)):
                v = v.to_dict()
            elif isinstance(v, frozenset):
                v = sorted(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ListingRecord:
        kw = dict(d)
        for name in NUMBER_FIELDS:
            kw[name] = ParsedNumber.from_dict(kw.get(name))
        for name in ("coords_embedded", "coords"):
            kw[name] = GeoPoint.from_dict(kw.get(name))
        kw["address"] = Address.from_dict(kw["address"]) if kw.get("address") else None
        kw["amenities"] = frozenset(kw.get("amenities", ()))
        kw["flags"] = tuple(kw.get("flags", ()))
        return cls(**kw)


RECORD_FIELD_NAMES = tuple(f.name for f in fields(ListingRecord))


@dataclass(frozen=True)
class FieldIssue:
    record_id: str
    field: str
    kind: str  # missing | unparseable | implausible_format | range | fatal
    detail: str = ""


# -- rule sets -----------------------------------------------------------------

TRANSFORMS = ("strip", "regex_capture", "numeric", "qualifier", "boolean_presence")


@dataclass(frozen=True)
class FieldRule:
    field: str
    selector: str
    post: tuple[tuple, ...] = (("strip",),)
    attr: str | None = None

    @property
    def transform_names(self) -> tuple[str, ...]:
        return tuple(t[0] for t in self.post)


@dataclass(frozen=True)
class ExtractionRuleSet:
    fields: tuple[FieldRule, ...]
    link_rules: dict = field(default_factory=dict)
    coord_rule: str | None = None
    locale: str = "de"

    def __post_init__(self):
        seen = set()
        for r in self.fields:
            if r.field in seen:
                raise ExtractionError(f"duplicate rule for field {r.field!r}")
            seen.add(r.field)
            if r.field.startswith("amenity:"):
                if "boolean_presence" not in r.transform_names:
                    raise ExtractionError(f"{r.field}: amenity rules need boolean_presence")
            elif r.field not in NUMBER_FIELDS + INT_FIELDS + TEXT_FIELDS:
                raise ExtractionError(f"rule names unknown record field {r.field!r}")
            for t in r.post:
                if t[0] not in TRANSFORMS:
                    raise ExtractionError(f"{r.field}: unknown transform {t[0]!r}")
                if t[0] == "regex_capture":
                    try:
                        rx = re.compile(t[1])
                    except re.error as exc:
                        raise ExtractionError(f"{r.field}: bad regex {t[1]!r}: {exc}") from exc
                    if rx.groups < 1:
                        raise ExtractionError(f"{r.field}: regex_capture needs a capture group")
        if self.coord_rule is not None:
            try:
                rx = re.compile(self.coord_rule)
            except re.error as exc:
                raise ExtractionError(f"bad coord_rule: {exc}") from exc
            if rx.groups != 2:
                raise ExtractionError("coord_rule must have exactly two capture groups (lat, lon)")
        if self.locale not in _NUM:
            raise ExtractionError(f"unsupported locale {self.locale!r}")

    @classmethod
    def from_dict(cls, d: dict) -> ExtractionRuleSet:
        rules = []
        for r in d["fields"]:
            post = []
            for t in r.get("post", ["strip"]):
                if isinstance(t, str):
                    post.append((t,))
                else:
                    (name, arg), = t.items()
                    post.append((name, arg))
            rules.append(FieldRule(r["field"], r["selector"], tuple(post), r.get("attr")))
        return cls(tuple(rules), dict(d.get("links", {})), d.get("coord_rule"), d.get("locale", "de"))

    def to_dict(self) -> dict:
        out_fields = []
        for r in self.fields:
            post = [t[0] if len(t) == 1 else {t[0]: t[1]} for t in r.post]
            entry = {"field": r.field, "selector": r.selector, "post": post}
            if r.attr:
                entry["attr"] = r.attr
            out_fields.append(entry)
        return {"locale": self.locale, "fields": out_fields, "links": self.link_rules, "coord_rule": self.coord_rule}

    @classmethod
    def load(cls, path: str | Path) -> ExtractionRuleSet:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_rules() -> ExtractionRuleSet:
    """Rule set matching the bundled synthetic listing site."""
    from importlib.resources import files

    return ExtractionRuleSet.from_dict(json.loads(files("geoharvest").joinpath("data/fixture_rules.json").read_text("utf-8")))


# -- extraction ----------------------------------------------------------------


def _decode(html: bytes | str) -> str:
    if isinstance(html, str):
        return html
    try:
        return html.decode("utf-8")
    except UnicodeDecodeError:
        return html.decode("latin-1")


def _soup(text: str) -> BeautifulSoup:
    return BeautifulSoup(text, "html.parser")


def _id_from_url(url: str) -> str:
    tail = urlparse(url).path.rstrip("/").rsplit("/", 1)[-1]
    return tail.rsplit(".", 1)[0] or url


def _apply_rule(soup, rule: FieldRule, locale: str):
    """Return (value, issue_kind, detail). value None + kind None means 'absent, no issue'."""
    els = soup.select(rule.selector)
    names = rule.transform_names
    if "boolean_presence" in names:
        return bool(els), None, ""
    if not els:
        return None, "missing", f"selector {rule.selector!r} matched nothing"
    el = els[0]
    if rule.attr:
        text = el.get(rule.attr)
        if text is None:
            return None, "missing", f"attribute {rule.attr!r} absent"
    else:
        text = el.get_text(" ")
    value = text
    allow_qualifier = "qualifier" in names
    for t in rule.post:
        name = t[0]
        if name == "strip":
            value = re.sub(r"\s+", " ", value).strip()
            if not value:
                return None, "missing", "empty text"
        elif name == "regex_capture":
            m = re.search(t[1], value)
            if not m:
                return None, "unparseable", f"pattern {t[1]!r} did not match {value!r}"
            value = m.group(1)
        elif name == "numeric":
            try:
                value = parse_numeric(value, locale)
            except UnparseableNumber as exc:
                return None, "unparseable", str(exc)
    if isinstance(value, ParsedNumber) and value.qualifier != EXACT and not allow_qualifier:
        return value, "implausible_format", f"unexpected qualifier {value.qualifier}"
    return value, None, ""


def extract_record(
    html: bytes | str,
    rules: ExtractionRuleSet,
    url: str,
    scraped_at: str | None = None,
) -> tuple[ListingRecord, list[FieldIssue]]:
    """Apply ``rules`` to one page. Field failures become issues; extraction never aborts."""
    text = _decode(html)
    rid = _id_from_url(url)
    if not text.strip() or "<" not in text:
        return ListingRecord(id=rid, url=url, scraped_at=scraped_at), [FieldIssue(rid, "*", "fatal", "not an HTML document")]
    soup = _soup(text)
    values: dict = {}
    issues: list[tuple[str, str, str]] = []
    amenities = set()
    for rule in rules.fields:
        value, kind, detail = _apply_rule(soup, rule, rules.locale)
        if rule.field.startswith("amenity:"):
            if value:
                amenities.add(rule.field.split(":", 1)[1])
            continue
        if kind is not None:
            issues.append((rule.field, kind, detail))
        if value is None:
            continue
        value, problem = _coerce(rule.field, value)
        if problem:
            issues.append((rule.field, "unparseable", problem))
            continue
        values[rule.field] = value
    rid = values.pop("id", None) or rid
    coords = None
    if rules.coord_rule:
        coords, coord_issue = _embedded_coords(text, rules.coord_rule)
        if coord_issue:
            issues.append(("coords_embedded", "range", coord_issue))
    record = ListingRecord(
        id=rid,
        url=url,
        amenities=frozenset(amenities),
        coords_embedded=coords,
        scraped_at=scraped_at,
        **values,
    )
    return record, [FieldIssue(rid, f, k, d) for f, k, d in issues]


def _coerce(name: str, value):
    if name in NUMBER_FIELDS:
        if not isinstance(value, ParsedNumber):
            try:
                value = parse_numeric(value)
            except UnparseableNumber as exc:
                return None, str(exc)
        if name in POSITIVE_FIELDS and value.value <= 0:
            return None, f"non-positive value {value.value}"
        return value, None
    if name in INT_FIELDS:
        v = value.value if isinstance(value, ParsedNumber) else None
        if v is None:
            try:
                v = float(str(value).strip())
            except ValueError:
                return None, f"not a number: {value!r}"
        if v != int(v):
            return None, f"not an integer: {v}"
        return int(v), None
    if isinstance(value, ParsedNumber):
        return None, "expected text"
    return value, None


def _embedded_coords(text: str, coord_rule: str) -> tuple[GeoPoint | None, str | None]:
    m = re.search(coord_rule, text)
    if not m:
        return None, None
    try:
        lat, lon = float(m.group(1)), float(m.group(2))
    except ValueError:
        return None, f"non-numeric coordinates {m.group(0)!r}"
    try:
        return GeoPoint(lat, lon, EMBEDDED), None
    except GeoError as exc:
        return None, str(exc)


def extract_embedded_coords(html: bytes | str, coord_rule: str) -> tuple[GeoPoint | None, list[str]]:
    if re.compile(coord_rule).groups != 2:
        raise ExtractionError("coord_rule must have exactly two capture groups (lat, lon)")
    point, issue = _embedded_coords(_decode(html), coord_rule)
    return point, ([issue] if issue else [])


def extract_links(html: bytes | str, selector: str, base_url: str) -> list[str]:
    if not urlparse(base_url).scheme:
        raise ExtractionError(f"base_url must be absolute: {base_url!r}")
    soup = _soup(_decode(html))
    out: list[str] = []
    seen = set()
    for el in soup.select(selector):
        href = el.get("href")
        if not href:
            continue
        url = urldefrag(urljoin(base_url, href.strip()))[0]
        if url not in seen:
            seen.add(url)
            out.append(url)
    return out


# -- serialization ---------------------------------------------------------------

CSV_COLUMNS = (
    "id", "url", "scraped_at",
    "rent_net_eur", "rent_qualifier", "size_sqm", "size_qualifier", "rooms", "rooms_qualifier",
    "year_built", "running_costs_eur", "energy_class", "amenities",
    "raw_address", "postal_code",
    "embedded_lat", "embedded_lon", "lat", "lon", "coord_quality", "positional_error_m",
    "dist_center_m", "flags",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def record_csv_row(r: ListingRecord) -> list[str]:
    def num(p):
        return (_fmt(p.value), p.qualifier) if p else ("", "")

    rent, rq = num(r.rent_net_eur)
    size, sq = num(r.size_sqm)
    rooms, roq = num(r.rooms)
    emb = r.coords_embedded
    c = r.coords
    return [
        r.id, r.url, _fmt(r.scraped_at),
        rent, rq, size, sq, rooms, roq,
        _fmt(r.year_built), _fmt(r.running_costs_eur.value if r.running_costs_eur else None),
        _fmt(r.energy_class), ";".join(sorted(r.amenities)),
        _fmt(r.raw_address), _fmt(r.postal_code),
        _fmt(emb.lat if emb else None), _fmt(emb.lon if emb else None),
        _fmt(c.lat if c else None), _fmt(c.lon if c else None), c.quality if c else "",
        _fmt(c.positional_error_m if c else None),
        _fmt(r.dist_center_m), ";".join(r.flags),
    ]


def write_records_csv(records, path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(record_csv_row(r))
    finally:
        if own:
            fh.close()


def records_to_csv(records) -> str:
    buf = io.StringIO()
    write_records_csv(records, buf)
    return buf.getvalue()


def write_records_jsonl(records, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_records_jsonl(path: str | Path) -> list[ListingRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(ListingRecord.from_dict(json.loads(line)))
    return out


def write_issues_csv(issues, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "field", "kind", "detail"])
        for i in issues:
            w.writerow([i.record_id, i.field, i.kind, i.detail])


def now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()
