"""Location handling: address normalization, gazetteer lookup, geocoding, distances."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371008.8

EMBEDDED, GEOCODED, IMPUTED, OBFUSCATED = "embedded", "geocoded", "imputed", "obfuscated"
POINT_QUALITIES = (EMBEDDED, GEOCODED, IMPUTED, OBFUSCATED)


class GeoError(ValueError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    quality: str = GEOCODED
    positional_error_m: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise GeoError(f"latitude out of range: {self.lat}")
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise GeoError(f"longitude out of range: {self.lon}")
        if self.quality not in POINT_QUALITIES:
            raise GeoError(f"unknown point quality {self.quality!r}")
        if self.positional_error_m is not None and self.positional_error_m < 0:
            raise GeoError("positional_error_m must be non-negative")
        if self.quality == IMPUTED and self.positional_error_m is None:
            raise GeoError("imputed points need a positional error")

    def to_dict(self) -> dict:
        return {
            "lat": self.lat,
            "lon": self.lon,
            "quality": self.quality,
            "positional_error_m": self.positional_error_m,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> GeoPoint | None:
        if d is None:
            return None
        return cls(float(d["lat"]), float(d["lon"]), d.get("quality", GEOCODED), d.get("positional_error_m"))


# -- distances and local projection ----------------------------------------


def distance_to_center(p: GeoPoint, center: GeoPoint) -> float:
    """Planar distance in metres on an equirectangular projection.

    The longitude scale uses the mean latitude of the pair, which keeps the
    distance symmetric.
    """
    phi1, phi2 = math.radians(p.lat), math.radians(center.lat)
    dx = math.radians(p.lon - center.lon) * math.cos(0.5 * (phi1 + phi2))
    dy = phi1 - phi2
    return EARTH_RADIUS_M * math.hypot(dx, dy)


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def to_local_xy(lat: float, lon: float, origin: GeoPoint) -> tuple[float, float]:
    """Metres east/north of ``origin`` (equirectangular, scaled at the origin latitude)."""
    k = math.cos(math.radians(origin.lat))
    x = EARTH_RADIUS_M * math.radians(lon - origin.lon) * k
    y = EARTH_RADIUS_M * math.radians(lat - origin.lat)
    return x, y


def from_local_xy(x: float, y: float, origin: GeoPoint) -> tuple[float, float]:
    k = math.cos(math.radians(origin.lat))
    lat = origin.lat + math.degrees(y / EARTH_RADIUS_M)
    lon = origin.lon + math.degrees(x / (EARTH_RADIUS_M * k))
    return lat, lon


def jitter_point(p: GeoPoint, rng, min_m: float, max_m: float) -> GeoPoint:
    """Displace ``p`` by a uniform-ring offset: distance in [min_m, max_m], uniform bearing.

    ``rng`` is a numpy Generator. The displacement is exact in the local
    projection around ``p``.
    """
    r = rng.uniform(min_m, max_m)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    lat, lon = from_local_xy(r * math.cos(theta), r * math.sin(theta), p)
    return GeoPoint(lat, lon, OBFUSCATED, positional_error_m=max_m)


INSIDE, OUTSIDE = "inside", "outside"


def bbox_filter(p: GeoPoint, bbox: tuple[float, float, float, float]) -> str:
    lat_min, lat_max, lon_min, lon_max = bbox
    if lat_min > lat_max or lon_min > lon_max:
        raise GeoError(f"bbox not well ordered: {bbox}")
    if lat_min <= p.lat <= lat_max and lon_min <= p.lon <= lon_max:
        return INSIDE
    return OUTSIDE


# -- addresses ---------------------------------------------------------------

PLZ_RE = re.compile(r"\b(\d{5})\b")

DEFAULT_NOISE_PATTERNS = (
    r"\([^)]*\)",
    r"\[[^\]]*\]",
    r"\b(?:Gebäude|Haus|Aufgang|Eingang|Block|building)\s+[A-Za-z0-9]{1,3}\b",
    r"\bOT\s+[\wäöüß-]+",
    r"\b(?:Vorderhaus|Hinterhaus|Seitenflügel)\b",
)

_STREET_NR_RE = re.compile(
    r"^(?P<street>[^\d,][^,]*?)\s+(?P<nr>\d{1,4}\s?[a-zA-Z]?(?:\s?[-/]\s?\d{1,4}\s?[a-zA-Z]?)?)$"
)
_PLZ_CITY_RE = re.compile(r"^(?P<plz>\d{5})(?:\s+(?P<city>.+))?$")
_STREET_HINT_RE = re.compile(
    r"(?:str\.|(?:straße|strasse|weg|platz|allee|ring|gasse|ufer|damm|markt|steig|pfad|chaussee|promenade|hof)\b)",
    re.IGNORECASE,
)

# flag names
MISSING_HOUSE_NUMBER = "missing_house_number"
REORDERED = "reordered"
NOISE_REMOVED = "noise_removed"
UNRESOLVABLE = "unresolvable"


@dataclass(frozen=True)
class Address:
    raw: str
    street: str | None = None
    house_number: str | None = None
    postal_code: str | None = None
    city: str | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.postal_code is not None and not re.fullmatch(r"\d{5}", self.postal_code):
            raise GeoError(f"postal code must have 5 digits: {self.postal_code!r}")

    @property
    def resolvable(self) -> bool:
        return UNRESOLVABLE not in self.flags

    def canonical(self) -> str:
        left = " ".join(x for x in (self.street, self.house_number) if x)
        right = " ".join(x for x in (self.postal_code, self.city) if x)
        return ", ".join(x for x in (left, right) if x)

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "street": self.street,
            "house_number": self.house_number,
            "postal_code": self.postal_code,
            "city": self.city,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Address:
        return cls(d["raw"], d.get("street"), d.get("house_number"), d.get("postal_code"), d.get("city"),
                   tuple(d.get("flags", ())))


def normalize_address(
    raw: str,
    city_hint: str | None = None,
    noise_patterns=DEFAULT_NOISE_PATTERNS,
) -> Address:
    """Split a free-form German address into street, number, postal code and city.

    Handles "PLZ City, Street Nr" ordering, strips neighbourhood and
    building qualifiers matched by ``noise_patterns``.
    """
    if not raw or not raw.strip():
        raise GeoError("empty address")
    flags: list[str] = []
    text = raw
    for pat in noise_patterns:
        text, n = re.subn(pat, " ", text, flags=re.IGNORECASE)
        if n and NOISE_REMOVED not in flags:
            flags.append(NOISE_REMOVED)
    text = re.sub(r"\s+", " ", text)
    parts = [p.strip(" -;") for p in text.split(",")]
    parts = [p for p in parts if p]

    street = number = plz = city = None
    street_idx = plz_idx = None
    for i, part in enumerate(parts):
        m = _PLZ_CITY_RE.match(part)
        if m and plz is None:
            plz, city = m.group("plz"), (m.group("city") or "").strip() or None
            plz_idx = i
            continue
        m = _STREET_NR_RE.match(part)
        if m and street is None:
            street, number = m.group("street").strip(), re.sub(r"\s+", "", m.group("nr"))
            street_idx = i
            continue
        if street is None and _STREET_HINT_RE.search(part):
            street = part
            street_idx = i
            continue
        if city is None and plz is None and not any(ch.isdigit() for ch in part):
            city = part

    if plz is None:
        m = PLZ_RE.search(text)
        if m:
            plz = m.group(1)
    if city is None:
        city = city_hint
    if plz_idx is not None and street_idx is not None and plz_idx < street_idx:
        flags.append(REORDERED)
    if street is None:
        flags.append(UNRESOLVABLE)
        return Address(raw=raw, postal_code=plz, city=city_hint or city, flags=tuple(flags))
    if number is None:
        flags.append(MISSING_HOUSE_NUMBER)
    return Address(raw=raw, street=street, house_number=number, postal_code=plz, city=city, flags=tuple(flags))


# -- gazetteer ---------------------------------------------------------------

GAZETTEER_KINDS = ("city", "district", "street", "address", "postcode")


@dataclass(frozen=True)
class GazetteerEntry:
    toponym: str
    point: GeoPoint
    kind: str


class Gazetteer:
    """Toponym dictionary with case-insensitive lookup and longest-match geoparsing."""

    def __init__(self, entries=()):
        self.entries: list[GazetteerEntry] = []
        self._index: dict[tuple[str, str], GazetteerEntry] = {}
        self._by_name: dict[str, list[GazetteerEntry]] = {}
        self._regex: re.Pattern | None = None
        for e in entries:
            self.add(e)

    def add(self, entry: GazetteerEntry) -> None:
        name = entry.toponym.strip()
        if not name:
            raise GeoError("empty toponym")
        if entry.kind not in GAZETTEER_KINDS:
            raise GeoError(f"unknown gazetteer kind {entry.kind!r}")
        key = (name.casefold(), entry.kind)
        if key in self._index:
            raise GeoError(f"duplicate gazetteer entry {name!r} ({entry.kind})")
        self._index[key] = entry
        self._by_name.setdefault(name.casefold(), []).append(entry)
        self.entries.append(entry)
        self._regex = None

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, toponym: str, kind: str | None = None) -> GazetteerEntry | None:
        key = toponym.strip().casefold()
        if kind is not None:
            return self._index.get((key, kind))
        hits = self._by_name.get(key)
        return hits[0] if hits else None

    def pattern(self) -> re.Pattern | None:
        if self._regex is None and self._by_name:
            names = sorted(self._by_name, key=lambda n: (-len(n), n))
            alt = "|".join(re.escape(n) for n in names)
            self._regex = re.compile(rf"(?<!\w)(?:{alt})(?!\w)", re.IGNORECASE)
        return self._regex

    @classmethod
    def from_csv(cls, path: str | Path) -> Gazetteer:
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                kind = row["kind"]
                point = GeoPoint(float(row["lat"]), float(row["lon"]), GEOCODED)
                entries.append(GazetteerEntry(row["toponym"], point, kind))
        return cls(entries)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["toponym", "kind", "lat", "lon"])
            for e in self.entries:
                w.writerow([e.toponym, e.kind, repr(e.point.lat), repr(e.point.lon)])


@dataclass(frozen=True)
class ToponymMatch:
    toponym: str
    point: GeoPoint
    span: tuple[int, int]
    kind: str


def geoparse(text: str, gaz: Gazetteer) -> list[ToponymMatch]:
    rx = gaz.pattern()
    if rx is None or not text:
        return []
    out = []
    for m in rx.finditer(text):
        entry = gaz.lookup(m.group(0))
        out.append(ToponymMatch(entry.toponym, entry.point, (m.start(), m.end()), entry.kind))
    return out


# -- geocoding ---------------------------------------------------------------

NO_MATCH, BACKEND_ERROR = "no_match", "backend_error"


@dataclass(frozen=True)
class GeocodeFailure:
    reason: str
    detail: str = ""


class GeocodeBackend(Protocol):
    name: str

    def search(self, params: dict) -> list[dict]:
        """Return ranked candidates ``{"lat", "lon", "display_name"}``."""


def query_params(addr: Address) -> dict:
    params = {"format": "json", "q": addr.canonical()}
    if addr.street:
        params["street"] = " ".join(x for x in (addr.house_number, addr.street) if x)
    if addr.city:
        params["city"] = addr.city
    if addr.postal_code:
        params["postalcode"] = addr.postal_code
    return params


class StubBackend:
    """Offline geocoder answering Nominatim-style queries from a gazetteer."""

    name = "stub"

    def __init__(self, gaz: Gazetteer):
        self.gaz = gaz
        self.calls = 0

    @classmethod
    def from_csv(cls, path) -> StubBackend:
        return cls(Gazetteer.from_csv(path))

    def search(self, params: dict) -> list[dict]:
        self.calls += 1
        street = params.get("street")
        hit = None
        if street:
            number, _, name = street.partition(" ") if street[:1].isdigit() else ("", "", street)
            if number:
                hit = self.gaz.lookup(f"{name} {number}", "address")
            if hit is None and not number:
                hit = self.gaz.lookup(name, "street")
            if hit is None:
                return []
        else:
            if params.get("postalcode"):
                hit = self.gaz.lookup(params["postalcode"], "postcode")
            if hit is None and params.get("city"):
                hit = self.gaz.lookup(params["city"], "city")
        if hit is None:
            return []
        return [{"lat": repr(hit.point.lat), "lon": repr(hit.point.lon), "display_name": hit.toponym}]


class NominatimBackend:
    """Live Nominatim client; at most one request per ``min_interval_s``."""

    name = "nominatim"

    def __init__(self, url: str = "https://nominatim.openstreetmap.org/search", user_agent: str = "geoharvest",
                 min_interval_s: float = 1.0, timeout_s: float = 30.0, max_retries: int = 2):
        self.url = url
        self.user_agent = user_agent
        self.min_interval_s = min_interval_s
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self._last = -math.inf
        self._lock = threading.Lock()

    def _wait(self):
        gap = time.monotonic() - self._last
        if gap < self.min_interval_s:
            time.sleep(self.min_interval_s - gap)

    def search(self, params: dict) -> list[dict]:
        # structured and free-form queries are mutually exclusive in Nominatim
        q = dict(params)
        if any(k in q for k in ("street", "city", "postalcode")):
            q.pop("q", None)
        url = f"{self.url}?{urllib.parse.urlencode(q)}"
        req = urllib.request.Request(url, headers={"User-Agent": self.user_agent})
        last_exc = None
        for attempt in range(self.max_retries + 1):
            with self._lock:
                self._wait()
                try:
                    with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                        return json.loads(resp.read().decode("utf-8"))
                except (urllib.error.URLError, OSError, ValueError) as exc:
                    last_exc = exc
                finally:
                    self._last = time.monotonic()
        raise GeoError(f"nominatim request failed: {last_exc}")


class GeocodeCache:
    """Persistent address -> result cache (JSON file). Reads are lock-free, writes serialized."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._data = json.loads(self.path.read_text(encoding="utf-8"))

    @staticmethod
    def key(backend: str, params: dict) -> str:
        return backend + "|" + json.dumps(params, sort_keys=True, ensure_ascii=False)

    def get(self, key: str) -> dict | None:
        return self._data.get(key)

    def put(self, key: str, value: dict) -> None:
        with self._lock:
            self._data[key] = value

    def save(self) -> None:
        if self.path is None:
            return
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_suffix(".tmp")
            tmp.write_text(json.dumps(self._data, sort_keys=True, indent=0, ensure_ascii=False), encoding="utf-8")
            tmp.replace(self.path)


def geocode(addr: Address, backend, cache: GeocodeCache | None = None) -> GeoPoint | GeocodeFailure:
    """Resolve an address to the backend's first-ranked candidate."""
    if not (addr.city or addr.postal_code):
        raise GeoError("address needs at least a city or a postal code")
    params = query_params(addr)
    key = GeocodeCache.key(getattr(backend, "name", type(backend).__name__), params)
    cached = cache.get(key) if cache else None
    if cached is not None:
        return _decode_result(cached)
    try:
        candidates = backend.search(params)
    except Exception as exc:  # backend failures never propagate
        logger.warning("geocoder error for %r: %s", addr.raw, exc)
        # backend errors are not cached; a later run may succeed
        return GeocodeFailure(BACKEND_ERROR, str(exc))
    if not candidates:
        result = {"failure": NO_MATCH}
    else:
        top = candidates[0]
        result = {"lat": float(top["lat"]), "lon": float(top["lon"])}
    if cache:
        cache.put(key, result)
    return _decode_result(result)


def _decode_result(d: dict) -> GeoPoint | GeocodeFailure:
    if "failure" in d:
        return GeocodeFailure(d["failure"], d.get("detail", ""))
    return GeoPoint(d["lat"], d["lon"], GEOCODED)


@dataclass
class CityFrame:
    """Reference geometry of the study area."""

    center: GeoPoint
    bbox: tuple[float, float, float, float]
    name: str = ""
    postal_centroids: dict[str, GeoPoint] = field(default_factory=dict)
    centroid_radius_m: float = 1000.0


def load_postal_centroids(path: str | Path) -> dict[str, GeoPoint]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["plz"]] = GeoPoint(float(row["lat"]), float(row["lon"]), GEOCODED)
    return out


def write_postal_centroids(path: str | Path, centroids: dict[str, GeoPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plz", "lat", "lon"])
        for plz in sorted(centroids):
            p = centroids[plz]
            w.writerow([plz, repr(p.lat), repr(p.lon)])


def as_imputed(p: GeoPoint, radius_m: float) -> GeoPoint:
    return replace(p, quality=IMPUTED, positional_error_m=radius_m)
