"""Deterministic synthetic listing site with a known hedonic price surface.

Everything random comes from one numpy Generator seeded by ``spec.seed``,
consumed in a fixed order, so a seed always yields byte-identical output.
Anomalies are decided by comparing one uniform draw per anomaly class with
its configured rate; the draws happen whether or not a rate is zero.
"""

from __future__ import annotations

import html
import json
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..compliance import benign_answers_text, parse_robots
from ..extractor import AMENITY_VOCABULARY, ParsedNumber, format_decimal, render_number
from ..geo import (
    GEOCODED,
    CityFrame,
    Gazetteer,
    GazetteerEntry,
    GeoPoint,
    distance_to_center,
    from_local_xy,
    jitter_point,
    to_local_xy,
    write_postal_centroids,
)
from ..model.features import DEFAULT_VOCAB, FeatureRow

MISSABLE_FIELDS = ("rent_net_eur", "size_sqm", "rooms", "year_built", "running_costs_eur", "energy_class",
                   "raw_address")

AMENITY_PROB = {
    "balcony": 0.55, "parking": 0.35, "basement": 0.6, "kitchen": 0.45,
    "senior_friendly": 0.12, "renovated": 0.3, "elevator": 0.3, "garden": 0.15,
}
AMENITY_LABEL = {
    "balcony": "Balkon", "parking": "Stellplatz", "basement": "Keller", "kitchen": "Einbauküche",
    "senior_friendly": "Seniorengerecht", "renovated": "Saniert", "elevator": "Aufzug", "garden": "Garten",
}
ENERGY_CLASSES = ("A+", "A", "B", "C", "D", "E", "F", "G", "H")

POSTAL_CODES = ("04155", "04157", "04347", "04357", "04177", "04105", "04109", "04315",
                "04229", "04275", "04277", "04299")
DISTRICTS = ("Gohlis", "Möckern", "Schönefeld", "Mockau", "Lindenau", "Waldstraßenviertel", "Zentrum",
             "Reudnitz", "Plagwitz", "Südvorstadt", "Connewitz", "Stötteritz")
STREET_STEMS = ("Linden", "Eichen", "Birken", "Ahorn", "Kastanien", "Rosen", "Tulpen", "Nelken", "Berg", "Tal",
                "Wiesen", "Feld", "Wald", "Garten", "Mühlen", "Brunnen", "Schul", "Kirch", "Markt", "Post",
                "Bahnhof", "Hafen", "Schloss", "Burg", "Sonnen", "Stern", "Mond", "Kiefern", "Erlen", "Weiden",
                "Buchen", "Pappel", "Holunder", "Flieder", "Lerchen", "Finken", "Amsel", "Meisen", "Falken",
                "Adler", "Bach", "Quell", "Teich", "Hügel", "Anger", "Auen", "Heide", "Moor", "Gold", "Silber")
STREET_SUFFIXES = ("str.", "straße", "weg", "allee", "platz", "ring", "gasse")
SORT_ORDERS = ("newest", "price_asc", "size_desc")


@dataclass
class HedonicSpec:
    """Rent per square metre = sum of the terms below plus gaussian noise."""

    base: float = 5.2
    dist_amp: float = 2.2  # exp(-d / dist_scale_m) premium near the centre
    dist_scale_m: float = 2000.0
    dist_slope_per_km: float = 0.1  # plus a gentle linear decline
    micro_amp: float = 2.5  # premium for very small flats
    micro_scale: float = 12.0
    new_amp: float = 2.8  # logistic jump for new buildings
    new_mid: float = 2011.0
    new_width: float = 2.0
    old_amp: float = 0.6  # bump for late-19th-century stock
    amenity_effects: dict = field(default_factory=lambda: {
        "balcony": 0.35, "parking": 0.25, "basement": 0.05, "kitchen": 0.8,
        "senior_friendly": 0.15, "renovated": 0.4, "elevator": 0.3, "garden": -0.2,
    })
    plz_effect_sd: float = 0.5
    noise_sd: float = 1.0
    # renovation pays more in old stock: an interaction no additive model captures
    renovated_old_bonus: float = 1.5
    renovated_old_before: float = 1960.0

    def mean(self, dist_m, size, year, amenities, plz_effect):
        dist_m = np.asarray(dist_m, dtype=float)
        size = np.asarray(size, dtype=float)
        year = np.asarray(year, dtype=float)
        v = (self.base
             + self.dist_amp * np.exp(-dist_m / self.dist_scale_m)
             - self.dist_slope_per_km * dist_m / 1000.0
             + self.micro_amp * np.exp(-(size - 18.0) / self.micro_scale)
             + self.new_amp / (1.0 + np.exp(-(year - self.new_mid) / self.new_width))
             + self.old_amp * np.exp(-(((year - 1900.0) / 12.0) ** 2))
             + plz_effect)
        return v + amenities

    def distance_effect(self, dist_m):
        dist_m = np.asarray(dist_m, dtype=float)
        return self.dist_amp * np.exp(-dist_m / self.dist_scale_m) - self.dist_slope_per_km * dist_m / 1000.0


@dataclass
class AnomalyRates:
    missing: dict = field(default_factory=dict)  # field -> rate
    qualifier: float = 0.0
    reverted_address: float = 0.0
    address_noise: float = 0.0
    missing_house_number: float = 0.0
    jitter: float = 0.0
    jitter_min_m: float = 150.0
    jitter_max_m: float = 200.0
    out_of_bbox: float = 0.0
    address_corruption: float = 0.0

    def validate(self):
        for k, v in self.missing.items():
            if k not in MISSABLE_FIELDS:
                raise ValueError(f"field {k!r} cannot be made missing")
            if not 0 <= v <= 1:
                raise ValueError(f"missing rate for {k} outside [0, 1]")
        for k in ("qualifier", "reverted_address", "address_noise", "missing_house_number", "jitter",
                  "out_of_bbox", "address_corruption"):
            if not 0 <= getattr(self, k) <= 1:
                raise ValueError(f"rate {k} outside [0, 1]")
        if not 0 <= self.jitter_min_m <= self.jitter_max_m:
            raise ValueError("need 0 <= jitter_min_m <= jitter_max_m")


@dataclass
class SyntheticSiteSpec:
    n_listings: int = 500
    pages: int = 5
    seed: int = 42
    base_url: str = "http://immo.example"
    place: str = "leipzig"
    object_type: str = "wohnungen"
    sort_orders: tuple = ("newest", "price_asc")
    city: str = "Leipzig"
    center: tuple = (51.3397, 12.3731)
    bbox: tuple = (51.2400, 51.4400, 12.2100, 12.5400)
    spread_m: float = 3500.0
    hedonic: HedonicSpec = field(default_factory=HedonicSpec)
    anomalies: AnomalyRates = field(default_factory=AnomalyRates)
    robots_disallow: tuple = ("/private/",)
    crawl_delay_s: float | None = None
    scrape_date: str = "2021-06-01"

    def validate(self):
        if self.n_listings < 1 or self.pages < 1:
            raise ValueError("need at least one listing and one page")
        if self.pages > self.n_listings:
            raise ValueError("more index pages than listings")
        for s in self.sort_orders:
            if s not in SORT_ORDERS:
                raise ValueError(f"unknown sort order {s!r}")
        self.anomalies.validate()

    @property
    def frame(self) -> CityFrame:
        return CityFrame(GeoPoint(*self.center), tuple(self.bbox), self.city)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sort_orders"] = list(self.sort_orders)
        d["center"] = list(self.center)
        d["bbox"] = list(self.bbox)
        d["robots_disallow"] = list(self.robots_disallow)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSiteSpec:
        d = dict(d)
        hed = HedonicSpec(**d.pop("hedonic", {}))
        anom = AnomalyRates(**d.pop("anomalies", {}))
        for k in ("sort_orders", "center", "bbox", "robots_disallow"):
            if k in d:
                d[k] = tuple(d[k])
        spec = cls(hedonic=hed, anomalies=anom, **d)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> SyntheticSiteSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Listing:
    id: str
    url: str
    point: GeoPoint
    postal_code: str
    district: str
    street: str
    house_number: str
    size_sqm: float
    rooms: float
    year_built: int
    amenities: tuple
    energy_class: str
    running_costs_eur: float
    rent_net_eur: float
    plz_effect: float
    anomalies: list = field(default_factory=list)
    embedded: GeoPoint | None = None
    geocode_point: GeoPoint | None = None
    rendered_street: str = ""

    def feature_row(self, center: GeoPoint, vocab=DEFAULT_VOCAB) -> FeatureRow:
        return FeatureRow(
            id=self.id,
            target=self.rent_net_eur / self.size_sqm,
            dist_center_m=distance_to_center(self.point, center),
            size_sqm=self.size_sqm,
            year_built=float(self.year_built),
            nfeatures=len(set(self.amenities) & set(vocab)),
            rooms=self.rooms,
            postal_code=self.postal_code,
            amenities=frozenset(self.amenities),
        )


class PostalGrid:
    """Postal districts as a rows x cols tiling of the bounding box."""

    def __init__(self, bbox, rows=3, cols=4, codes=POSTAL_CODES, names=DISTRICTS):
        self.bbox = tuple(bbox)
        self.rows, self.cols = rows, cols
        self.codes = codes[: rows * cols]
        self.names = names[: rows * cols]

    def cell(self, lat: float, lon: float) -> int:
        lat_min, lat_max, lon_min, lon_max = self.bbox
        r = min(self.rows - 1, max(0, int((lat - lat_min) / (lat_max - lat_min) * self.rows)))
        c = min(self.cols - 1, max(0, int((lon - lon_min) / (lon_max - lon_min) * self.cols)))
        return r * self.cols + c

    def code_at(self, lat: float, lon: float) -> str:
        return self.codes[self.cell(lat, lon)]

    def centroids(self) -> dict[str, GeoPoint]:
        lat_min, lat_max, lon_min, lon_max = self.bbox
        out = {}
        for i, code in enumerate(self.codes):
            r, c = divmod(i, self.cols)
            lat = lat_min + (r + 0.5) * (lat_max - lat_min) / self.rows
            lon = lon_min + (c + 0.5) * (lon_max - lon_min) / self.cols
            out[code] = GeoPoint(lat, lon, GEOCODED)
        return out


def _round2(v: float) -> float:
    return float(f"{v:.2f}")


def _corrupt(street: str) -> str:
    # 'x' and 'q' never occur in generated street names
    return "Xq" + street[::-1].lower().replace("a", "x").replace("e", "q")


def _street_names(rng, count: int) -> list[str]:
    combos = [s + suf for s in STREET_STEMS for suf in STREET_SUFFIXES]
    if count > len(combos):
        raise ValueError("too many streets requested")
    idx = rng.permutation(len(combos))[:count]
    return [combos[i] for i in idx]


def sample_listings(spec: SyntheticSiteSpec) -> list[Listing]:
    """Draw listings and their anomalies; no HTML is rendered."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    frame = spec.frame
    center = frame.center
    grid = PostalGrid(spec.bbox)
    # postal effects are standardized so that every seed has the same between-district spread
    z = rng.standard_normal(len(grid.codes))
    z = (z - z.mean()) / z.std()
    plz_effect = dict(zip(grid.codes, spec.hedonic.plz_effect_sd * z))
    streets_per_plz = min(len(STREET_STEMS) * len(STREET_SUFFIXES) // len(grid.codes),
                          max(3, math.ceil(spec.n_listings / 40)))
    names = _street_names(rng, streets_per_plz * len(grid.codes))
    streets = {code: names[i * streets_per_plz:(i + 1) * streets_per_plz] for i, code in enumerate(grid.codes)}
    used_numbers: dict[str, set] = {}

    lat_min, lat_max, lon_min, lon_max = spec.bbox
    listings = []
    amen_order = AMENITY_VOCABULARY
    for i in range(spec.n_listings):
        lid = f"L{i + 1:05d}"
        while True:
            x, y = rng.normal(0.0, spec.spread_m, 2)
            lat, lon = from_local_xy(x, y, center)
            margin = 0.002
            if lat_min + margin < lat < lat_max - margin and lon_min + margin < lon < lon_max - margin:
                break
        point = GeoPoint(lat, lon, GEOCODED)
        code = grid.code_at(lat, lon)
        street = streets[code][int(rng.integers(len(streets[code])))]
        taken = used_numbers.setdefault(street, set())
        while True:
            nr = int(rng.integers(1, 400))
            if nr not in taken:
                taken.add(nr)
                break
        size = _round2(float(np.clip(rng.lognormal(math.log(62.0), 0.38), 18.0, 180.0)))
        rooms = float(min(6.0, max(1.0, round(size / 27.0 * 2) / 2)))
        u = rng.random()
        if u < 0.35:
            year = int(rng.integers(1880, 1936))
        elif u < 0.5:
            year = int(rng.integers(1936, 1970))
        elif u < 0.75:
            year = int(rng.integers(1970, 1996))
        else:
            year = int(rng.integers(1996, 2021))
        amen_draw = rng.random(len(amen_order))
        amenities = tuple(a for a, d in zip(amen_order, amen_draw) if d < AMENITY_PROB[a])
        energy = ENERGY_CLASSES[int(rng.integers(len(ENERGY_CLASSES)))]
        costs = _round2(size * rng.uniform(2.0, 3.5))
        d = distance_to_center(point, center)
        amen_effect = sum(spec.hedonic.amenity_effects.get(a, 0.0) for a in amenities)
        if "renovated" in amenities and year < spec.hedonic.renovated_old_before:
            amen_effect += spec.hedonic.renovated_old_bonus
        mu = float(spec.hedonic.mean(d, size, year, amen_effect, plz_effect[code]))
        rps = max(2.5, mu + rng.normal(0.0, spec.hedonic.noise_sd))
        rent = _round2(rps * size)

        lst = Listing(
            id=lid, url=f"{spec.base_url}/expose/{lid}.html", point=point, postal_code=code,
            district=grid.names[grid.codes.index(code)], street=street, house_number=str(nr),
            size_sqm=size, rooms=rooms, year_built=year, amenities=amenities, energy_class=energy,
            running_costs_eur=costs, rent_net_eur=rent, plz_effect=float(plz_effect[code]),
        )
        _draw_anomalies(lst, spec, rng)
        listings.append(lst)
    return listings


def _draw_anomalies(lst: Listing, spec: SyntheticSiteSpec, rng) -> None:
    a = spec.anomalies
    u_missing = rng.random(len(MISSABLE_FIELDS))
    u = rng.random(7)
    jit = jitter_point(lst.point, rng, a.jitter_min_m, a.jitter_max_m)
    for f, v in zip(MISSABLE_FIELDS, u_missing):
        if v < a.missing.get(f, 0.0):
            lst.anomalies.append(f"missing:{f}")
    has_address = "missing:raw_address" not in lst.anomalies
    if u[0] < a.qualifier and "missing:size_sqm" not in lst.anomalies:
        lst.anomalies.append("qualifier:size_sqm")
    if has_address and u[1] < a.reverted_address:
        lst.anomalies.append("reverted_address")
    if has_address and u[2] < a.address_noise:
        lst.anomalies.append("address_noise")
    corrupted = has_address and u[5] < a.address_corruption
    no_number = has_address and not corrupted and u[3] < a.missing_house_number
    if no_number:
        lst.anomalies.append("missing_house_number")
    if u[4] < a.jitter:
        lst.anomalies.append("jitter")
        lst.embedded = jit
    else:
        lst.embedded = GeoPoint(lst.point.lat, lst.point.lon, "embedded")
    if corrupted:
        lst.anomalies.append("address_corruption")
        lst.rendered_street = _corrupt(lst.street)
    else:
        lst.rendered_street = lst.street
    if has_address and not corrupted and not no_number and u[6] < a.out_of_bbox:
        lst.anomalies.append("out_of_bbox")
        lat_span = spec.bbox[1] - spec.bbox[0]
        lst.geocode_point = GeoPoint(min(89.0, lst.point.lat + 1.5 * lat_span), lst.point.lon, GEOCODED)
    elif has_address and not corrupted and not no_number:
        lst.geocode_point = lst.point


# -- rendering ---------------------------------------------------------------


def _esc(s: str) -> str:
    return html.escape(s, quote=True)


def render_address(lst: Listing, city: str) -> str:
    nr = "" if "missing_house_number" in lst.anomalies else f" {lst.house_number}"
    street = f"{lst.rendered_street}{nr}"
    if "address_noise" in lst.anomalies:
        street += " (Gebäude B)"
    town = f"{lst.postal_code} {city}"
    if "reverted_address" in lst.anomalies:
        return f"{town}, {street}"
    return f"{street}, {town}"


def _rooms_text(rooms: float) -> str:
    return render_number(ParsedNumber(rooms, "rooms"), "de", 0 if rooms == int(rooms) else 1)


def render_listing(lst: Listing, spec: SyntheticSiteSpec) -> str:
    miss = {a.split(":", 1)[1] for a in lst.anomalies if a.startswith("missing:")}
    size_q = "approx" if "qualifier:size_sqm" in lst.anomalies else "exact"
    facts = []

    def fact(field_name, label, cls, text):
        if field_name not in miss:
            facts.append(f'    <dt>{label}</dt><dd class="{cls}">{_esc(text)}</dd>')

    fact("rent_net_eur", "Kaltmiete", "rent", render_number(ParsedNumber(lst.rent_net_eur, "eur")))
    fact("size_sqm", "Wohnfläche", "size", render_number(ParsedNumber(lst.size_sqm, "sqm", size_q)))
    fact("rooms", "Zimmer", "rooms", _rooms_text(lst.rooms))
    fact("year_built", "Baujahr", "year", str(lst.year_built))
    fact("running_costs_eur", "Nebenkosten", "costs", render_number(ParsedNumber(lst.running_costs_eur, "eur")))
    fact("energy_class", "Energieeffizienzklasse", "energy", lst.energy_class)
    features = "\n".join(
        f'    <li data-feature="{a}">{_esc(AMENITY_LABEL[a])}</li>' for a in lst.amenities
    )
    address = ""
    if "raw_address" not in miss:
        address = f'  <p class="address">{_esc(render_address(lst, spec.city))}</p>\n'
    rooms_word = format_decimal(lst.rooms, 0 if lst.rooms == int(lst.rooms) else 1)
    emb = lst.embedded
    return (
        "<!DOCTYPE html>\n<html lang=\"de\">\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{rooms_word}-Zimmer-Wohnung in {_esc(spec.city)}-{_esc(lst.district)}</title>\n</head>\n<body>\n"
        f'<article class="expose" data-listing-id="{lst.id}">\n'
        f"  <h1>{rooms_word}-Zimmer-Wohnung in {_esc(lst.district)}</h1>\n"
        '  <dl class="facts">\n' + "\n".join(facts) + "\n  </dl>\n"
        '  <ul class="features">\n' + features + "\n  </ul>\n"
        + address +
        f'  <div class="description">Wohnung in {_esc(lst.district)}, {_esc(spec.city)}. '
        f"Gute Lage, {rooms_word} Zimmer.</div>\n"
        f'  <script>var expose = {{id: "{lst.id}", lat:{emb.lat!r}, lng:{emb.lon!r}}};</script>\n'
        "</article>\n</body>\n</html>\n"
    )


def index_path(spec: SyntheticSiteSpec, sort: str, page: int) -> str:
    return f"/search/{spec.place}/{spec.object_type}/{sort}/page-{page}.html"


def _sorted_ids(listings, sort: str) -> list[Listing]:
    if sort == "newest":
        return sorted(listings, key=lambda l: l.id, reverse=True)
    if sort == "price_asc":
        return sorted(listings, key=lambda l: (l.rent_net_eur, l.id))
    return sorted(listings, key=lambda l: (-l.size_sqm, l.id))


def render_index(spec: SyntheticSiteSpec, listings, sort: str, page: int, per_page: int, n_pages: int) -> str:
    chunk = listings[(page - 1) * per_page: page * per_page]
    items = "\n".join(
        f'  <li><a class="listing-link" href="/expose/{l.id}.html">{_esc(l.district)}, '
        f"{_esc(format_decimal(l.size_sqm, 2))} m²</a></li>"
        for l in chunk
    )
    nav = f'<a class="next" href="page-{page + 1}.html">Weiter</a>\n' if page < n_pages else ""
    return (
        "<!DOCTYPE html>\n<html lang=\"de\">\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>Wohnungen in {_esc(spec.city)} ({sort}, Seite {page})</title>\n</head>\n<body>\n"
        f'<ul class="results">\n{items}\n</ul>\n{nav}'
        '<a class="legal" href="/private/impressum.html">Impressum</a>\n'
        "</body>\n</html>\n"
    )


def render_robots(spec: SyntheticSiteSpec) -> str:
    lines = ["User-agent: *"]
    if spec.crawl_delay_s is not None:
        lines.append(f"Crawl-delay: {spec.crawl_delay_s:g}")
    lines += [f"Disallow: {p}" for p in spec.robots_disallow] or ["Disallow:"]
    return "\n".join(lines) + "\n"


def build_gazetteer(spec: SyntheticSiteSpec, listings) -> Gazetteer:
    grid = PostalGrid(spec.bbox)
    gaz = Gazetteer()
    gaz.add(GazetteerEntry(spec.city, GeoPoint(*spec.center), "city"))
    for code, name in zip(grid.codes, grid.names):
        gaz.add(GazetteerEntry(name, grid.centroids()[code], "district"))
        gaz.add(GazetteerEntry(code, grid.centroids()[code], "postcode"))
    by_street: dict[str, list[Listing]] = {}
    for l in listings:
        by_street.setdefault(l.street, []).append(l)
    for street in sorted(by_street):
        group = by_street[street]
        lat = float(np.mean([l.point.lat for l in group]))
        lon = float(np.mean([l.point.lon for l in group]))
        gaz.add(GazetteerEntry(street, GeoPoint(lat, lon, GEOCODED), "street"))
    for l in listings:
        p = l.geocode_point or l.point
        gaz.add(GazetteerEntry(f"{l.street} {l.house_number}", GeoPoint(p.lat, p.lon, GEOCODED), "address"))
    return gaz


def generate_site(spec: SyntheticSiteSpec, out_dir) -> dict:
    """Write the site under ``out_dir/site`` plus manifest, gazetteer, centroids and rules.

    Returns the manifest dict.
    """
    from importlib.resources import files

    out = Path(out_dir)
    site = out / "site"
    if site.exists():
        shutil.rmtree(site)
    (site / "expose").mkdir(parents=True)
    (site / "private").mkdir()
    listings = sample_listings(spec)
    center = spec.frame.center

    for l in listings:
        (site / "expose" / f"{l.id}.html").write_text(render_listing(l, spec), encoding="utf-8")

    per_page = math.ceil(len(listings) / spec.pages)
    n_pages = math.ceil(len(listings) / per_page)
    page_urls = []
    for sort in spec.sort_orders:
        ordered = _sorted_ids(listings, sort)
        for page in range(1, n_pages + 1):
            path = index_path(spec, sort, page)
            target = site / path.lstrip("/")
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(render_index(spec, ordered, sort, page, per_page, n_pages), encoding="utf-8")
            page_urls.append(spec.base_url + path)
    (site / "private" / "impressum.html").write_text("<html><body>Impressum</body></html>\n", encoding="utf-8")
    robots = render_robots(spec)
    (site / "robots.txt").write_text(robots, encoding="utf-8")

    gaz = build_gazetteer(spec, listings)
    gaz.to_csv(out / "gazetteer.csv")
    centroids = PostalGrid(spec.bbox).centroids()
    write_postal_centroids(out / "postal_centroids.csv", centroids)
    (out / "answers.txt").write_text(benign_answers_text(), encoding="utf-8")
    (out / "rules.json").write_text(files("geoharvest").joinpath("data/fixture_rules.json").read_text("utf-8"),
                                    encoding="utf-8")

    counts: dict[str, int] = {}
    entries = []
    for l in listings:
        for a in l.anomalies:
            counts[a] = counts.get(a, 0) + 1
        fr = l.feature_row(center)
        entries.append({
            "id": l.id,
            "url": l.url,
            "features": {
                "target": fr.target, "dist_center_m": fr.dist_center_m, "size_sqm": fr.size_sqm,
                "year_built": fr.year_built, "nfeatures": fr.nfeatures, "rooms": fr.rooms,
                "postal_code": fr.postal_code, "amenities": sorted(fr.amenities),
            },
            "rent_net_eur": l.rent_net_eur,
            "true_point": [l.point.lat, l.point.lon],
            "embedded_point": [l.embedded.lat, l.embedded.lon],
            "geocode_point": [l.geocode_point.lat, l.geocode_point.lon] if l.geocode_point else None,
            "address": f"{l.street} {l.house_number}, {l.postal_code} {spec.city}",
            "anomalies": list(l.anomalies),
        })
    manifest = {
        "generator": {"name": "geoharvest.sitegen", "version": 1},
        "spec": spec.to_dict(),
        "robots_txt": robots,
        "robots_disallowed_urls": [spec.base_url + "/private/impressum.html"],
        "page_urls": page_urls,
        "pages_per_sort": n_pages,
        "per_page": per_page,
        "listing_urls": [l.url for l in listings],
        "listings": entries,
        "anomaly_counts": dict(sorted(counts.items())),
        "postal_centroids": {k: [v.lat, v.lon] for k, v in sorted(centroids.items())},
        "vocab": list(DEFAULT_VOCAB),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, ensure_ascii=False) + "\n",
                                       encoding="utf-8")
    parse_robots(robots, spec.base_url)  # sanity: the emitted file must parse cleanly
    return manifest


def manifest_feature_rows(manifest: dict) -> list[FeatureRow]:
    rows = []
    for e in manifest["listings"]:
        f = e["features"]
        rows.append(FeatureRow(
            id=e["id"], target=f["target"], dist_center_m=f["dist_center_m"], size_sqm=f["size_sqm"],
            year_built=f["year_built"], nfeatures=f["nfeatures"], rooms=f["rooms"], postal_code=f["postal_code"],
            amenities=frozenset(f["amenities"]),
        ))
    return rows


def synthetic_rows(spec: SyntheticSiteSpec) -> list[FeatureRow]:
    """Ground-truth feature rows straight from the generator (no HTML round trip)."""
    center = spec.frame.center
    return [l.feature_row(center) for l in sample_listings(spec)]
