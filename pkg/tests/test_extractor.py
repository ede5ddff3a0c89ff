import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoharvest.extractor import (
    AMENITY_VOCABULARY,
    ExtractionError,
    ExtractionRuleSet,
    ListingRecord,
    ParsedNumber,
    UnparseableNumber,
    default_rules,
    extract_embedded_coords,
    extract_links,
    extract_record,
    parse_numeric,
    read_records_jsonl,
    records_to_csv,
    render_number,
    write_records_jsonl,
)
from geoharvest.geo import EMBEDDED, haversine_m, GeoPoint
from conftest import listing_pages

RULES = default_rules()


# -- parse_numeric -----------------------------------------------------------


@pytest.mark.parametrize("text,value,unit,qual", [
    ("ca. 56,5 m²", 56.5, "sqm", "approx"),
    ("500 €", 500.0, "eur", "exact"),
    ("mind. 1.200 €", 1200.0, "eur", "at_least"),
    ("1.234,56 €", 1234.56, "eur", "exact"),
    ("bis zu 3 Zimmer", 3.0, "rooms", "at_most"),
    ("2,5 Zimmer", 2.5, "rooms", "exact"),
    ("12", 12.0, "none", "exact"),
    ("1.200", 1200.0, "none", "exact"),
    ("Baujahr 1.5", 1.5, "none", "exact"),
])
def test_parse_numeric_de(text, value, unit, qual):
    assert parse_numeric(text, "de") == ParsedNumber(value, unit, qual)


@pytest.mark.parametrize("text,value,qual", [
    ("approx. 1,234.5 sqm", 1234.5, "approx"),
    ("at least 700 EUR", 700.0, "at_least"),
    ("at most 2 rooms", 2.0, "at_most"),
])
def test_parse_numeric_en(text, value, qual):
    n = parse_numeric(text, "en")
    assert (n.value, n.qualifier) == (value, qual)


@pytest.mark.parametrize("text", ["", "   ", "k. A.", "auf Anfrage €"])
def test_parse_numeric_without_digits(text):
    with pytest.raises(UnparseableNumber):
        parse_numeric(text)


@settings(max_examples=300, deadline=None)
@given(
    cents=st.integers(1, 10**9),
    unit=st.sampled_from(["eur", "sqm", "rooms", "none"]),
    qual=st.sampled_from(["exact", "approx", "at_least", "at_most"]),
)
def test_render_parse_round_trip_de(cents, unit, qual):
    n = ParsedNumber(cents / 100, unit, qual)
    back = parse_numeric(render_number(n, "de"), "de")
    assert back.qualifier == qual
    assert back.unit == unit
    assert back.value == pytest.approx(n.value, abs=1e-9)


# -- extract_record ----------------------------------------------------------


def test_clean_fixture_pages_extract_without_issues(clean_site):
    root, spec, manifest = clean_site
    for (url, html), truth in zip(listing_pages(root, manifest), manifest["listings"]):
        rec, issues = extract_record(html, RULES, url)
        assert issues == []
        f = truth["features"]
        assert rec.id == truth["id"]
        assert rec.rent_net_eur.value == truth["rent_net_eur"]
        assert rec.size_sqm.value == f["size_sqm"]
        assert rec.rooms.value == f["rooms"]
        assert rec.year_built == f["year_built"]
        assert rec.postal_code == f["postal_code"]
        assert rec.amenities == set(f["amenities"])
        assert rec.raw_address == truth["address"]
        assert (rec.coords_embedded.lat, rec.coords_embedded.lon) == tuple(truth["embedded_point"])


def test_amenities_against_page_markup(clean_site):
    root, _, manifest = clean_site
    url, html = listing_pages(root, manifest)[0]
    rec, _ = extract_record(html, RULES, url)
    tags = set(re.findall(r'data-feature="([a-z_]+)"', html.decode()))
    assert rec.amenities == tags
    assert rec.amenities <= set(AMENITY_VOCABULARY)


def test_extraction_is_pure(clean_site):
    root, _, manifest = clean_site
    url, html = listing_pages(root, manifest)[3]
    assert extract_record(html, RULES, url) == extract_record(html, RULES, url)


def _page(clean_site, i=0):
    root, _, manifest = clean_site
    url, html = listing_pages(root, manifest)[i]
    return url, html.decode("utf-8")


def test_missing_year_gives_one_missing_issue(clean_site):
    url, html = _page(clean_site)
    mutated = re.sub(r'<dt>Baujahr</dt><dd class="year">\d+</dd>', "", html)
    rec, issues = extract_record(mutated, RULES, url)
    assert rec.year_built is None
    assert [(i.field, i.kind) for i in issues] == [("year_built", "missing")]


def test_rent_german_format(clean_site):
    url, html = _page(clean_site)
    mutated = re.sub(r'(<dd class="rent">)[^<]*(</dd>)', r"\g<1>1.234,56 €\2", html)
    rec, issues = extract_record(mutated, RULES, url)
    assert rec.rent_net_eur == ParsedNumber(1234.56, "eur", "exact")
    assert issues == []


MUTATIONS = {
    "rent_net_eur": (r'(<dd class="rent">)[^<]*(</dd>)', r"\1auf Anfrage\2"),
    "size_sqm": (r'(<dd class="size">)[^<]*(</dd>)', r"\1\2"),
    "rooms": (r'(<dd class="rooms">)[^<]*(</dd>)', r"\1viele\2"),
    "year_built": (r'(<dd class="year">)[^<]*(</dd>)', r"\1unbekannt\2"),
    "running_costs_eur": (r'<dd class="costs">[^<]*</dd>', ""),
    "energy_class": (r'<dd class="energy">[^<]*</dd>', ""),
    "coords_embedded": (r"lat:[-0-9.]+", "lat:99.5"),
}


@pytest.mark.parametrize("field", sorted(MUTATIONS))
def test_field_level_isolation(clean_site, field):
    url, html = _page(clean_site, 5)
    base, base_issues = extract_record(html, RULES, url)
    pattern, repl = MUTATIONS[field]
    mutated, n = re.subn(pattern, repl, html)
    assert n == 1
    rec, issues = extract_record(mutated, RULES, url)
    assert base_issues == []
    assert {i.field for i in issues} == {field}
    assert getattr(rec, field) is None
    for name in ListingRecord.__dataclass_fields__:
        if name != field:
            assert getattr(rec, name) == getattr(base, name), name


def test_unexpected_qualifier_is_flagged():
    html = '<article class="expose" data-listing-id="x"><dl class="facts"><dd class="rent">ca. 500 €</dd></dl></article>'
    rec, issues = extract_record(html, RULES, "http://h/expose/x.html")
    assert rec.rent_net_eur.qualifier == "approx"
    assert ("rent_net_eur", "implausible_format") in {(i.field, i.kind) for i in issues}


def test_size_qualifier_is_expected():
    html = '<article class="expose" data-listing-id="x"><dl class="facts"><dd class="size">ca. 56,5 m²</dd></dl></article>'
    rec, issues = extract_record(html, RULES, "http://h/expose/x.html")
    assert rec.size_sqm == ParsedNumber(56.5, "sqm", "approx")
    assert "size_sqm" not in {i.field for i in issues}


def test_not_html_is_fatal_but_returns_record():
    rec, issues = extract_record(b"", RULES, "http://h/expose/abc.html")
    assert rec.id == "abc"
    assert [i.kind for i in issues] == ["fatal"]


def test_non_positive_size_is_unparseable():
    html = '<article class="expose" data-listing-id="x"><dl class="facts"><dd class="size">0 m²</dd></dl></article>'
    rec, issues = extract_record(html, RULES, "http://h/x")
    assert rec.size_sqm is None
    assert ("size_sqm", "unparseable") in {(i.field, i.kind) for i in issues}


# -- rule sets ---------------------------------------------------------------


def test_rule_set_round_trip():
    assert ExtractionRuleSet.from_dict(RULES.to_dict()) == RULES


@pytest.mark.parametrize("bad", [
    {"fields": [{"field": "rent_net_eur", "selector": "a"}, {"field": "rent_net_eur", "selector": "b"}]},
    {"fields": [{"field": "colour", "selector": "a"}]},
    {"fields": [{"field": "year_built", "selector": "a", "post": [{"regex_capture": "([0-9"}]}]},
    {"fields": [{"field": "year_built", "selector": "a", "post": [{"regex_capture": "[0-9]+"}]}]},
    {"fields": [{"field": "year_built", "selector": "a", "post": ["shout"]}]},
    {"fields": [{"field": "amenity:balcony", "selector": "a"}]},
    {"fields": [], "coord_rule": "lat:(\\d+)"},
])
def test_invalid_rule_sets_rejected(bad):
    with pytest.raises(ExtractionError):
        ExtractionRuleSet.from_dict(bad)


# -- links and coordinates ---------------------------------------------------


def test_extract_links_resolves_and_dedupes():
    html = '<a href="/a">1</a><a href="/a#x">2</a><a href="http://h/b">3</a>'
    assert extract_links(html, "a", "http://h/") == ["http://h/a", "http://h/b"]


def test_extract_links_no_match():
    assert extract_links("<p>nothing</p>", "a.next", "http://h/") == []


def test_pagination_chain_of_three_pages(tmp_path):
    from conftest import make_site

    spec, manifest = make_site(tmp_path, n_listings=30, pages=3, sort_orders=("newest",))
    chain = []
    url = manifest["page_urls"][0]
    while True:
        html = (tmp_path / "site" / url.split("/", 3)[3]).read_bytes()
        nxt = extract_links(html, RULES.link_rules["next_page"], url)
        if not nxt:
            break
        chain.append(nxt[0])
        url = nxt[0]
    assert chain == manifest["page_urls"][1:]
    assert len(chain) == 2


def test_embedded_coords():
    p, issues = extract_embedded_coords("<script>var x = {lat:51.34,lng:12.37};</script>", RULES.coord_rule)
    assert (p.lat, p.lon, p.quality) == (51.34, 12.37, EMBEDDED)
    assert issues == []


def test_embedded_coords_out_of_range():
    p, issues = extract_embedded_coords("lat:99.0,lng:12.0", RULES.coord_rule)
    assert p is None
    assert len(issues) == 1 and "latitude" in issues[0]


def test_embedded_coords_need_two_groups():
    with pytest.raises(ExtractionError):
        extract_embedded_coords("x", r"lat:(\d+)")


def test_obfuscated_fixture_coords_within_200m(messy_site):
    root, _, manifest = messy_site
    pages = dict(listing_pages(root, manifest))
    jittered = [e for e in manifest["listings"] if "jitter" in e["anomalies"]]
    assert len(jittered) > 100
    for e in jittered:
        rec, _ = extract_record(pages[e["url"]], RULES, e["url"])
        d = haversine_m(rec.coords_embedded, GeoPoint(*e["true_point"]))
        assert 150 - 0.5 <= d <= 200 + 0.5


# -- serialization -------------------------------------------------------------


def test_jsonl_round_trip(clean_site, tmp_path):
    root, _, manifest = clean_site
    recs = [extract_record(h, RULES, u)[0] for u, h in listing_pages(root, manifest)[:10]]
    path = tmp_path / "r.jsonl"
    write_records_jsonl(recs, path)
    assert read_records_jsonl(path) == recs


def test_csv_has_fixed_header(clean_site):
    root, _, manifest = clean_site
    recs = [extract_record(h, RULES, u)[0] for u, h in listing_pages(root, manifest)[:3]]
    text = records_to_csv(recs)
    header = text.splitlines()[0].split(",")
    assert header[:3] == ["id", "url", "scraped_at"]
    assert len(text.splitlines()) == 4
    assert text == records_to_csv(recs)
