import math

import numpy as np
import pytest

from conftest import listing_pages
from geoharvest.extractor import ListingRecord, ParsedNumber, default_rules as default_extraction_rules
from geoharvest.geo import GeoPoint, StubBackend, from_local_xy, jitter_point
from geoharvest.pipeline import extract_pages, geocode_records
from geoharvest.quality import (
    ATTRIBUTES,
    IMPUTED_DISTANCE,
    UNIMPUTED,
    ExclusionCriteria,
    PlausibilityRule,
    QualityError,
    apply_exclusions,
    apply_rules,
    default_rules,
    impute_distance_by_postal,
    obfuscation_aggregation_check,
    quality_report,
)

CENTER = GeoPoint(51.3397, 12.3731)


def rec(i, **kw):
    base = dict(
        id=f"r{i}",
        url=f"http://h/expose/r{i}.html",
        rent_net_eur=ParsedNumber(500.0, "eur"),
        size_sqm=ParsedNumber(60.0, "sqm"),
        year_built=1990,
    )
    base.update(kw)
    return ListingRecord(**base)


# -- report ----------------------------------------------------------------------


def test_three_of_ten_missing_is_thirty_percent():
    corpus = [rec(i, year_built=None if i < 3 else 1990) for i in range(10)]
    r = quality_report(corpus, default_rules(2021))
    assert r.attributes["year_built"].missing == 3
    assert r.attributes["year_built"].missing_pct == 30.00


def test_future_year_is_implausible():
    corpus = [rec(0, year_built=2087)] + [rec(i) for i in range(1, 4)]
    r = quality_report(corpus, default_rules(2021))
    s = r.attributes["year_built"]
    assert s.implausible == 1
    assert s.rule_hits == {"year_range": 1}
    assert s.implausible_pct == 25.0


def test_renovation_note_does_not_count_as_implausible():
    corpus = [rec(0, year_built=2015, amenities=frozenset({"renovated"}))]
    s = quality_report(corpus, default_rules(2021)).attributes["year_built"]
    assert s.rule_hits == {"renovated_after_2010": 1}
    assert s.implausible == 0


def test_percentages_sum_to_hundred():
    rng = np.random.default_rng(3)
    corpus = [rec(i, year_built=int(rng.choice([1900, 2087])) if rng.random() < 0.7 else None,
                  rooms=None if rng.random() < 0.4 else ParsedNumber(2.0, "rooms"))
              for i in range(37)]
    r = quality_report(corpus, default_rules(2021))
    for a, _ in ATTRIBUTES:
        s = r.attributes[a]
        assert s.missing_pct + s.implausible_pct + s.valid_pct == pytest.approx(100.0, abs=0.011)


def test_price_per_sqm_derived():
    corpus = [rec(0, rent_net_eur=ParsedNumber(5000.0, "eur"), size_sqm=ParsedNumber(20.0, "sqm"))]
    s = quality_report(corpus, default_rules(2021)).attributes["price_per_sqm"]
    assert s.rule_hits == {"price_per_sqm_range": 1}


def test_empty_corpus_rejected():
    with pytest.raises(QualityError):
        quality_report([], default_rules(2021))


@pytest.mark.parametrize("kw", [
    dict(id="x", attribute="year_built"),
    dict(id="x", attribute="year_built", range=(5, 1)),
    dict(id="x", attribute="colour", range=(0, 1)),
    dict(id="x", attribute="year_built", range=(0, 1), action="delete"),
    dict(id="x", attribute="year_built", relation="nonsense"),
])
def test_bad_rules_rejected(kw):
    with pytest.raises(QualityError):
        PlausibilityRule(**kw)


def test_null_out_rule_clears_value():
    rules = [PlausibilityRule("year_range", "year_built", range=(1200, 2023), action="null_out")]
    out = apply_rules([rec(0, year_built=2087), rec(1)], rules)
    assert out[0].year_built is None and "rule:year_range" in out[0].flags
    assert out[1].year_built == 1990 and out[1].flags == ()


# -- exclusions ------------------------------------------------------------------


def test_exclusion_requires_fields():
    corpus = [rec(0, dist_center_m=100.0), rec(1, dist_center_m=None), rec(2, year_built=None, dist_center_m=5.0)]
    kept, counts, ledger = apply_exclusions(corpus, ExclusionCriteria())
    assert [r.id for r in kept] == ["r0"]
    assert counts == {"require:dist_center_m": 1, "require:year_built": 1}
    assert sorted(ledger) == [("r1", "require:dist_center_m"), ("r2", "require:year_built")]


def test_each_record_charged_to_first_failing_criterion():
    corpus = [rec(0, year_built=None, dist_center_m=None)]
    _, counts, _ = apply_exclusions(corpus, ExclusionCriteria())
    assert counts == {"require:year_built": 1}


def test_flag_exclusion_matches_prefix():
    corpus = [rec(0, dist_center_m=1.0, flags=("rule:year_range",)), rec(1, dist_center_m=1.0)]
    kept, counts, _ = apply_exclusions(corpus, ExclusionCriteria(exclude_flags=("rule",)))
    assert [r.id for r in kept] == ["r1"]
    assert counts == {"flag:rule": 1}


def test_building_level_excludes_imputed_points():
    imputed = GeoPoint(51.3, 12.3, "imputed", 1000.0)
    exact = GeoPoint(51.3, 12.3)
    corpus = [rec(0, coords=imputed, dist_center_m=1.0), rec(1, coords=exact, dist_center_m=1.0)]
    kept, counts, _ = apply_exclusions(corpus, ExclusionCriteria(building_level=True))
    assert [r.id for r in kept] == ["r1"]
    assert counts == {"building_level": 1}


def test_unknown_required_field_rejected():
    with pytest.raises(QualityError):
        ExclusionCriteria(require=("colour",))


def test_ledger_accounts_for_every_dropped_record():
    rng = np.random.default_rng(9)
    corpus = [rec(i, year_built=None if rng.random() < 0.3 else 1990,
                  dist_center_m=None if rng.random() < 0.2 else 10.0,
                  size_sqm=None if rng.random() < 0.1 else ParsedNumber(50.0, "sqm"))
              for i in range(200)]
    kept, counts, ledger = apply_exclusions(corpus, ExclusionCriteria())
    assert sum(counts.values()) == len(ledger) == len(corpus) - len(kept)


# -- imputation ------------------------------------------------------------------


def test_imputation_uses_postal_centroid():
    centroid = GeoPoint(51.36, 12.37)
    out = impute_distance_by_postal([rec(0, postal_code="04155")], {"04155": centroid}, CENTER, 800.0)
    r = out[0]
    assert r.coords.quality == "imputed"
    assert r.coords.positional_error_m == 800.0
    assert r.dist_center_m == pytest.approx(2260, abs=20)
    assert IMPUTED_DISTANCE in r.flags


def test_imputation_without_centroid_flags_record():
    out = impute_distance_by_postal([rec(0, postal_code="99999")], {}, CENTER)
    assert out[0].dist_center_m is None
    assert UNIMPUTED in out[0].flags


def test_imputation_never_overwrites():
    p = GeoPoint(51.30, 12.30)
    corpus = [rec(0, coords=p, dist_center_m=123.0, postal_code="04155")]
    out = impute_distance_by_postal(corpus, {"04155": GeoPoint(51.36, 12.37)}, CENTER)
    assert out == corpus


# -- obfuscation -----------------------------------------------------------------


def test_zero_jitter_has_zero_error():
    pts = [GeoPoint(51.33 + 0.001 * i, 12.37) for i in range(20)]
    assert obfuscation_aggregation_check(pts, pts, 500.0) == (0.0, 0.0)


def test_ring_jitter_mean_error_in_ring():
    rng = np.random.default_rng(1)
    true = [GeoPoint(*from_local_xy(*rng.uniform(-1000, 1000, 2), CENTER)) for _ in range(400)]
    jit = [jitter_point(p, rng, 150, 200) for p in true]
    point_err, cell_err = obfuscation_aggregation_check(true, jit, 500.0, origin=CENTER)
    assert 150 <= point_err <= 200
    assert cell_err < point_err


def test_obfuscation_input_validation():
    with pytest.raises(QualityError):
        obfuscation_aggregation_check([CENTER], [], 500.0)
    with pytest.raises(QualityError):
        obfuscation_aggregation_check([CENTER], [CENTER], 0.0)


# -- fixture corpus ----------------------------------------------------------------


@pytest.fixture(scope="module")
def messy_corpus(messy_site):
    root, spec, manifest = messy_site
    records, _ = extract_pages(listing_pages(root, manifest), default_extraction_rules())
    backend = StubBackend.from_csv(root / "gazetteer.csv")
    return geocode_records(records, backend, spec.frame), spec, manifest


def test_messy_site_report_counts_match_manifest(messy_corpus):
    corpus, spec, manifest = messy_corpus
    counts = manifest["anomaly_counts"]
    report = quality_report(corpus, default_rules(2021, spec.bbox))
    a = report.attributes
    assert a["year_built"].missing == counts["missing:year_built"]
    assert a["energy_class"].missing == counts["missing:energy_class"]
    assert a["rooms"].missing == counts["missing:rooms"]
    assert a["coords"].implausible == counts["out_of_bbox"]
    assert a["coords"].missing == counts["address_corruption"] + counts["missing:raw_address"]
    assert report.qualified_values == {"size_sqm": counts["qualifier:size_sqm"]}


def test_report_renders_one_row_per_attribute(messy_corpus):
    corpus, spec, _ = messy_corpus
    text = quality_report(corpus, default_rules(2021, spec.bbox)).render()
    for _, label in ATTRIBUTES:
        assert sum(line.startswith(label) for line in text.splitlines()) == 1
    assert text.endswith("\n")
    assert math.isclose(float(text.split("Year of construction")[1].split("|")[1]),
                        round(100 * sum(r.year_built is None for r in corpus) / len(corpus), 2))
