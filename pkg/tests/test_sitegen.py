import hashlib
import json
import urllib.error
import urllib.request

import numpy as np
import pytest

from conftest import make_site
from geoharvest.geo import haversine_m, GeoPoint
from geoharvest.sitegen import AnomalyRates, FixtureServer, SyntheticSiteSpec, sample_listings
from geoharvest.sitegen.generator import HedonicSpec
from oracles import binomial_interval_99


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_same_spec_gives_byte_identical_tree(tmp_path):
    rates = AnomalyRates(missing={"year_built": 0.3}, jitter=0.5, out_of_bbox=0.1)
    make_site(tmp_path / "a", n_listings=80, pages=2, seed=3, anomalies=rates)
    make_site(tmp_path / "b", n_listings=80, pages=2, seed=3, anomalies=rates)
    make_site(tmp_path / "c", n_listings=80, pages=2, seed=4, anomalies=rates)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_missing_year_rate_is_binomial():
    spec = SyntheticSiteSpec(n_listings=10_000, seed=21, anomalies=AnomalyRates(missing={"year_built": 0.33}))
    k = sum("missing:year_built" in l.anomalies for l in sample_listings(spec))
    lo, hi = binomial_interval_99(10_000, 0.33)
    assert lo <= k <= hi


def test_jitter_offsets_lie_in_ring():
    spec = SyntheticSiteSpec(n_listings=2000, seed=2, anomalies=AnomalyRates(jitter=1.0))
    for l in sample_listings(spec):
        d = haversine_m(l.embedded, l.point)
        assert 150 - 0.5 <= d <= 200 + 0.5


def test_manifest_counts_match_listing_anomalies(messy_site):
    _, _, manifest = messy_site
    counts = {}
    for e in manifest["listings"]:
        for a in e["anomalies"]:
            counts[a] = counts.get(a, 0) + 1
    assert counts == manifest["anomaly_counts"]


def test_corruption_and_out_of_bbox_are_exclusive(messy_site):
    _, spec, manifest = messy_site
    lat_max = spec.bbox[1]
    for e in manifest["listings"]:
        a = set(e["anomalies"])
        assert not ({"address_corruption", "out_of_bbox"} <= a)
        if "out_of_bbox" in a:
            assert e["geocode_point"][0] > lat_max
        if "address_corruption" in a or "missing:raw_address" in a:
            assert e["geocode_point"] is None


def test_true_points_inside_bbox(messy_site):
    _, spec, manifest = messy_site
    la0, la1, lo0, lo1 = spec.bbox
    for e in manifest["listings"]:
        lat, lon = e["true_point"]
        assert la0 <= lat <= la1 and lo0 <= lon <= lo1


def test_distance_effect_is_decreasing():
    d = np.linspace(0, 15_000, 200)
    eff = HedonicSpec().distance_effect(d)
    assert np.all(np.diff(eff) < 0)


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        SyntheticSiteSpec(n_listings=2, pages=3).validate()
    with pytest.raises(ValueError):
        SyntheticSiteSpec(anomalies=AnomalyRates(missing={"id": 0.1})).validate()
    with pytest.raises(ValueError):
        SyntheticSiteSpec(anomalies=AnomalyRates(jitter=1.5)).validate()


def test_spec_round_trip():
    spec = SyntheticSiteSpec(n_listings=77, anomalies=AnomalyRates(missing={"rooms": 0.2}, jitter=0.1))
    assert SyntheticSiteSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_server_serves_site_files(clean_site):
    root, _, manifest = clean_site
    path = manifest["listing_urls"][0].split("/", 3)[3]
    with FixtureServer(root / "site") as srv:
        with urllib.request.urlopen(f"{srv.base_url}/{path}") as resp:
            assert resp.status == 200
            assert resp.read() == (root / "site" / path).read_bytes()
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(f"{srv.base_url}/nope.html")
        assert exc.value.code == 404
        assert srv.requested_paths() == ["/" + path, "/nope.html"]
        assert [e.status for e in srv.log] == [200, 404]


def test_server_rejects_path_traversal(clean_site):
    root, _, _ = clean_site
    with FixtureServer(root / "site") as srv:
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(f"{srv.base_url}/../manifest.json")
        assert exc.value.code in (403, 404)
