import json
import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from geoharvest.sitegen import AnomalyRates, SyntheticSiteSpec, generate_site  # noqa: E402


def make_site(root: Path, **kw):
    anomalies = kw.pop("anomalies", None)
    spec = SyntheticSiteSpec(**kw)
    if anomalies is not None:
        spec.anomalies = anomalies
    manifest = generate_site(spec, root)
    return spec, manifest


@pytest.fixture(scope="session")
def clean_site(tmp_path_factory):
    """Anomaly-free site, 60 listings over 3 pages per sort order."""
    root = tmp_path_factory.mktemp("clean_site")
    spec, manifest = make_site(root, n_listings=60, pages=3, seed=7)
    return root, spec, manifest


@pytest.fixture(scope="session")
def messy_site(tmp_path_factory):
    """Site with every anomaly class switched on."""
    root = tmp_path_factory.mktemp("messy_site")
    rates = AnomalyRates(
        missing={"year_built": 0.3, "energy_class": 0.5, "rooms": 0.1, "raw_address": 0.05},
        qualifier=0.1, reverted_address=0.2, address_noise=0.2, missing_house_number=0.1,
        jitter=0.5, out_of_bbox=0.05, address_corruption=0.05,
    )
    spec, manifest = make_site(root, n_listings=400, pages=4, seed=11, anomalies=rates)
    return root, spec, manifest


def listing_pages(root: Path, manifest: dict):
    """(url, html bytes) for every listing, read straight from the site tree."""
    pages = []
    for e in manifest["listings"]:
        path = e["url"].split("//", 1)[1].split("/", 1)[1]
        pages.append((e["url"], (root / "site" / path).read_bytes()))
    return pages


def write_config(fixture_dir: Path, out_dir: Path, **overrides) -> Path:
    from geoharvest.config import fixture_config

    cfg = fixture_config(str(fixture_dir), output_dir=str(out_dir), min_delay_s=0.0,
                         as_of="2021-03-01T00:00:00+00:00")
    for key, value in overrides.items():
        section, _, name = key.rpartition(".")
        (cfg.setdefault(section, {}) if section else cfg)[name] = value
    path = out_dir.parent / f"{out_dir.name}.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


@pytest.fixture
def no_network(monkeypatch):
    """Fail the test on any outbound socket connection."""
    attempts = []

    def refuse(self, *args, **kwargs):
        attempts.append(args)
        raise AssertionError(f"network access attempted: {args}")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    return attempts
