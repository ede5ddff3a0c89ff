"""Pipeline configuration file (JSON) shared by all CLI stages.

Relative paths are resolved against the directory holding the config file.
A fixture target points at a directory produced by ``geoharvest sitegen``;
the site, gazetteer, postal centroids and search parameters are then taken
from that directory unless the config overrides them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .fetcher import DEFAULT_MIN_DELAY_S, DEFAULT_USER_AGENT, FetchPlan


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    path: Path | None
    base_dir: Path
    raw: dict
    output_dir: Path
    seed: int
    as_of: str | None
    # target
    fixture_dir: Path | None
    base_url: str
    place: str
    object_type: str
    sort_orders: tuple[str, ...]
    # politeness
    min_delay_s: float
    window: tuple[int, int] | None
    max_retries: int
    user_agent: str
    respect_robots: bool
    # inputs
    answers_path: Path | None
    robots_path: Path | None
    rules_path: Path | None
    geocoder: str
    gazetteer_path: Path | None
    geocode_cache: bool
    fallback_embedded: bool
    city_name: str
    center: tuple[float, float]
    bbox: tuple[float, float, float, float]
    postal_centroids_path: Path | None
    centroid_radius_m: float
    quality_rules_path: Path | None
    scrape_year: int
    exclusions: dict
    model_kinds: tuple[str, ...]
    train_n: int
    n_trees: int
    mtry: int | None
    min_node: int
    gam_k: int
    gam_spec_path: Path | None
    grid_model: str
    grid_cell_m: float
    profile: dict = field(default_factory=dict)

    @property
    def is_fixture(self) -> bool:
        return self.fixture_dir is not None

    def fetch_plan(self, seed_urls=()) -> FetchPlan:
        return FetchPlan(tuple(seed_urls), self.min_delay_s, self.window, self.max_retries, self.user_agent,
                         self.respect_robots)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode("utf-8")).hexdigest()


def _path(base: Path, value) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Read and validate a pipeline config; ``overrides`` win over file values."""
    if path is None:
        raise ConfigError("a pipeline config is required (--config)")
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw, path.parent.resolve(), path, overrides)


def config_from_dict(raw: dict, base_dir: Path, path: Path | None = None,
                     overrides: dict | None = None) -> PipelineConfig:
    raw = json.loads(json.dumps(raw))  # private copy
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        section, _, key = k.rpartition(".")
        target = raw
        if section:
            target = raw.setdefault(section, {})
        target[key] = v
    base = Path(base_dir)
    target = raw.get("target", {})
    fixture_dir = _path(base, target.get("fixture_dir"))
    manifest = {}
    if fixture_dir is not None:
        mpath = fixture_dir / "manifest.json"
        if not mpath.is_file():
            raise ConfigError(f"fixture directory has no manifest.json: {fixture_dir}")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))["spec"]
    elif not target.get("base_url"):
        raise ConfigError("target needs either fixture_dir or base_url")

    def fixture_file(name):
        return fixture_dir / name if fixture_dir is not None else None

    search = raw.get("search", {})
    pol = raw.get("politeness", {})
    geo = raw.get("geocoder", {})
    city = raw.get("city", {})
    qual = raw.get("quality", {})
    mod = raw.get("model", {})
    grid = raw.get("grid", {})
    window = pol.get("window")
    try:
        cfg = PipelineConfig(
            path=path,
            base_dir=base,
            raw=raw,
            output_dir=_path(base, raw.get("output_dir", "run")),
            seed=int(raw.get("seed", 0)),
            as_of=raw.get("as_of"),
            fixture_dir=fixture_dir,
            base_url=target.get("base_url") or manifest.get("base_url", ""),
            place=search.get("place") or manifest.get("place", ""),
            object_type=search.get("object_type") or manifest.get("object_type", ""),
            sort_orders=tuple(search.get("sort_orders") or manifest.get("sort_orders", ("newest",))),
            min_delay_s=float(pol.get("min_delay_s", DEFAULT_MIN_DELAY_S)),
            window=tuple(int(h) for h in window) if window else None,
            max_retries=int(pol.get("max_retries", 3)),
            user_agent=pol.get("user_agent", DEFAULT_USER_AGENT),
            respect_robots=bool(pol.get("respect_robots", True)),
            answers_path=_path(base, raw.get("answers")) or fixture_file("answers.txt"),
            robots_path=_path(base, raw.get("robots_file")) or fixture_file("site/robots.txt"),
            rules_path=_path(base, raw.get("rules")) or fixture_file("rules.json"),
            geocoder=geo.get("backend", "stub"),
            gazetteer_path=_path(base, geo.get("gazetteer")) or fixture_file("gazetteer.csv"),
            geocode_cache=bool(geo.get("cache", True)),
            fallback_embedded=bool(geo.get("fallback_embedded", False)),
            city_name=city.get("name") or manifest.get("city", ""),
            center=tuple(city.get("center") or manifest.get("center") or ()),
            bbox=tuple(city.get("bbox") or manifest.get("bbox") or ()),
            postal_centroids_path=_path(base, city.get("postal_centroids")) or fixture_file("postal_centroids.csv"),
            centroid_radius_m=float(city.get("centroid_radius_m", 1000.0)),
            quality_rules_path=_path(base, qual.get("rules")),
            scrape_year=int(qual.get("scrape_year", int((raw.get("as_of") or "2021")[:4]))),
            exclusions=dict(qual.get("exclusions", {})),
            model_kinds=tuple(mod.get("kinds", ("gam", "gam_shrinkage", "random_forest"))),
            train_n=int(mod.get("train_n", 1000)),
            n_trees=int(mod.get("n_trees", 500)),
            mtry=mod.get("mtry"),
            min_node=int(mod.get("min_node", 5)),
            gam_k=int(mod.get("k", 10)),
            gam_spec_path=_path(base, mod.get("spec")),
            grid_model=grid.get("model", "gam"),
            grid_cell_m=float(grid.get("cell_m", 500.0)),
            profile=dict(grid.get("profile", {})),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    validate(cfg)
    return cfg


MODEL_KINDS = ("gam", "gam_shrinkage", "random_forest")


def validate(cfg: PipelineConfig) -> None:
    if len(cfg.center) != 2:
        raise ConfigError("city.center must be [lat, lon]")
    if len(cfg.bbox) != 4 or not (cfg.bbox[0] < cfg.bbox[1] and cfg.bbox[2] < cfg.bbox[3]):
        raise ConfigError("city.bbox must be [lat_min, lat_max, lon_min, lon_max]")
    if cfg.geocoder not in ("stub", "nominatim"):
        raise ConfigError(f"unknown geocoder backend {cfg.geocoder!r}")
    if cfg.geocoder == "stub" and cfg.gazetteer_path is None:
        raise ConfigError("the stub geocoder needs geocoder.gazetteer")
    for kind in cfg.model_kinds:
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
    if cfg.grid_model not in MODEL_KINDS:
        raise ConfigError(f"unknown grid model {cfg.grid_model!r}")
    if cfg.train_n < 10:
        raise ConfigError("model.train_n must be at least 10")
    for name in ("answers_path", "robots_path", "rules_path", "gazetteer_path", "postal_centroids_path",
                 "quality_rules_path", "gam_spec_path"):
        p = getattr(cfg, name)
        if p is not None and not p.exists():
            raise ConfigError(f"{name.removesuffix('_path')}: file not found: {p}")
    try:
        cfg.fetch_plan().validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def fixture_config(fixture_dir: str, output_dir: str = "run", seed: int = 42, min_delay_s: float = DEFAULT_MIN_DELAY_S,
                   as_of: str | None = None) -> dict:
    """A ready-to-use config dict for a generated fixture site (paths relative to the config file)."""
    return {
        "target": {"fixture_dir": fixture_dir},
        "output_dir": output_dir,
        "seed": seed,
        "as_of": as_of,
        "politeness": {"min_delay_s": min_delay_s, "max_retries": 3, "user_agent": DEFAULT_USER_AGENT},
        "geocoder": {"backend": "stub"},
        "quality": {"exclusions": {"require": ["rent_net_eur", "size_sqm", "year_built", "dist_center_m"]}},
        "model": {"kinds": ["gam", "gam_shrinkage", "random_forest"], "train_n": 1000, "n_trees": 500},
        "grid": {"model": "gam", "cell_m": 500},
    }
