"""Command line interface: the scraping workflow as file-based stages.

Each stage reads its predecessor's artifacts from the run directory, writes
its own, and records a manifest with content hashes of inputs and outputs
(including the predecessor's manifest, which chains the stages together).

Exit codes: 0 ok, 2 invalid input or config, 3 stage failure,
4 blocked by the compliance gate.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import fcntl
import hashlib
import io
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urlsplit

import numpy as np

from . import __version__
from .compliance import (
    STOP,
    ComplianceError,
    assess_viability,
    is_allowed,
    load_answers,
    parse_robots,
    serialize_robots,
)
from .config import ConfigError, PipelineConfig, fixture_config, load_config
from .extractor import (
    ExtractionRuleSet,
    default_rules,
    read_records_jsonl,
    write_issues_csv,
    write_records_csv,
    write_records_jsonl,
)
from .fetcher import OK, FetchAborted, PlanError, SearchQuery, crawl_index, fetch_robots, host_of, run_plan
from .geo import CityFrame, GeocodeCache, GeoPoint, NominatimBackend, StubBackend, load_postal_centroids
from .model.evaluate import evaluate, nearest_postal, prediction_grid
from .model.features import (
    FeatureSchema,
    Profile,
    build_features,
    read_features_csv,
    write_features_csv,
)
from .model.forest import ForestParams, fit_random_forest
from .model.gam import GamSpec, fit_gam, shrinkage_spec, simple_spec
from .model.io import load_model, save_model
from .pipeline import extract_pages, geocode_records
from .quality import (
    ExclusionCriteria,
    apply_exclusions,
    apply_rules,
    default_rules as default_quality_rules,
    impute_distance_by_postal,
    load_rules,
    quality_report,
    write_exclusion_ledger,
)

logger = logging.getLogger("geoharvest")

EXIT_OK, EXIT_INVALID, EXIT_FAILED, EXIT_BLOCKED = 0, 2, 3, 4

STAGES = ("assess", "fetch", "extract", "geocode", "quality", "model", "gridmap")
PREDECESSOR = {"fetch": "assess", "extract": "fetch", "geocode": "extract", "quality": "geocode",
               "model": "quality", "evaluate": "model", "gridmap": "model"}


class InvalidInput(Exception):
    """Missing predecessor artifacts or unusable arguments (exit 2)."""


class ComplianceBlock(Exception):
    """The viability gate refused the fetch (exit 4)."""


# -- helpers -----------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


@contextlib.contextmanager
def run_lock(out_dir: Path):
    """Advisory lock so that two runs never share an output directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    fh = open(out_dir / ".geoharvest.lock", "w")
    try:
        fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except OSError as exc:
        fh.close()
        raise InvalidInput(f"output directory {out_dir} is locked by another run") from exc
    try:
        yield
    finally:
        fcntl.flock(fh, fcntl.LOCK_UN)
        fh.close()


class StageRun:
    """Collects inputs/outputs of one stage and writes its manifest."""

    def __init__(self, name: str, cfg: PipelineConfig, manifest_name: str = "manifest.json"):
        self.name = name
        self.cfg = cfg
        self.root = cfg.output_dir
        self.dir = self.root / ("model" if name == "evaluate" else name)
        self.manifest_path = self.dir / (manifest_name if name != "evaluate" else "manifest.evaluate.json")
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.logs: list[Path] = []
        self.extra: dict = {}
        self.started = time.time()

    def rel(self, p: Path) -> str:
        p = Path(p).resolve()
        try:
            return p.relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(p)

    def need(self, path: Path, what: str) -> Path:
        if not path.exists():
            raise InvalidInput(f"{what} not found: {path} (run the earlier stage first)")
        return path

    def add_input(self, path: Path) -> Path:
        self.inputs[self.rel(path)] = sha256_file(path)
        return path

    def add_output(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return path

    def predecessor(self) -> Path | None:
        prev = PREDECESSOR.get(self.name)
        if prev is None:
            return None
        m = self.root / prev / "manifest.json"
        self.need(m, f"{prev} stage manifest")
        # a blocked assessment still hands its verdict to fetch, which enforces the gate
        if _read_json(m).get("status") not in (("ok", "blocked") if prev == "assess" else ("ok",)):
            raise InvalidInput(f"the {prev} stage did not complete successfully")
        return self.add_input(m)

    def write_manifest(self, status: str, error: str = "") -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        prev = PREDECESSOR.get(self.name)
        manifest = {
            "stage": self.name,
            "status": status,
            "geoharvest_version": __version__,
            "seed": self.cfg.seed,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.raw,
            "predecessor": prev,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {self.rel(p): sha256_file(p) for p in sorted(self.outputs) if p.exists()},
            "logs": sorted(self.rel(p) for p in self.logs),
            "started": datetime.fromtimestamp(self.started, timezone.utc).isoformat(),
            "duration_s": round(time.time() - self.started, 3),
            **self.extra,
        }
        if error:
            manifest["error"] = error
        _write_json(self.manifest_path, manifest)


def _run_stage(name: str, cfg: PipelineConfig, body, **kw) -> int:
    st = StageRun(name, cfg)
    st.dir.mkdir(parents=True, exist_ok=True)
    try:
        if name != "assess":
            st.predecessor()
        body(st, **kw)
    except InvalidInput as exc:
        logger.error("%s: %s", name, exc)
        st.write_manifest("failed", str(exc))
        return EXIT_INVALID
    except ComplianceBlock as exc:
        logger.error("%s: %s", name, exc)
        st.write_manifest("blocked", str(exc))
        return EXIT_BLOCKED
    except Exception as exc:  # any other failure: keep partial artifacts, mark the manifest
        logger.exception("%s stage failed", name)
        st.write_manifest("failed", f"{type(exc).__name__}: {exc}")
        return EXIT_FAILED
    st.write_manifest("ok")
    logger.info("%s: ok (%d output file(s))", name, len(st.outputs))
    return EXIT_OK


def _frame(cfg: PipelineConfig) -> CityFrame:
    return CityFrame(GeoPoint(*cfg.center), tuple(cfg.bbox), cfg.city_name)


# -- stages ------------------------------------------------------------------


def stage_assess(st: StageRun) -> None:
    cfg = st.cfg
    if cfg.answers_path is None:
        raise InvalidInput("no viability answers file configured (answers)")
    assessment = load_answers(st.add_input(cfg.answers_path))
    robots_ok = True
    if cfg.robots_path is not None:
        policy = parse_robots(st.add_input(cfg.robots_path).read_text(encoding="utf-8"), host_of(cfg.base_url))
        start = SearchQuery(cfg.base_url, cfg.place, cfg.object_type, cfg.sort_orders).first_pages()
        robots_ok = all(is_allowed(policy, urlsplit(u).path or "/", cfg.user_agent) for u in start)
    verdict = assess_viability(assessment, robots_allows_target=robots_ok)
    d = verdict.to_dict()
    d["notes"] = dict(sorted(assessment.notes.items()))
    _write_json(st.add_output(st.dir / "verdict.json"), d)
    (st.add_output(st.dir / "verdict.txt")).write_text(verdict.render(), encoding="utf-8")
    print(verdict.render(), end="")
    st.extra["verdict"] = verdict.level
    if verdict.level == STOP:
        raise ComplianceBlock("viability verdict is 'stop'; fetching requires --acknowledge-risk")


def _page_name(url: str) -> str:
    return hashlib.sha1(url.encode("utf-8")).hexdigest()[:16] + ".html"


def stage_fetch(st: StageRun, acknowledge_risk: bool = False, refetch: bool = False) -> None:
    cfg = st.cfg
    verdict = _read_json(st.add_input(st.need(cfg.output_dir / "assess" / "verdict.json", "viability verdict")))
    if verdict["level"] == STOP:
        if not acknowledge_risk:
            raise ComplianceBlock("viability verdict is 'stop' (triggered: "
                                  f"{', '.join(verdict['triggered_questions']) or 'robots.txt'}); "
                                  "pass --acknowledge-risk to override")
        logger.warning("fetching despite a 'stop' verdict: risk acknowledged on the command line")
        st.extra["risk_acknowledged"] = True
    pages_dir = st.dir / "pages"
    pages_dir.mkdir(exist_ok=True)
    index_path = st.dir / "index.json"
    previous = {}
    if index_path.exists() and not refetch:
        for e in _read_json(index_path):
            if e["kind"] == "listing" and e["status"] == OK and (st.dir / e["file"]).exists():
                previous[e["url"]] = e
    audit = st.dir / "audit.jsonl"
    st.logs.append(audit)
    client_kw = {"audit_path": audit}
    server = None
    if cfg.is_fixture:
        from .sitegen.server import FixtureServer

        server_log = st.dir / "server_log.jsonl"
        server_log.write_text("", encoding="utf-8")
        st.logs.append(server_log)
        server = FixtureServer(cfg.fixture_dir / "site", log_path=server_log).start()
        client_kw["rewrite"] = {cfg.base_url.rstrip("/"): server.base_url}
    try:
        plan = cfg.fetch_plan()
        policy, client = fetch_robots(cfg.base_url, plan, **client_kw)
        (st.add_output(st.dir / "robots.txt")).write_text(serialize_robots(policy), encoding="utf-8")
        entries = []

        def store(result, kind):
            entry = {"url": result.url, "kind": kind, "status": result.status, "code": result.code,
                     "attempt": result.attempt, "file": None}
            if result.status == OK:
                name = "pages/" + _page_name(result.url)
                (st.dir / name).write_bytes(result.body)
                entry["file"] = name
                entry["sha256"] = hashlib.sha256(result.body).hexdigest()
            entries.append(entry)

        def get_index(url):
            res = client.get(url)
            store(res, "index")
            return res.body if res.status == OK else None

        query = SearchQuery(cfg.base_url, cfg.place, cfg.object_type, cfg.sort_orders)
        rules = _rules(cfg)
        listing_urls, _ = crawl_index(query, rules.link_rules, get_index)
        todo = [u for u in listing_urls if u not in previous]
        if previous:
            logger.info("incremental run: %d listing(s) already fetched, %d new", len(listing_urls) - len(todo),
                        len(todo))
        reused = [previous[u] for u in listing_urls if u in previous]
        log = run_plan(cfg.fetch_plan(todo), policy, lambda r: store(r, "listing"), client=client)
    except FetchAborted as exc:
        raise RuntimeError(str(exc)) from exc
    finally:
        if server is not None:
            server.stop()
    # final index: index pages in crawl order, then listings in discovery order
    by_url = {e["url"]: e for e in entries if e["kind"] == "listing"}
    by_url.update({e["url"]: e for e in reused})
    index = [e for e in entries if e["kind"] == "index"] + [by_url[u] for u in listing_urls if u in by_url]
    _write_json(st.add_output(index_path), index)
    (st.add_output(st.dir / "listing_urls.txt")).write_text("".join(u + "\n" for u in listing_urls),
                                                           encoding="utf-8")
    for e in index:
        if e["file"]:
            st.add_output(st.dir / e["file"])
    st.extra["fetched_at"] = datetime.now(timezone.utc).replace(microsecond=0).isoformat()
    st.extra["statuses"] = log.statuses()
    st.extra["reused"] = len(reused)
    st.extra["warnings"] = log.warnings
    gaps = log.start_gaps()
    st.extra["min_request_gap_s"] = min(gaps) if gaps else None


def _rules(cfg: PipelineConfig) -> ExtractionRuleSet:
    return ExtractionRuleSet.load(cfg.rules_path) if cfg.rules_path else default_rules()


def stage_extract(st: StageRun) -> None:
    cfg = st.cfg
    fdir = cfg.output_dir / "fetch"
    index = _read_json(st.add_input(st.need(fdir / "index.json", "fetch index")))
    scraped_at = cfg.as_of or _read_json(fdir / "manifest.json").get("fetched_at")
    rules = _rules(cfg)
    if cfg.rules_path:
        st.add_input(cfg.rules_path)
    pages = []
    for e in index:
        if e["kind"] == "listing" and e["status"] == OK:
            pages.append((e["url"], (fdir / e["file"]).read_bytes()))
    records, issues = extract_pages(pages, rules, scraped_at=scraped_at)
    write_records_jsonl(records, st.add_output(st.dir / "records.jsonl"))
    write_records_csv(records, st.add_output(st.dir / "records.csv"))
    write_issues_csv(issues, st.add_output(st.dir / "issues.csv"))
    st.extra["n_records"] = len(records)
    st.extra["n_issues"] = len(issues)


def stage_geocode(st: StageRun) -> None:
    cfg = st.cfg
    records = read_records_jsonl(st.add_input(st.need(cfg.output_dir / "extract" / "records.jsonl", "records")))
    if cfg.geocoder == "stub":
        backend = StubBackend.from_csv(st.add_input(cfg.gazetteer_path))
    else:
        backend = NominatimBackend(user_agent=cfg.user_agent)
    cache = GeocodeCache(st.dir / "cache.json") if cfg.geocode_cache else None
    out = geocode_records(records, backend, _frame(cfg), cache, cfg.fallback_embedded)
    if cache is not None:
        cache.save()
        st.logs.append(st.dir / "cache.json")
    write_records_jsonl(out, st.add_output(st.dir / "records.jsonl"))
    write_records_csv(out, st.add_output(st.dir / "records.csv"))
    st.extra["geocoded"] = sum(1 for r in out if r.coords is not None)
    st.extra["n_records"] = len(out)


def stage_quality(st: StageRun) -> None:
    cfg = st.cfg
    records = read_records_jsonl(st.add_input(st.need(cfg.output_dir / "geocode" / "records.jsonl", "records")))
    if not records:
        raise InvalidInput("no records to assess")
    if cfg.quality_rules_path:
        rules = load_rules(st.add_input(cfg.quality_rules_path))
    else:
        rules = default_quality_rules(cfg.scrape_year, cfg.bbox)
    ctx = {"bbox": cfg.bbox}
    flagged = apply_rules(records, rules, ctx)
    report = quality_report(flagged, rules, ctx=ctx)
    centroids = {}
    if cfg.postal_centroids_path:
        centroids = load_postal_centroids(st.add_input(cfg.postal_centroids_path))
    imputed = impute_distance_by_postal(flagged, centroids, GeoPoint(*cfg.center), cfg.centroid_radius_m)
    criteria = ExclusionCriteria.from_dict(cfg.exclusions)
    retained, counts, ledger = apply_exclusions(imputed, criteria)
    report.records_retained = len(retained)
    (st.add_output(st.dir / "report.json")).write_text(report.to_json() + "\n", encoding="utf-8")
    (st.add_output(st.dir / "report.txt")).write_text(report.render(), encoding="utf-8")
    write_exclusion_ledger(counts, ledger, st.add_output(st.dir / "exclusions.csv"))
    _write_json(st.add_output(st.dir / "exclusion_counts.json"), counts)
    write_records_jsonl(retained, st.add_output(st.dir / "retained.jsonl"))
    write_records_csv(retained, st.add_output(st.dir / "retained.csv"))
    print(report.render(), end="")
    st.extra["retained"] = len(retained)


def _gam_spec(cfg: PipelineConfig, kind: str) -> GamSpec:
    if kind == "gam" and cfg.gam_spec_path:
        return GamSpec.from_dict(_read_json(cfg.gam_spec_path))
    return simple_spec(cfg.gam_k) if kind == "gam" else shrinkage_spec(cfg.gam_k)


def _split(rows, train_n: int, seed: int):
    n = len(rows)
    if n < 20:
        raise InvalidInput(f"only {n} usable feature rows; need at least 20")
    if train_n >= n:
        clamped = int(math.floor(0.7 * n))
        logger.warning("train_n=%d >= %d rows; training on %d rows instead", train_n, n, clamped)
        train_n = clamped
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)
    tr, te = np.sort(idx[:train_n]), np.sort(idx[train_n:])
    return [rows[i] for i in tr], [rows[i] for i in te]


def stage_model(st: StageRun) -> None:
    cfg = st.cfg
    records = read_records_jsonl(st.add_input(st.need(cfg.output_dir / "quality" / "retained.jsonl",
                                                      "retained records")))
    rows, dropped = build_features(records, GeoPoint(*cfg.center))
    write_features_csv(rows, st.add_output(st.dir / "features.csv"))
    train, test = _split(rows, cfg.train_n, cfg.seed)
    _write_json(st.add_output(st.dir / "split.json"),
                {"seed": cfg.seed, "train_ids": [r.id for r in train], "test_ids": [r.id for r in test]})
    if cfg.gam_spec_path:
        st.add_input(cfg.gam_spec_path)
    summaries = {}
    for kind in cfg.model_kinds:
        if kind == "random_forest":
            params = ForestParams(cfg.n_trees, cfg.mtry, cfg.min_node)
            model = fit_random_forest(train, params, cfg.seed, schema=FeatureSchema.extended_for(train))
        else:
            model = fit_gam(train, _gam_spec(cfg, kind), cfg.seed)
        save_model(model, st.add_output(st.dir / f"{kind}.ghm"))
        summaries[kind] = model.summary()
        logger.info("%s: train rmse %.4f", kind, model.train_metrics["rmse"])
    _write_json(st.add_output(st.dir / "metrics.json"),
                {"n_rows": len(rows), "n_dropped": dropped, "n_train": len(train), "n_test": len(test),
                 "models": summaries})


def stage_evaluate(st: StageRun) -> None:
    cfg = st.cfg
    mdir = cfg.output_dir / "model"
    rows = read_features_csv(st.add_input(st.need(mdir / "features.csv", "feature table")))
    split = _read_json(st.add_input(mdir / "split.json"))
    test_ids = set(split["test_ids"])
    test = [r for r in rows if r.id in test_ids]
    results = {}
    preds = {}
    for kind in cfg.model_kinds:
        model = load_model(st.add_input(st.need(mdir / f"{kind}.ghm", f"{kind} model")))
        results[kind] = evaluate(model, test)
        preds[kind] = model.predict(test)
    _write_json(st.add_output(st.dir / "evaluation.json"), results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "rent_per_sqm"] + [f"pred_{k}" for k in cfg.model_kinds])
    for i, r in enumerate(test):
        w.writerow([r.id, repr(r.target)] + [repr(float(preds[k][i])) for k in cfg.model_kinds])
    (st.add_output(st.dir / "predictions.csv")).write_text(buf.getvalue(), encoding="utf-8")
    for kind, res in results.items():
        r2a = "n/a" if res["r2_adj"] is None else f"{res['r2_adj']:.3f}"
        print(f"{kind:<14} rmse {res['rmse']:.3f} EUR/m2   R2 {res['r2']:.3f}   R2adj {r2a}")


def stage_gridmap(st: StageRun) -> None:
    cfg = st.cfg
    model = load_model(st.add_input(st.need(cfg.output_dir / "model" / f"{cfg.grid_model}.ghm", "model")))
    p = dict(cfg.profile)
    if "amenities" in p:
        p["amenities"] = frozenset(p["amenities"])
    profile = Profile(**p)
    postal_of = None
    schema = getattr(model, "schema", None)
    if schema is not None and schema.plz_levels and cfg.postal_centroids_path:
        postal_of = nearest_postal(load_postal_centroids(st.add_input(cfg.postal_centroids_path)))
    grid = prediction_grid(model, cfg.bbox, GeoPoint(*cfg.center), profile, cell_m=cfg.grid_cell_m,
                           postal_of=postal_of)
    grid.write(st.add_output(st.dir / "grid.geojson"), st.add_output(st.dir / "grid.csv"))
    st.extra["shape"] = [grid.n_rows, grid.n_cols]


# -- commands ----------------------------------------------------------------


def _load(args) -> PipelineConfig:
    overrides = {"output_dir": args.out, "seed": args.seed}
    for attr, key in (("min_delay", "politeness.min_delay_s"), ("max_retries", "politeness.max_retries"),
                      ("user_agent", "politeness.user_agent"), ("window", "politeness.window"),
                      ("train_n", "model.train_n"), ("spec", "model.spec")):
        v = getattr(args, attr, None)
        if v is not None:
            if key == "model.spec":
                v = str(Path(v).resolve())
            overrides[key] = v
    if getattr(args, "unsafe_ignore_robots", False):
        overrides["politeness.respect_robots"] = False
    return load_config(args.config, overrides)


def _stage_command(name, body):
    def command(args) -> int:
        cfg = _load(args)
        with run_lock(cfg.output_dir):
            return _run_stage(name, cfg, body)

    return command


def cmd_fetch(args) -> int:
    cfg = _load(args)
    with run_lock(cfg.output_dir):
        return _run_stage("fetch", cfg, stage_fetch, acknowledge_risk=args.acknowledge_risk, refetch=args.refetch)


def cmd_model(args) -> int:
    cfg = _load(args)
    with run_lock(cfg.output_dir):
        if args.action == "fit":
            return _run_stage("model", cfg, stage_model)
        if args.action == "evaluate":
            return _run_stage("evaluate", cfg, stage_evaluate)
        return _run_stage("gridmap", cfg, stage_gridmap)


def cmd_run(args) -> int:
    """All stages in order, stopping at the first failure."""
    cfg = _load(args)
    steps = [("assess", stage_assess, {}),
             ("fetch", stage_fetch, {"acknowledge_risk": args.acknowledge_risk, "refetch": args.refetch}),
             ("extract", stage_extract, {}), ("geocode", stage_geocode, {}), ("quality", stage_quality, {}),
             ("model", stage_model, {}), ("evaluate", stage_evaluate, {}), ("gridmap", stage_gridmap, {})]
    with run_lock(cfg.output_dir):
        for name, body, kw in steps:
            code = _run_stage(name, cfg, body, **kw)
            if code == EXIT_BLOCKED and name == "assess":
                continue  # the gate is enforced by fetch
            if code != EXIT_OK:
                return code
    return EXIT_OK


def cmd_sitegen(args) -> int:
    from .sitegen.generator import SyntheticSiteSpec, generate_site

    spec = SyntheticSiteSpec.load(args.spec) if args.spec else SyntheticSiteSpec()
    if args.n is not None:
        spec.n_listings = args.n
    if args.pages is not None:
        spec.pages = args.pages
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    out = Path(args.out or "fixture")
    manifest = generate_site(spec, out)
    cfg = fixture_config(".", output_dir="run", seed=spec.seed, min_delay_s=args.min_delay,
                         as_of=f"{spec.scrape_date}T00:00:00+00:00")
    _write_json(out / "pipeline.json", cfg)
    print(f"site with {len(manifest['listings'])} listings and {len(manifest['page_urls'])} index pages "
          f"written to {out}; pipeline config: {out / 'pipeline.json'}")
    return EXIT_OK


def _failure_script(items) -> dict:
    script = {}
    for item in items or ():
        path, sep, codes = item.partition("=")
        if not sep:
            raise InvalidInput(f"--fail expects PATH=CODE[,CODE...], got {item!r}")
        script[path] = [int(c) for c in codes.split(",") if c]
    return script


def cmd_serve(args) -> int:
    from .sitegen.server import FixtureServer, ServerError

    try:
        server = FixtureServer(args.dir, args.port, _failure_script(args.fail), args.request_log)
    except ServerError as exc:
        logger.error("%s", exc)
        return EXIT_FAILED
    server.start()
    print(f"serving {args.dir} at {server.base_url}", flush=True)
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="pipeline config (JSON)")
    p.add_argument("--out", default=d, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, default=d, help="random seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _window(text: str) -> list[int]:
    try:
        a, b = (int(x) for x in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError("window must look like 22-6") from None
    return [a, b]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoharvest", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"geoharvest {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    add("assess", "evaluate the viability questionnaire and robots.txt")
    for name in ("fetch", "run"):
        p = add(name, "retrieve pages politely" if name == "fetch" else "run every stage in order")
        p.add_argument("--min-delay", type=float, help="seconds between requests to one host")
        p.add_argument("--window", type=_window, help="allowed local hours, e.g. 22-6")
        p.add_argument("--max-retries", type=int, help="retries after the first attempt")
        p.add_argument("--user-agent")
        p.add_argument("--unsafe-ignore-robots", action="store_true",
                       help="do not enforce robots.txt (logged prominently)")
        p.add_argument("--acknowledge-risk", action="store_true", help="fetch despite a 'stop' verdict")
        p.add_argument("--refetch", action="store_true", help="ignore pages fetched by an earlier run")
        if name == "run":
            p.add_argument("--train-n", type=int)
            p.add_argument("--spec", help="GAM spec (JSON) for the 'gam' model")
    add("extract", "turn fetched pages into listing records")
    add("geocode", "normalize and geocode addresses")
    add("quality", "quality report, imputation and exclusions")
    p = add("model", "fit, evaluate or map hedonic models")
    p.add_argument("action", choices=("fit", "evaluate", "gridmap"))
    p.add_argument("--spec", help="GAM spec (JSON) for the 'gam' model")
    p.add_argument("--train-n", type=int, help="training sample size")
    add("gridmap", "prediction grid for a fixed apartment profile")
    p = add("sitegen", "generate a synthetic listing site")
    p.add_argument("--spec", help="site spec (JSON)")
    p.add_argument("--n", type=int, help="number of listings")
    p.add_argument("--pages", type=int, help="index pages per sort order")
    p.add_argument("--min-delay", type=float, default=10.0, help="min_delay_s written to pipeline.json")
    p = add("serve", "serve a generated site over HTTP")
    p.add_argument("--dir", required=True, help="site directory (the 'site' folder of a sitegen output)")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--fail", action="append", metavar="PATH=CODES", help="scripted statuses, e.g. /a.html=503,503")
    p.add_argument("--request-log", help="append request records (JSON lines) here")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    return parser


COMMANDS = {
    "assess": _stage_command("assess", stage_assess),
    "fetch": cmd_fetch,
    "extract": _stage_command("extract", stage_extract),
    "geocode": _stage_command("geocode", stage_geocode),
    "quality": _stage_command("quality", stage_quality),
    "gridmap": _stage_command("gridmap", stage_gridmap),
    "model": cmd_model,
    "run": cmd_run,
    "sitegen": cmd_sitegen,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ComplianceError, InvalidInput, PlanError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
