"""Polite page retrieval.

One logical queue per host. A request is only started once ``min_delay_s``
has passed since the previous request to the same host *completed*, so the
gap between request start times seen by the server is never shorter than
the delay, however long a response takes. Transient failures (5xx and
network errors) are retried with exponential backoff; 4xx answers are
terminal. Every network attempt and every terminal result is written to an
append-only audit log.
"""

from __future__ import annotations

import json
import logging
import math
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable
from urllib.parse import urlsplit

from .compliance import RobotsPolicy, is_allowed, parse_robots
from .extractor import extract_links

logger = logging.getLogger(__name__)

OK = "ok"
HTTP_ERROR = "http_error"
NETWORK_ERROR = "network_error"
SKIPPED_DISALLOWED = "skipped_disallowed"
SKIPPED_WINDOW = "skipped_window"
STATUSES = (OK, HTTP_ERROR, NETWORK_ERROR, SKIPPED_DISALLOWED, SKIPPED_WINDOW)

DEFAULT_MIN_DELAY_S = 10.0
DEFAULT_USER_AGENT = "geoharvest/0.1 (research crawler)"


class FetchError(RuntimeError):
    pass


class PlanError(FetchError, ValueError):
    pass


class NetworkError(FetchError):
    """Raised by an ``http_get`` implementation when no HTTP response arrived."""


class FetchAborted(FetchError):
    """The result sink failed; ``log`` holds everything recorded up to that point."""

    def __init__(self, message: str, log: FetchLog):
        super().__init__(message)
        self.log = log


def host_of(url_or_host: str) -> str:
    if "//" in url_or_host:
        return urlsplit(url_or_host).netloc.lower()
    return url_or_host.lower().rstrip("/")


def _robots_path(url: str) -> str:
    parts = urlsplit(url)
    return (parts.path or "/") + (f"?{parts.query}" if parts.query else "")


def in_window(hour: int, window: tuple[int, int] | None) -> bool:
    """True when ``hour`` lies in [start, end); windows may wrap past midnight."""
    if window is None:
        return True
    start, end = window
    if start == end:
        return True
    if start < end:
        return start <= hour < end
    return hour >= start or hour < end


@dataclass(frozen=True)
class FetchPlan:
    seed_urls: tuple[str, ...]
    min_delay_s: float = DEFAULT_MIN_DELAY_S
    window: tuple[int, int] | None = None
    max_retries: int = 3  # retries after the first attempt
    user_agent: str = DEFAULT_USER_AGENT
    respect_robots: bool = True
    timeout_s: float = 30.0

    def validate(self) -> None:
        if not math.isfinite(self.min_delay_s) or self.min_delay_s < 0:
            raise PlanError("min_delay_s must be a finite number >= 0")
        if self.window is not None:
            if len(self.window) != 2 or not all(isinstance(h, int) and 0 <= h < 24 for h in self.window):
                raise PlanError("window hours must be integers in [0, 24)")
        if not isinstance(self.max_retries, int) or not 0 <= self.max_retries <= 10:
            raise PlanError("max_retries must be an integer in [0, 10]")
        if not self.user_agent.strip():
            raise PlanError("user_agent must not be empty")
        for u in self.seed_urls:
            if urlsplit(u).scheme not in ("http", "https"):
                raise PlanError(f"not an absolute http(s) URL: {u!r}")

    def effective_delay(self, policy: RobotsPolicy | None) -> float:
        delay = policy.crawl_delay_for(self.user_agent) if policy else None
        return max(self.min_delay_s, delay or 0.0)


@dataclass(frozen=True)
class FetchResult:
    url: str
    status: str
    fetched_at: str
    attempt: int
    code: int | None = None
    body: bytes | None = None
    error: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown fetch status {self.status!r}")
        if (self.body is not None) != (self.status == OK):
            raise ValueError("body must be present exactly when status is ok")

    def to_dict(self) -> dict:
        return {"url": self.url, "status": self.status, "code": self.code, "attempt": self.attempt,
                "fetched_at": self.fetched_at, "error": self.error}


@dataclass(frozen=True)
class RequestRecord:
    url: str
    attempt: int
    started: float  # client monotonic clock
    finished: float
    code: int | None
    error: str = ""


@dataclass
class FetchLog:
    results: list[FetchResult] = field(default_factory=list)
    requests: list[RequestRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def statuses(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.results:
            out[r.status] = out.get(r.status, 0) + 1
        return out

    def start_gaps(self, host: str | None = None) -> list[float]:
        reqs = [r for r in self.requests if host is None or host_of(r.url) == host]
        return [b.started - a.started for a, b in zip(reqs, reqs[1:])]


def urllib_get(url: str, headers: dict, timeout: float) -> tuple[int, bytes]:
    """Default transport: returns (status code, body); raises NetworkError without a response."""
    req = urllib.request.Request(url, headers=headers)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, b""
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise NetworkError(str(exc)) from exc


class PoliteClient:
    """Serialized, rate-limited, retrying HTTP client.

    ``rewrite`` maps a logical base URL (as it appears in plans, logs and
    records) to the base actually contacted, which lets a fixture server on
    an ephemeral port stand in for the logical host.
    """

    def __init__(
        self,
        plan: FetchPlan,
        policy: RobotsPolicy | None = None,
        http_get: Callable[[str, dict, float], tuple[int, bytes]] = urllib_get,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        now: Callable[[], datetime] = lambda: datetime.now().astimezone(),
        audit_path: str | Path | None = None,
        rewrite: dict[str, str] | None = None,
        log: FetchLog | None = None,
    ):
        plan.validate()
        self.plan = plan
        self.policy = policy
        self.delay = plan.effective_delay(policy)
        self.http_get = http_get
        self.clock = clock
        self.sleep = sleep
        self.now = now
        self.audit_path = Path(audit_path) if audit_path else None
        self.rewrite = dict(rewrite or {})
        self.log = log if log is not None else FetchLog()
        self._ready_at: dict[str, float] = {}
        if plan.min_delay_s < 1.0:
            logger.warning("min_delay_s=%s is below one second; use only against local fixtures", plan.min_delay_s)
        if not plan.respect_robots:
            self._warn("robots.txt enforcement DISABLED by explicit override (--unsafe-ignore-robots)")

    # -- audit ---------------------------------------------------------------

    def _audit(self, record: dict) -> None:
        if self.audit_path is None:
            return
        with open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def _warn(self, msg: str) -> None:
        logger.warning(msg)
        self.log.warnings.append(msg)
        self._audit({"ts": self.now().isoformat(), "event": "warning", "message": msg})

    # -- timing --------------------------------------------------------------

    def _wait_turn(self, host: str, extra: float = 0.0) -> None:
        ready = self._ready_at.get(host, -math.inf) + extra
        while True:
            remaining = ready - self.clock()
            if remaining <= 0:
                return
            self.sleep(remaining)

    def _physical(self, url: str) -> str:
        for logical, actual in self.rewrite.items():
            if url.startswith(logical):
                return actual + url[len(logical):]
        return url

    def _request(self, url: str, attempt: int, backoff: float) -> tuple[int | None, bytes | None, str]:
        host = host_of(url)
        self._wait_turn(host, backoff)
        started = self.clock()
        code, body, err = None, None, ""
        try:
            code, body = self.http_get(self._physical(url), {"User-Agent": self.plan.user_agent},
                                       self.plan.timeout_s)
        except NetworkError as exc:
            err = str(exc) or "network error"
        finished = self.clock()
        # the next request to this host may start min_delay after this one completed
        self._ready_at[host] = finished + self.delay
        self.log.requests.append(RequestRecord(url, attempt, started, finished, code, err))
        self._audit({"ts": self.now().isoformat(), "event": "request", "url": url, "attempt": attempt,
                     "code": code, "error": err})
        return code, body, err

    # -- public --------------------------------------------------------------

    def allowed(self, url: str) -> bool:
        if not self.plan.respect_robots or self.policy is None:
            return True
        return is_allowed(self.policy, _robots_path(url), self.plan.user_agent)

    def get(self, url: str) -> FetchResult:
        """Fetch one URL to a terminal result."""
        stamp = self.now()
        if not self.allowed(url):
            return self._finish(FetchResult(url, SKIPPED_DISALLOWED, stamp.isoformat(), 0))
        if not in_window(stamp.hour, self.plan.window):
            return self._finish(FetchResult(url, SKIPPED_WINDOW, stamp.isoformat(), 0))
        attempt = 0
        while True:
            attempt += 1
            # retry k waits min_delay * 2^(k-1) after the failed attempt completed;
            # the regular gap already covers one min_delay of that
            backoff = 0.0 if attempt == 1 else self.delay * (2 ** (attempt - 2) - 1)
            code, body, err = self._request(url, attempt, backoff)
            when = self.now().isoformat()
            if code is not None and 200 <= code < 300:
                return self._finish(FetchResult(url, OK, when, attempt, code, body or b""))
            transient = code is None or code >= 500
            if not transient or attempt > self.plan.max_retries:
                status = NETWORK_ERROR if code is None else HTTP_ERROR
                return self._finish(FetchResult(url, status, when, attempt, code, None, err))
            logger.info("transient failure for %s (%s); retry %d", url, code or err, attempt)

    def _finish(self, result: FetchResult) -> FetchResult:
        self.log.results.append(result)
        self._audit({"ts": result.fetched_at, "event": "result", **result.to_dict()})
        return result


def fetch_robots(base_url: str, plan: FetchPlan, **client_kw) -> tuple[RobotsPolicy, PoliteClient]:
    """Fetch and parse ``/robots.txt``; return the policy and a client bound to it.

    404 (or any 4xx) means no restrictions. A 5xx or network failure means
    the site's wishes are unknown and everything is treated as disallowed.
    """
    bootstrap = PoliteClient(FetchPlan((), plan.min_delay_s, None, plan.max_retries, plan.user_agent,
                                       True, plan.timeout_s), None, **client_kw)
    url = base_url.rstrip("/") + "/robots.txt"
    res = bootstrap.get(url)
    host = host_of(base_url)
    if res.status == OK:
        policy = parse_robots(res.body.decode("utf-8", "replace"), host)
    elif res.status == HTTP_ERROR and res.code is not None and res.code < 500:
        policy = parse_robots("", host)
    else:
        logger.warning("robots.txt unreachable (%s); treating site as fully disallowed", res.status)
        policy = parse_robots("User-agent: *\nDisallow: /\n", host)
    client_kw = dict(client_kw)
    client_kw["log"] = bootstrap.log
    client = PoliteClient(plan, policy, **client_kw)
    # carry over the politeness state of the robots.txt request
    client._ready_at = dict(bootstrap._ready_at)
    return policy, client


def run_plan(plan: FetchPlan, policy: RobotsPolicy | None, sink: Callable[[FetchResult], None],
             client: PoliteClient | None = None, **client_kw) -> FetchLog:
    """Fetch every seed URL once, delivering each terminal result to ``sink`` in order."""
    plan.validate()
    if policy is not None:
        for u in plan.seed_urls:
            if host_of(u) != host_of(policy.host):
                raise PlanError(f"URL {u} is not on the policy host {policy.host}")
    client = client or PoliteClient(plan, policy, **client_kw)
    for url in plan.seed_urls:
        result = client.get(url)
        try:
            sink(result)
        except Exception as exc:
            raise FetchAborted(f"sink failed on {url}: {exc}", client.log) from exc
    return client.log


# -- listing discovery -------------------------------------------------------


@dataclass(frozen=True)
class SearchQuery:
    base_url: str
    place: str
    object_type: str
    sort_orders: tuple[str, ...] = ("newest",)
    path_template: str = "/search/{place}/{object_type}/{sort}/page-1.html"

    def first_pages(self) -> list[str]:
        base = self.base_url.rstrip("/")
        return [base + self.path_template.format(place=self.place, object_type=self.object_type, sort=s)
                for s in self.sort_orders]


def crawl_index(query: SearchQuery, link_rules: dict, get_page: Callable[[str], bytes | None],
                max_pages: int = 1000) -> tuple[list[str], list[str]]:
    """Walk result pages for every sort order.

    Returns (listing URLs de-duplicated in first-seen order, index page URLs visited).
    """
    listings: list[str] = []
    seen_listings: set[str] = set()
    visited: list[str] = []
    seen_pages: set[str] = set()
    for url in query.first_pages():
        while url and url not in seen_pages and len(visited) < max_pages:
            seen_pages.add(url)
            body = get_page(url)
            if body is None:
                break
            visited.append(url)
            for link in extract_links(body, link_rules["listing"], url):
                if link not in seen_listings:
                    seen_listings.add(link)
                    listings.append(link)
            nxt = extract_links(body, link_rules["next_page"], url) if link_rules.get("next_page") else []
            url = nxt[0] if nxt else None
    if not visited:
        logger.warning("no result pages could be fetched for %s", query.base_url)
    elif not listings:
        logger.warning("listing rule %r matched nothing on %d pages", link_rules.get("listing"), len(visited))
    return listings, visited


def enumerate_listings(query: SearchQuery, link_rules: dict, get_page: Callable[[str], bytes | None],
                       max_pages: int = 1000) -> list[str]:
    return crawl_index(query, link_rules, get_page, max_pages)[0]


def client_page_getter(client: PoliteClient) -> Callable[[str], bytes | None]:
    def get(url: str) -> bytes | None:
        res = client.get(url)
        return res.body if res.status == OK else None

    return get


def now_utc() -> datetime:
    return datetime.now(timezone.utc)
