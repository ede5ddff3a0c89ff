"""Scraping compliance: robots.txt rules and the viability questionnaire.

robots.txt handling follows RFC 9309: groups are selected by the most
specific user-agent token, and within the selected rules the longest
matching path pattern wins, ``allow`` winning exact-length ties.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path

logger = logging.getLogger(__name__)

ALLOW = "allow"
DISALLOW = "disallow"


class ComplianceError(ValueError):
    """Raised for invalid viability answers."""


@dataclass(frozen=True)
class RobotsGroup:
    agents: tuple[str, ...]
    rules: tuple[tuple[str, str], ...] = ()
    crawl_delay_s: float | None = None


@dataclass(frozen=True)
class RobotsPolicy:
    host: str
    groups: tuple[RobotsGroup, ...] = ()
    crawl_delay_s: float | None = None
    fetched_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    skipped_lines: int = 0

    @property
    def permissive(self) -> bool:
        return not any(g.rules for g in self.groups) and self.crawl_delay_s is None

    def group_for(self, agent: str) -> list[RobotsGroup]:
        return _select_groups(self.groups, agent)

    def crawl_delay_for(self, agent: str) -> float | None:
        for g in self.group_for(agent):
            if g.crawl_delay_s is not None:
                return g.crawl_delay_s
        return self.crawl_delay_s


_LINE = re.compile(r"^\s*([A-Za-z-]+)\s*:\s*(.*?)\s*$")


def parse_robots(text: str, host: str, fetched_at: datetime | None = None) -> RobotsPolicy:
    """Parse a robots.txt body. Never raises; junk lines are counted and skipped."""
    groups: list[RobotsGroup] = []
    agents: list[str] = []
    rules: list[tuple[str, str]] = []
    delay: float | None = None
    in_rules = False
    skipped = 0

    def flush():
        if agents:
            groups.append(RobotsGroup(tuple(agents), tuple(rules), delay))

    for raw in (text or "").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            skipped += 1
            continue
        key, value = m.group(1).lower(), m.group(2)
        if key == "user-agent":
            if in_rules:
                flush()
                agents, rules, delay, in_rules = [], [], None, False
            if value:
                agents.append(value.lower())
            else:
                skipped += 1
        elif key in (ALLOW, DISALLOW):
            if not agents:
                skipped += 1
                continue
            in_rules = True
            if not value:
                # empty Disallow means "allow everything"; empty Allow is a no-op
                continue
            if not value.startswith("/") and "*" not in value:
                skipped += 1
                continue
            rules.append((key, value))
        elif key == "crawl-delay":
            if not agents:
                skipped += 1
                continue
            in_rules = True
            try:
                d = float(value)
            except ValueError:
                skipped += 1
                continue
            if d < 0 or d != d:
                skipped += 1
                continue
            delay = d
        else:
            # sitemap and unknown extension records are legal but unused
            if key != "sitemap":
                skipped += 1
    flush()

    if skipped:
        logger.warning("robots.txt for %s: skipped %d unparseable line(s)", host, skipped)
    return RobotsPolicy(
        host=host,
        groups=tuple(groups),
        crawl_delay_s=_policy_delay(groups),
        fetched_at=fetched_at or datetime.now(timezone.utc),
        skipped_lines=skipped,
    )


def _policy_delay(groups: list[RobotsGroup]) -> float | None:
    star = [g.crawl_delay_s for g in groups if "*" in g.agents and g.crawl_delay_s is not None]
    if star:
        return star[0]
    delays = [g.crawl_delay_s for g in groups if g.crawl_delay_s is not None]
    return max(delays) if delays else None


def serialize_robots(policy: RobotsPolicy) -> str:
    lines: list[str] = []
    for g in policy.groups:
        if lines:
            lines.append("")
        lines.extend(f"User-agent: {a}" for a in g.agents)
        if g.crawl_delay_s is not None:
            lines.append(f"Crawl-delay: {_fmt_delay(g.crawl_delay_s)}")
        if not g.rules and g.crawl_delay_s is None:
            lines.append("Disallow:")
        for kind, path in g.rules:
            lines.append(f"{kind.capitalize()}: {path}")
    return "\n".join(lines) + ("\n" if lines else "")


def _fmt_delay(d: float) -> str:
    short = f"{d:g}"
    return short if float(short) == d else repr(d)


def _product_token(agent: str) -> str:
    token = agent.strip().split("/", 1)[0].split()[0] if agent.strip() else ""
    return token.lower()


def _select_groups(groups, agent: str) -> list[RobotsGroup]:
    token = _product_token(agent)
    best_len = -1
    best: list[RobotsGroup] = []
    for g in groups:
        for a in g.agents:
            if a != "*" and token.startswith(a) and len(a) >= best_len:
                if len(a) > best_len:
                    best_len, best = len(a), []
                if not best or best[-1] is not g:
                    best.append(g)
    if best:
        return best
    return [g for g in groups if "*" in g.agents]


@lru_cache(maxsize=4096)
def _pattern_regex(pattern: str) -> re.Pattern:
    anchored = pattern.endswith("$")
    body = pattern[:-1] if anchored else pattern
    rx = ".*".join(re.escape(part) for part in body.split("*"))
    return re.compile(rx + ("$" if anchored else ""), re.DOTALL)


def rule_matches(pattern: str, path: str) -> bool:
    return _pattern_regex(pattern).match(path) is not None


def is_allowed(policy: RobotsPolicy, url_path: str, agent: str) -> bool:
    if not url_path.startswith("/"):
        url_path = "/" + url_path
    best_len = -1
    allowed = True
    for g in _select_groups(policy.groups, agent):
        for kind, pattern in g.rules:
            if not rule_matches(pattern, url_path):
                continue
            n = len(pattern)
            if n > best_len or (n == best_len and kind == ALLOW):
                best_len = n
                allowed = kind == ALLOW
    return allowed


# -- viability questionnaire ------------------------------------------------

QUESTION_IDS = tuple(f"Q{i}" for i in range(1, 12))

QUESTIONS = {
    "Q1": "Could the same data be obtained some other way (API, data request, purchase)?",
    "Q2": "Do the site's terms of use forbid automated collection?",
    "Q3": "Is a rights holder named and a content license stated?",
    "Q4": "Could the crawl load harm the site or its hosting server?",
    "Q5": "Has the operator blocked access or demanded that collection stop?",
    "Q6": "Does robots.txt restrict or forbid the planned crawl?",
    "Q7": "Is the harvest small relative to the site's full database?",
    "Q8": "Could the data expose individuals or enable discrimination?",
    "Q9": "Could the data leak confidential business information of related parties?",
    "Q10": "Could the project undercut the value of the site's own service?",
    "Q11": "Could data-quality problems mislead decisions drawn from the results?",
}

# Which answer signals risk, per question.
RISK_ANSWER = {
    "Q1": "yes",
    "Q2": "yes",
    "Q3": "no",
    "Q4": "yes",
    "Q5": "yes",
    "Q6": "yes",
    "Q7": "no",
    "Q8": "yes",
    "Q9": "yes",
    "Q10": "yes",
    "Q11": "yes",
}

STOP_QUESTIONS = ("Q2", "Q6")
ANSWERS = ("yes", "no", "unknown")

PROCEED, CAUTION, STOP = "proceed", "caution", "stop"


@dataclass(frozen=True)
class ViabilityAssessment:
    answers: dict[str, str]
    notes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for qid in QUESTION_IDS:
            if qid not in self.answers:
                raise ComplianceError(f"missing answer for {qid}")
        extra = set(self.answers) - set(QUESTION_IDS)
        if extra:
            raise ComplianceError(f"unknown question id(s): {', '.join(sorted(extra))}")
        for qid, ans in self.answers.items():
            if ans not in ANSWERS:
                raise ComplianceError(f"{qid}: answer must be one of {ANSWERS}, got {ans!r}")


@dataclass(frozen=True)
class ComplianceVerdict:
    level: str
    triggered_questions: tuple[str, ...]
    robots_allows_target: bool = True

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "triggered_questions": list(self.triggered_questions),
            "robots_allows_target": self.robots_allows_target,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        lines = [f"verdict: {self.level}", f"robots allows target: {self.robots_allows_target}"]
        if self.triggered_questions:
            lines.append("warning signs:")
            for qid in self.triggered_questions:
                lines.append(f"  {qid}: {QUESTIONS[qid]}")
        else:
            lines.append("warning signs: none")
        return "\n".join(lines) + "\n"


def assess_viability(
    a: ViabilityAssessment,
    robots_allows_target: bool = True,
    unknown_is_risk: bool = True,
) -> ComplianceVerdict:
    triggered = []
    for qid in QUESTION_IDS:
        ans = a.answers[qid]
        if ans == RISK_ANSWER[qid] or (ans == "unknown" and unknown_is_risk):
            triggered.append(qid)
    hard_stop = any(a.answers[q] == RISK_ANSWER[q] for q in STOP_QUESTIONS)
    if hard_stop or not robots_allows_target:
        level = STOP
    elif triggered:
        level = CAUTION
    else:
        level = PROCEED
    return ComplianceVerdict(level, tuple(triggered), robots_allows_target)


def parse_answers(text: str) -> ViabilityAssessment:
    """Read ``Qn: yes|no|unknown`` lines; anything after a second colon is a note."""
    answers: dict[str, str] = {}
    notes: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise ComplianceError(f"line {lineno}: expected 'Qn: answer'")
        qid = key.strip().upper()
        value, _, note = rest.partition(":")
        answers[qid] = value.strip().lower()
        if note.strip():
            notes[qid] = note.strip()
    return ViabilityAssessment(answers, notes)


def benign_answers_text() -> str:
    """An answers file in which no question signals a risk."""
    flip = {"yes": "no", "no": "yes"}
    return "".join(f"{q}: {flip[RISK_ANSWER[q]]}\n" for q in QUESTION_IDS)


def load_answers(path: str | Path) -> ViabilityAssessment:
    return parse_answers(Path(path).read_text(encoding="utf-8"))
