import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoharvest.compliance import (
    CAUTION,
    PROCEED,
    QUESTION_IDS,
    RISK_ANSWER,
    STOP,
    ComplianceError,
    ViabilityAssessment,
    assess_viability,
    benign_answers_text,
    is_allowed,
    parse_answers,
    parse_robots,
    serialize_robots,
)
from oracles import random_robots_case, render_robots_text, robots_oracle, wildcard_match

AGENT = "geoharvest/0.1 (research crawler)"


def benign():
    return parse_answers(benign_answers_text()).answers


# -- parse_robots ------------------------------------------------------------


def test_single_group_single_disallow():
    p = parse_robots("User-agent: *\nDisallow: /private/", "h")
    assert len(p.groups) == 1
    assert p.groups[0].agents == ("*",)
    assert p.groups[0].rules == (("disallow", "/private/"),)


def test_empty_file_is_permissive():
    p = parse_robots("", "h")
    assert p.groups == ()
    assert p.crawl_delay_s is None
    assert p.permissive


def test_crawl_delay_and_empty_disallow():
    p = parse_robots("User-agent: *\nCrawl-delay: 15\nDisallow:", "h")
    assert p.crawl_delay_s == 15
    assert p.groups[0].rules == ()
    assert is_allowed(p, "/anything", AGENT)


def test_junk_lines_are_counted_not_raised():
    p = parse_robots("User-agent: *\nthis is not a rule\nDisallow: /x\nCrawl-delay: soon\nNoSuchKey: 1\n", "h")
    assert p.skipped_lines == 3
    assert p.groups[0].rules == (("disallow", "/x"),)


def test_consecutive_user_agents_share_a_group():
    p = parse_robots("User-agent: a\nUser-agent: b\nDisallow: /x\n\nUser-agent: c\nAllow: /\n", "h")
    assert [g.agents for g in p.groups] == [("a", "b"), ("c",)]


def test_rules_before_any_user_agent_are_skipped():
    p = parse_robots("Disallow: /x\nUser-agent: *\nDisallow: /y\n", "h")
    assert p.skipped_lines == 1
    assert p.groups[0].rules == (("disallow", "/y"),)


def test_rule_order_preserved():
    p = parse_robots("User-agent: *\nDisallow: /b\nAllow: /a\nDisallow: /c\n", "h")
    assert [r[1] for r in p.groups[0].rules] == ["/b", "/a", "/c"]


# -- is_allowed --------------------------------------------------------------


def test_disallowed_prefix():
    p = parse_robots("User-agent: *\nDisallow: /private/", "h")
    assert is_allowed(p, "/private/page", "*") is False
    assert is_allowed(p, "/public", "*") is True


def test_no_rules_allows():
    assert is_allowed(parse_robots("", "h"), "/anything", "bot") is True


def test_longer_allow_beats_shorter_disallow():
    p = parse_robots("User-agent: *\nAllow: /p/a\nDisallow: /p\n", "h")
    assert is_allowed(p, "/p/a/x", "*") is True
    assert is_allowed(p, "/p/b", "*") is False


def test_allow_wins_equal_length_tie():
    p = parse_robots("User-agent: *\nDisallow: /p\nAllow: /p\n", "h")
    assert is_allowed(p, "/p", "*") is True


def test_specific_agent_group_overrides_star():
    p = parse_robots("User-agent: *\nDisallow: /\n\nUser-agent: geoharvest\nDisallow: /private/\n", "h")
    assert is_allowed(p, "/search", AGENT) is True
    assert is_allowed(p, "/private/x", AGENT) is False
    assert is_allowed(p, "/search", "otherbot/1.0") is False


def test_wildcard_and_end_anchor():
    p = parse_robots("User-agent: *\nDisallow: /*.pdf$\nDisallow: /tmp*/cache\n", "h")
    assert is_allowed(p, "/files/a.pdf", "*") is False
    assert is_allowed(p, "/files/a.pdf?x=1", "*") is True
    assert is_allowed(p, "/tmp1/cache/z", "*") is False


def test_agent_selection_is_case_insensitive():
    p = parse_robots("User-agent: GeoHarvest\nDisallow: /x\n", "h")
    assert is_allowed(p, "/x", "geoharvest/2") is False


def test_crawl_delay_for_agent_group():
    p = parse_robots("User-agent: *\nCrawl-delay: 5\n\nUser-agent: geoharvest\nCrawl-delay: 30\n", "h")
    assert p.crawl_delay_for(AGENT) == 30
    assert p.crawl_delay_for("otherbot") == 5


def test_wildcard_oracle_self_check():
    assert wildcard_match("/a*b$", "/axxb")
    assert not wildcard_match("/a*b$", "/axxbc")
    assert wildcard_match("/a", "/abc")
    assert not wildcard_match("/b", "/abc")


def test_is_allowed_agrees_with_brute_force_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(600):
        groups, path, agent = random_robots_case(rng)
        policy = parse_robots(render_robots_text(groups), "h")
        assert is_allowed(policy, path, agent) == robots_oracle(groups, path, agent), (groups, path, agent)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_is_allowed_deterministic(seed):
    groups, path, agent = random_robots_case(np.random.default_rng(seed))
    policy = parse_robots(render_robots_text(groups), "h")
    assert is_allowed(policy, path, agent) == is_allowed(policy, path, agent)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_serialize_parse_round_trip(seed):
    rng = np.random.default_rng(seed)
    groups, _, _ = random_robots_case(rng)
    delays = [None if rng.random() < 0.5 else float(rng.choice([0.5, 2, 10, 12.25])) for _ in groups]
    p1 = parse_robots(render_robots_text(groups, delays), "h")
    p2 = parse_robots(serialize_robots(p1), "h")
    assert p2.groups == p1.groups
    assert p2.crawl_delay_s == p1.crawl_delay_s
    assert serialize_robots(p2) == serialize_robots(p1)


# -- viability ---------------------------------------------------------------


def test_all_benign_proceeds():
    v = assess_viability(ViabilityAssessment(benign()))
    assert v.level == PROCEED
    assert v.triggered_questions == ()


def test_q2_yes_stops():
    a = benign()
    a["Q2"] = "yes"
    v = assess_viability(ViabilityAssessment(a))
    assert v.level == STOP
    assert v.triggered_questions == ("Q2",)


def test_q8_yes_cautions():
    a = benign()
    a["Q8"] = "yes"
    v = assess_viability(ViabilityAssessment(a))
    assert v.level == CAUTION
    assert v.triggered_questions == ("Q8",)


def test_robots_block_stops_even_when_answers_benign():
    v = assess_viability(ViabilityAssessment(benign()), robots_allows_target=False)
    assert v.level == STOP
    assert v.robots_allows_target is False


def test_unknown_answer_triggers_caution_not_stop():
    a = benign()
    a["Q6"] = "unknown"
    v = assess_viability(ViabilityAssessment(a))
    assert v.level == CAUTION
    assert v.triggered_questions == ("Q6",)


def test_missing_question_is_named():
    a = benign()
    del a["Q7"]
    with pytest.raises(ComplianceError, match="Q7"):
        ViabilityAssessment(a)


def test_answers_file_notes_and_comments():
    text = benign_answers_text().replace("Q4: no", "Q4: no: we crawl one page every 10 s") + "# comment\n"
    a = parse_answers(text)
    assert a.notes == {"Q4": "we crawl one page every 10 s"}


def test_bad_answer_value_rejected():
    with pytest.raises(ComplianceError):
        parse_answers(benign_answers_text().replace("Q1: no", "Q1: maybe"))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["yes", "no", "unknown"]), min_size=11, max_size=11))
def test_never_proceeds_with_a_risk_answer(answers):
    a = dict(zip(QUESTION_IDS, answers))
    v = assess_viability(ViabilityAssessment(a))
    risky = [q for q in QUESTION_IDS if a[q] == RISK_ANSWER[q]]
    if risky:
        assert v.level != PROCEED
    if v.level == STOP:
        assert v.triggered_questions or not v.robots_allows_target


def test_verdict_json_and_text():
    a = benign()
    a["Q2"] = "yes"
    v = assess_viability(ViabilityAssessment(a))
    assert '"level": "stop"' in v.to_json()
    assert "Q2" in v.render()
