"""AI co-authorship detection: four criteria, first-month variant, scoring."""

import json
import random
from datetime import datetime, timedelta, timezone

import pytest

from mcp_scope.authorship import (
    AiEvidence,
    Commit,
    PatternSet,
    PullRequest,
    RepoActivity,
    TreeEntry,
    identify_agent,
    load_activity_fixture,
    scan_evidence,
    verdict,
)

T0 = datetime(2025, 1, 1, tzinfo=timezone.utc)


def day(n):
    return T0 + timedelta(days=n)


def commit(message="", author="dev", when=None, sha="abc123"):
    return Commit(sha=sha, author_login=author, message=message, date=when or day(1))


# ---------------------------------------------------------------- criteria

def test_criterion1_coauthor_trailer():
    activity = RepoActivity(commits=[
        commit("add feature\n\nCo-Authored-By: Claude <noreply@anthropic.com>", when=day(2)),
    ], created_at=T0)
    evidence = scan_evidence(activity)
    assert len(evidence) == 1
    ev = evidence[0]
    assert ev.criterion == 1 and ev.tool == "Claude" and ev.date == day(2)


def test_criterion1_trailer_not_double_counted_as_mention():
    activity = RepoActivity(commits=[
        commit("fix\n\nCo-Authored-By: Claude <noreply@anthropic.com>"),
    ])
    assert [e.criterion for e in scan_evidence(activity)] == [1]


def test_criterion2_config_file_paths():
    activity = RepoActivity(tree=[
        TreeEntry(".github/copilot-instructions.md", introduced_at=day(3)),
        TreeEntry("src/main.py"),
    ])
    evidence = scan_evidence(activity)
    assert len(evidence) == 1
    assert evidence[0].criterion == 2 and evidence[0].tool == "Copilot"
    assert evidence[0].location == ".github/copilot-instructions.md"


def test_criterion2_directory_pattern():
    activity = RepoActivity(tree=[TreeEntry(".cursor/rules.md"), TreeEntry("README.md")])
    evidence = scan_evidence(activity)
    assert [e.tool for e in evidence] == ["Cursor"]


def test_criterion2_nested_claude_md_counts():
    activity = RepoActivity(tree=[TreeEntry("docs/CLAUDE.md")])
    assert [e.tool for e in scan_evidence(activity)] == ["Claude"]


def test_criterion3_bot_contributor():
    activity = RepoActivity(commits=[commit(author="devin-ai-integration[bot]")])
    evidence = scan_evidence(activity)
    assert len(evidence) == 1
    assert evidence[0].criterion == 3 and evidence[0].tool == "Devin"


def test_criterion3_dependabot_excluded():
    activity = RepoActivity(
        commits=[commit(author="dependabot[bot]", message="bump lodash")],
        pulls=[PullRequest(number=1, author_login="renovate[bot]", title="update deps",
                           body="", date=day(1))],
    )
    assert scan_evidence(activity) == []


def test_criterion4_mentions_with_word_boundaries():
    activity = RepoActivity(commits=[
        commit("refactored with claude code assistance", when=day(4)),
        commit("move the cursor to the left in the editor"),
    ])
    evidence = scan_evidence(activity)
    assert [(e.criterion, e.tool) for e in evidence] == [(4, "Claude")]


def test_criterion4_cursor_needs_disambiguating_phrase():
    activity = RepoActivity(commits=[commit("generated by cursor ai today")])
    assert [e.tool for e in scan_evidence(activity)] == ["Cursor"]


def test_criterion4_pr_text_scanned():
    activity = RepoActivity(pulls=[
        PullRequest(number=7, author_login="dev", title="use @codex for this",
                    body="", date=day(5)),
    ])
    evidence = scan_evidence(activity)
    assert [(e.criterion, e.tool, e.location) for e in evidence] == [(4, "Codex", "PR #7")]


# ---------------------------------------------------------------- verdict

def test_day_45_config_file_not_first_month():
    activity = RepoActivity(tree=[TreeEntry("CLAUDE.md", introduced_at=day(45))], created_at=T0)
    v = verdict(scan_evidence(activity), activity.created_at)
    assert v.ai_authored is True
    assert v.first_month is False
    assert v.date_first_ai_evidence == day(45)
    assert v.agent == "Claude"


def test_no_evidence_verdict():
    v = verdict([], T0)
    assert v.ai_authored is False and v.agent is None
    assert v.first_month is False
    assert v.date_first_ai_evidence is None


def test_first_month_and_min_date():
    evidence = [
        AiEvidence(criterion=4, tool="Claude", date=day(3), location="commit x"),
        AiEvidence(criterion=1, tool="Claude", date=day(60), location="commit y"),
    ]
    v = verdict(evidence, T0)
    assert v.first_month is True
    assert v.date_first_ai_evidence == day(3)


def test_first_month_boundary_is_30x24h():
    exactly = T0 + timedelta(hours=30 * 24)
    just_past = exactly + timedelta(seconds=1)
    assert verdict([AiEvidence(1, "Claude", exactly, "c")], T0).first_month is True
    assert verdict([AiEvidence(1, "Claude", just_past, "c")], T0).first_month is False


def test_unknown_created_at_leaves_first_month_unset():
    v = verdict([AiEvidence(1, "Claude", day(2), "c")], None)
    assert v.first_month is None
    assert v.ai_authored is True


def test_verdict_invariant_first_month_implies_authored():
    rng = random.Random(4)
    for _ in range(50):
        evidence = [
            AiEvidence(criterion=rng.randint(1, 4), tool="Claude",
                       date=day(rng.randint(0, 90)), location="x")
            for _ in range(rng.randint(0, 4))
        ]
        v = verdict(evidence, T0)
        if v.first_month:
            assert v.ai_authored
        if v.evidence:
            dated = [e.date for e in v.evidence if e.date]
            if dated:
                assert all(v.date_first_ai_evidence <= d for d in dated)


# ---------------------------------------------------------------- attribution

def test_config_outscores_mentions():
    evidence = [
        AiEvidence(2, "Claude", day(1), "CLAUDE.md"),
        AiEvidence(4, "Cursor", day(1), "commit a"),
        AiEvidence(4, "Cursor", day(2), "commit b"),
    ]
    agent, breakdown = identify_agent(evidence)
    assert agent == "Claude"
    assert breakdown["Claude"]["score"] == 10
    assert breakdown["Cursor"]["score"] == 2


def test_single_coauthor_scores_three():
    agent, breakdown = identify_agent([AiEvidence(1, "Codex", day(1), "c")])
    assert agent == "Codex" and breakdown["Codex"]["score"] == 3


def test_three_agent_mixed_fixture_matches_bruteforce_oracle():
    rng = random.Random(77)
    agents = ["Claude", "Copilot", "Cursor"]
    weights = {1: 3, 2: 10, 3: 5, 4: 1}
    for _ in range(60):
        evidence = [
            AiEvidence(criterion=rng.randint(1, 4), tool=rng.choice(agents),
                       date=day(rng.randint(0, 20)), location="x")
            for _ in range(rng.randint(1, 10))
        ]
        agent, breakdown = identify_agent(evidence)

        # brute-force scoring oracle with the documented tie-break
        crits = {1: "coauthor", 2: "config", 3: "bot", 4: "mention"}
        table = {}
        for ev in evidence:
            row = table.setdefault(ev.tool, {"config": 0, "bot": 0, "coauthor": 0, "mention": 0})
            row[crits[ev.criterion]] += 1
        scores = {a: sum(weights[c] * row[crits[c]] for c in weights) for a, row in table.items()}
        oracle = sorted(
            table,
            key=lambda a: (-scores[a], -table[a]["config"], -table[a]["bot"],
                           -table[a]["coauthor"], -table[a]["mention"], a),
        )[0]
        assert agent == oracle
        for a, row in table.items():
            assert breakdown[a]["score"] == scores[a]


def test_attribution_invariant_under_permutation():
    evidence = [
        AiEvidence(2, "Copilot", day(1), "a"),
        AiEvidence(1, "Claude", day(2), "b"),
        AiEvidence(4, "Claude", day(3), "c"),
        AiEvidence(3, "Devin", day(4), "d"),
    ]
    base_agent, base_scores = identify_agent(evidence)
    rng = random.Random(12)
    for _ in range(10):
        shuffled = evidence[:]
        rng.shuffle(shuffled)
        agent, scores = identify_agent(shuffled)
        assert agent == base_agent and scores == base_scores


def test_tie_break_higher_weight_criterion_then_alphabetical():
    # equal score 10: one config (10) vs two bots (5+5): config presence wins
    evidence = [
        AiEvidence(2, "Windsurf", day(1), "w"),
        AiEvidence(3, "Aider", day(1), "a1"),
        AiEvidence(3, "Aider", day(2), "a2"),
    ]
    agent, _ = identify_agent(evidence)
    assert agent == "Windsurf"
    # full tie on every criterion count: alphabetical
    evidence = [AiEvidence(1, "Cline", day(1), "x"), AiEvidence(1, "Aider", day(1), "y")]
    agent, _ = identify_agent(evidence)
    assert agent == "Aider"


def test_identify_agent_requires_evidence():
    with pytest.raises(ValueError, match="non-empty"):
        identify_agent([])


# ---------------------------------------------------------------- caps + fixtures

def test_activity_caps_enforced():
    commits = [commit(sha=f"s{i}") for i in range(10_050)]
    pulls = [PullRequest(number=i, author_login="d", title="", body="", date=day(1))
             for i in range(40)]
    activity = RepoActivity(commits=commits, pulls=pulls)
    assert len(activity.commits) == 10_000
    assert len(activity.pulls) == 30


def test_load_activity_fixture_roundtrip(tmp_path):
    base = tmp_path / "activity" / "acme__repo"
    base.mkdir(parents=True)
    (base / "meta.json").write_text(json.dumps({"created_at": "2025-01-01T00:00:00Z"}))
    (base / "commits.json").write_text(json.dumps([
        {"sha": "a1", "author_login": "dev", "message": "hi", "date": "2025-01-02T10:00:00Z"},
    ]))
    (base / "pulls.json").write_text(json.dumps([
        {"number": 1, "author_login": "dev", "title": "t", "body": "b", "date": "2025-01-03T00:00:00Z"},
    ]))
    (base / "tree.json").write_text(json.dumps([
        {"path": "CLAUDE.md", "introduced_at": "2025-02-15T00:00:00Z"},
        "src/main.py",
    ]))
    activity = load_activity_fixture(tmp_path, "acme", "repo")
    assert activity.created_at == T0
    assert activity.commits[0].date.tzinfo is not None
    v = verdict(scan_evidence(activity), activity.created_at)
    assert v.ai_authored and v.first_month is False


def test_first_month_tree_supplements_config_dating():
    activity = RepoActivity(
        tree=[TreeEntry("CLAUDE.md")],  # undated in the latest tree
        first_month_tree=["CLAUDE.md"],
        first_month_tree_date=day(20),
        created_at=T0,
    )
    v = verdict(scan_evidence(activity), activity.created_at)
    assert v.first_month is True
    assert v.date_first_ai_evidence == day(20)


def test_patterns_asset_loads():
    ps = PatternSet()
    assert ps.match_config("CLAUDE.md") == "Claude"
    assert ps.match_config("AGENTS.md") == "Codex"
    assert ps.match_bot("copilot[bot]") == "Copilot"
    assert ps.match_bot("dependabot[bot]") is None
    assert ps.match_coauthor("Claude <noreply@anthropic.com>") == "Claude"
