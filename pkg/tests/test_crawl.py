"""Discovery, dedup, and snapshot-policy tests over offline fixtures."""

import json
import random
from datetime import date

import pytest

from mcp_scope import crawl
from mcp_scope.crawl import (
    CrawlConfig,
    RepoRef,
    ServerCandidate,
    SnapshotError,
    dedup,
    discover,
    normalize_repo_url,
    snapshot,
)


def make_fixture(tmp_path, github=None, smithery=None, official_md=None, awesome_md=None,
                 readmes=None):
    if github is not None:
        (tmp_path / "github_search.json").write_text(json.dumps(github))
    if smithery is not None:
        (tmp_path / "smithery.json").write_text(json.dumps(smithery))
    if official_md is not None:
        (tmp_path / "official_list.md").write_text(official_md)
    if awesome_md is not None:
        (tmp_path / "awesome_list.md").write_text(awesome_md)
    if readmes:
        d = tmp_path / "readmes"
        d.mkdir()
        for fname, text in readmes.items():
            (d / fname).write_text(text)
    return tmp_path


def cand(url, sources=("github_search",), stars=1, created=None, official=False):
    return ServerCandidate(
        repo=RepoRef.from_url(url),
        sources=set(sources),
        stars=stars,
        created_at=created,
        is_official=official,
    )


# ---------------------------------------------------------------- normalization

def test_url_normalization_rules():
    assert normalize_repo_url("https://GitHub.com/Acme/Tool.git") == "https://github.com/acme/tool"
    assert normalize_repo_url("github.com/acme/tool/") == "https://github.com/acme/tool"
    assert normalize_repo_url("http://github.com/acme/tool") == "https://github.com/acme/tool"


def test_url_normalization_idempotent():
    urls = ["https://GitHub.com/A/B.git", "github.com/x/y/", "https://gitlab.com/o/n"]
    for u in urls:
        once = normalize_repo_url(u)
        assert normalize_repo_url(once) == once


def test_repo_ref_unique_per_parts():
    a = RepoRef.from_url("https://github.com/Acme/Tool.git")
    b = RepoRef.from_parts("GitHub.com", "Acme", "Tool")
    assert a.url == b.url


# ---------------------------------------------------------------- discover

def test_github_search_filters_string_and_stars(tmp_path):
    fixture = make_fixture(tmp_path, github=[
        {"owner": "a", "name": "one", "description": "An MCP Server for files", "stars": 2},
        {"owner": "b", "name": "two", "description": "mcp server too", "stars": 0},
        {"owner": "c", "name": "three", "description": "a web scraper", "stars": 9},
    ])
    cfg = CrawlConfig(fixture_dir=fixture)
    got = discover("github_search", cfg)
    assert [c.repo.owner for c in got] == ["a"]
    assert got[0].sources == {"github_search"}


def test_github_search_matches_readme_and_tags(tmp_path):
    fixture = make_fixture(tmp_path, github=[
        {"owner": "a", "name": "one", "description": "", "readme_text": "my mcp server", "stars": 1},
        {"owner": "b", "name": "two", "description": "", "tags": ["mcp-server"], "stars": 1},
    ])
    got = discover("github_search", CrawlConfig(fixture_dir=fixture))
    # readme substring matches; the hyphenated tag does not contain "mcp server"
    assert [c.repo.owner for c in got] == ["a"]


def test_official_list_membership(tmp_path):
    md = "# Servers\n- [one](https://github.com/acme/one)\n- [two](https://github.com/acme/two)\n"
    fixture = make_fixture(tmp_path, official_md=md)
    got = discover("official_list", CrawlConfig(fixture_dir=fixture))
    assert len(got) == 2
    assert all(c.sources == {"official_list"} for c in got)
    assert all(c.is_official for c in got)


def test_smithery_skips_malformed_entries(tmp_path, caplog):
    fixture = make_fixture(tmp_path, smithery=[
        {"repo_url": "https://github.com/acme/good", "stars": 3},
        {"description": "no repo url here"},
    ])
    got = discover("smithery", CrawlConfig(fixture_dir=fixture))
    assert len(got) == 1 and got[0].repo.name == "good"


def test_discover_rejects_unknown_source(tmp_path):
    with pytest.raises(ValueError, match="unknown source"):
        discover("gitlab", CrawlConfig(fixture_dir=tmp_path))


def test_discover_stable_across_reruns(tmp_path):
    fixture = make_fixture(tmp_path, github=[
        {"owner": "a", "name": "one", "description": "mcp server", "stars": 2,
         "created_at": "2025-01-05"},
        {"owner": "b", "name": "two", "description": "MCP SERVER", "stars": 5},
    ])
    cfg = CrawlConfig(fixture_dir=fixture)
    first = json.dumps([c.to_dict() for c in discover("github_search", cfg)], sort_keys=True)
    second = json.dumps([c.to_dict() for c in discover("github_search", cfg)], sort_keys=True)
    assert first == second


# ---------------------------------------------------------------- dedup

def test_dedup_unions_sources():
    got = dedup([
        cand("https://github.com/x/a", sources=("github_search",), stars=3),
        cand("https://github.com/x/a", sources=("smithery",), stars=3),
    ])
    assert len(got) == 1
    assert got[0].sources == {"github_search", "smithery"}
    assert got[0].stars == 3


def test_dedup_zero_star_filter():
    assert dedup([cand("https://github.com/x/b", stars=0)]) == []


def test_dedup_takes_max_stars_and_or_official():
    got = dedup([
        cand("https://github.com/x/a", stars=1, official=False),
        cand("https://github.com/x/a", stars=7, official=True),
    ])
    assert got[0].stars == 7 and got[0].is_official


def test_dedup_five_element_fixture_against_groupby_oracle():
    items = [
        cand("https://github.com/x/a", sources=("github_search",), stars=2),
        cand("https://github.com/x/a.git", sources=("smithery",), stars=5),
        cand("https://github.com/x/b", sources=("github_search",), stars=1),
        cand("https://github.com/x/B/", sources=("official_list",), stars=0, official=True),
        cand("https://github.com/x/zero", stars=0),
    ]
    got = dedup(items)

    # brute-force group-by-url oracle
    groups = {}
    for c in items:
        groups.setdefault(c.repo.url, []).append(c)
    expected = {}
    for url, members in groups.items():
        stars = max(m.stars for m in members)
        if stars == 0:
            continue
        expected[url] = {
            "sources": set().union(*(m.sources for m in members)),
            "stars": stars,
            "official": any(m.is_official for m in members),
        }
    assert {c.repo.url for c in got} == set(expected)
    assert len(got) == 2
    for c in got:
        assert c.sources == expected[c.repo.url]["sources"]
        assert c.stars == expected[c.repo.url]["stars"]
        assert c.is_official == expected[c.repo.url]["official"]


def test_dedup_idempotent_and_subset_random():
    rng = random.Random(99)
    urls = [f"https://github.com/o/r{i}" for i in range(8)]
    for _ in range(25):
        items = [
            cand(rng.choice(urls), sources=(rng.choice(crawl.SOURCE_KINDS),),
                 stars=rng.randint(0, 5))
            for _ in range(rng.randint(1, 15))
        ]
        once = dedup(items)
        twice = dedup(once)
        assert [c.to_dict() for c in once] == [c.to_dict() for c in twice]
        assert len(once) <= len(items)
        assert {c.repo.url for c in once} <= {c.repo.url for c in items}
        assert all(c.stars > 0 for c in once)


def test_dedup_sorted_by_url():
    got = dedup([
        cand("https://github.com/z/z", stars=1),
        cand("https://github.com/a/a", stars=1),
    ])
    assert [c.repo.url for c in got] == sorted(c.repo.url for c in got)


# ---------------------------------------------------------------- snapshot

def test_snapshot_pre_cutoff_uses_cutoff_date(tmp_path):
    fixture = make_fixture(tmp_path, github=[
        {"owner": "x", "name": "old", "description": "mcp server", "stars": 1},
    ], readmes={"x__old.md": "# old\nan mcp server"})
    cfg = CrawlConfig(fixture_dir=fixture)
    doc = snapshot(cand("https://github.com/x/old", created=date(2025, 3, 1)), cfg)
    assert doc.snapshot_date == date(2025, 10, 1)


def test_snapshot_post_cutoff_uses_collection_date(tmp_path):
    fixture = make_fixture(tmp_path, readmes={"x__new.md": "# new"})
    cfg = CrawlConfig(fixture_dir=fixture)
    doc = snapshot(cand("https://github.com/x/new", created=date(2025, 12, 1)), cfg)
    assert doc.snapshot_date == cfg.collection_date


def test_snapshot_missing_readme_drops_candidate(tmp_path):
    fixture = make_fixture(tmp_path, readmes={})
    (tmp_path / "readmes").mkdir(exist_ok=True)
    with pytest.raises(SnapshotError, match="readme-missing"):
        snapshot(cand("https://github.com/x/gone", created=date(2025, 1, 1)),
                 CrawlConfig(fixture_dir=fixture))


def test_crawl_config_validation(tmp_path):
    with pytest.raises(ValueError, match="min_stars"):
        CrawlConfig(min_stars=-1)
    with pytest.raises(ValueError, match="cutoff"):
        CrawlConfig(snapshot_cutoff=date(2026, 3, 1), collection_date=date(2026, 2, 1))
