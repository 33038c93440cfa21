"""README extraction: fallback rules, provider path, and validation gate."""

import json

import pytest

from mcp_scope.crawl import RawServerDoc, RepoRef
from mcp_scope.extract import (
    URL_PATTERN,
    ExtractionResult,
    SchemaError,
    ToolRecord,
    build_server_record,
    fallback_extract,
    fallback_extract_text,
    parse_extraction_output,
    process_readme,
    server_id,
    strip_urls,
    validate_server,
)
from mcp_scope.providers import ProviderError, RuleBasedTextProvider, TextAnalysisProvider


def doc(text, name="repo"):
    return RawServerDoc(repo=RepoRef.from_parts("github.com", "acme", name), readme_text=text)


class ScriptedProvider(TextAnalysisProvider):
    """Test double: returns queued replies in order, then raises."""

    name = "scripted"
    deterministic = True

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, task, instruction, document=""):
        self.calls += 1
        if not self.replies:
            raise ProviderError("script exhausted")
        item = self.replies.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


# ---------------------------------------------------------------- fallback rules

def test_fallback_bullet_with_backticks():
    res = fallback_extract_text("# my mcp server\n\n## Tools\n- `read_file`: Read file contents\n")
    assert [t.name for t in res.tools] == ["read_file"]
    assert res.tools[0].description == "Read file contents"
    assert res.is_mcp_server


def test_fallback_duplicate_names_first_description_wins():
    res = fallback_extract_text("mcp\n## Tools\n- a: first\n- a: second\n")
    assert len(res.tools) == 1
    assert res.tools[0].description == "first"


def test_fallback_plain_definition_lines():
    text = (
        "Financial data MCP server\n\n## Capabilities\n"
        "get_accounts: Retrieve list of all connected bank accounts\n"
        "get_balance: Get current balance\n"
    )
    res = fallback_extract_text(text)
    assert [t.name for t in res.tools] == ["get_accounts", "get_balance"]
    assert res.tools[0].description == "Retrieve list of all connected bank accounts"


def test_fallback_markdown_table():
    text = (
        "an mcp server\n## API\n"
        "| Tool | Description | Parameters |\n"
        "|------|-------------|------------|\n"
        "| `search` | Find things | query: str |\n"
        "| `fetch` | Get a thing | id: int |\n"
    )
    res = fallback_extract_text(text)
    assert [t.name for t in res.tools] == ["search", "fetch"]
    assert res.tools[0].input_schema == "query: str"


def test_fallback_ignores_lines_outside_tool_sections():
    text = "mcp server\n## Install\n- `npm`: install it\n## Tools\n- `go`: run\n"
    res = fallback_extract_text(text)
    assert [t.name for t in res.tools] == ["go"]


def test_fallback_em_dash_bullet_and_bold():
    text = "mcp\n## Tools\n- `alpha` — does alpha\n- **beta**: does beta\n"
    res = fallback_extract_text(text)
    assert [t.name for t in res.tools] == ["alpha", "beta"]


def test_fallback_link_list_is_not_a_server():
    text = (
        "# Awesome MCP servers\n\nA curated list.\n\n"
        "- [one](https://github.com/a/one) great server\n"
        "- [two](https://github.com/a/two) another\n"
    )
    res = fallback_extract_text(text)
    assert res.tools == []
    assert not res.is_mcp_server


def test_fallback_no_headings_no_tools():
    res = fallback_extract_text("Just some prose. Nothing else.\nMore prose.")
    assert not res.is_mcp_server
    assert res.tools == []


def test_fallback_requires_mcp_mention():
    text = "## Tools\n- `go`: run\n"  # tools but never says mcp
    assert not fallback_extract_text(text).is_mcp_server


def test_fallback_nested_params_become_schema():
    text = "mcp\n## Tools\n- `send`: send a thing\n  - to: recipient\n  - body: text\n"
    res = fallback_extract_text(text)
    assert res.tools[0].input_schema == "to: recipient; body: text"


def test_filtered_content_never_contains_urls():
    text = (
        "my mcp server, see https://example.com/docs\n"
        "## Tools\n- `a`: go to [site](http://foo.bar) now\n"
        "## Install\nnpm install thing\n"
        "visit www.example.org too\n"
    )
    res = fallback_extract_text(text)
    assert not URL_PATTERN.search(res.filtered_content)
    assert "npm install" not in res.filtered_content


def test_strip_urls_keeps_link_text():
    assert strip_urls("go to [GitHub](https://github.com) now") == "go to GitHub now"


TEN_DOC_CORPUS = [
    ("mcp\n## Tools\n- a: one\n- b: two\n", 2),
    ("mcp\n## Tools\n- a: one\n- a: dup\n", 1),
    ("mcp server\n## Capabilities\nx: does x\ny: does y\nz: does z\n", 3),
    ("no tools here at all\n", 0),
    ("mcp\n## API\n| name | description |\n|---|---|\n| q | quux |\n", 1),
    ("mcp\n## Tools\n- `t1`: a\n\n## More Tools\n- `t2`: b\n", 2),
    ("# link list\n- [x](https://github.com/a/x)\n", 0),
    ("mcp\n## Usage\n- `not_a_tool`: hidden in usage section\n", 0),
    ("mcp\n## tools\n- solo: only one\n", 1),
    ("mcp\n## Tools\nnothing listed yet\n", 0),
]


def test_ten_doc_corpus_matches_hand_counted_oracle():
    counts = [len(fallback_extract_text(t).tools) for t, _ in TEN_DOC_CORPUS]
    assert counts == [n for _, n in TEN_DOC_CORPUS]


# ---------------------------------------------------------------- provider path

GOOD_JSON = json.dumps({
    "summary": "A file server.",
    "is_mcp_server": 1,
    "filtered_content": "does files",
    "tools": [{"name": "read_file", "description": "Read a file"}],
})


def test_process_readme_provider_happy_path():
    res = process_readme(doc("# x\nmcp server readme"), ScriptedProvider([GOOD_JSON]))
    assert res.is_mcp_server
    assert [t.name for t in res.tools] == ["read_file"]


def test_process_readme_retries_once_then_succeeds():
    p = ScriptedProvider(["not json at all", GOOD_JSON])
    res = process_readme(doc("mcp server"), p)
    assert p.calls == 2
    assert res.tools[0].name == "read_file"


def test_process_readme_schema_invalid_twice_falls_back():
    readme = "mcp\n## Tools\n- `a`: fallback tool\n"
    p = ScriptedProvider(["nope", "still nope"])
    res = process_readme(doc(readme), p)
    assert res.to_dict() == fallback_extract(doc(readme)).to_dict()


def test_process_readme_provider_unavailable_falls_back():
    readme = "mcp\n## Tools\n- `a`: x\n"
    p = ScriptedProvider([ProviderError("down"), ProviderError("down")])
    res = process_readme(doc(readme), p)
    assert [t.name for t in res.tools] == ["a"]


def test_process_readme_duplicate_tool_names_are_schema_invalid():
    bad = json.dumps({
        "summary": "s", "is_mcp_server": 1, "filtered_content": "",
        "tools": [{"name": "a", "description": "1"}, {"name": "a", "description": "2"}],
    })
    with pytest.raises(SchemaError, match="duplicate"):
        parse_extraction_output(bad)


def test_process_readme_strips_urls_from_provider_output():
    fancy = json.dumps({
        "summary": "s", "is_mcp_server": 1,
        "filtered_content": "see https://evil.example.com here",
        "tools": [{"name": "a", "description": "x"}],
    })
    res = process_readme(doc("mcp server"), ScriptedProvider([fancy]))
    assert not URL_PATTERN.search(res.filtered_content)


def test_process_readme_rejects_empty_readme():
    with pytest.raises(ValueError, match="non-empty"):
        process_readme(doc(""))


def test_process_readme_chunks_long_readme_and_merges():
    chunk1_tools = "mcp\n## Tools\n- `one`: first\n"
    filler = "x" * 300
    text = chunk1_tools + filler + "\n## Tools\n- `two`: second\n"
    res = process_readme(doc(text), provider=None, chunk_chars=len(text) + 1)
    # single chunk baseline
    assert {t.name for t in res.tools} == {"one", "two"}
    p = RuleBasedTextProvider()
    res_chunked = process_readme(doc(text), p, chunk_chars=max(len(chunk1_tools) + 50, 200))
    assert "one" in {t.name for t in res_chunked.tools}


def test_rule_provider_matches_fallback_exactly():
    readme = "mcp\n## Tools\n- `read_file`: Read file contents\n"
    via_provider = process_readme(doc(readme), RuleBasedTextProvider())
    direct = fallback_extract(doc(readme))
    assert via_provider.to_dict() == direct.to_dict()


def test_deterministic_rerun_byte_identical():
    readme = "mcp\n## Tools\n- `a`: x\n- `b`: y\n"
    a = json.dumps(process_readme(doc(readme), RuleBasedTextProvider()).to_dict(), sort_keys=True)
    b = json.dumps(process_readme(doc(readme), RuleBasedTextProvider()).to_dict(), sort_keys=True)
    assert a == b


# ---------------------------------------------------------------- validation gate

def test_validate_server_truth_table():
    tool = ToolRecord(name="t")
    assert validate_server(ExtractionResult("s", True, "", [tool]))
    assert not validate_server(ExtractionResult("s", True, "", []))
    assert not validate_server(ExtractionResult("s", False, "", [tool, tool]))


def test_build_server_record_requires_validation():
    from mcp_scope.crawl import ServerCandidate

    candidate = ServerCandidate(repo=RepoRef.from_parts("github.com", "a", "b"),
                                sources={"github_search"}, stars=2)
    good = ExtractionResult("s", True, "", [ToolRecord(name="t")])
    rec = build_server_record(candidate, good)
    assert rec.id == server_id(candidate.repo.url)
    assert len(rec.id) == 16
    with pytest.raises(ValueError, match="did not validate"):
        build_server_record(candidate, ExtractionResult("s", False, "", []))


def test_server_id_stable():
    assert server_id("https://github.com/a/b") == server_id("https://github.com/a/b")
    assert server_id("https://github.com/a/b") != server_id("https://github.com/a/c")
