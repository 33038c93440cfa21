"""Turn raw README snapshots into verified server records with tool inventories.

The primary path sends the README through a text-analysis provider with the
shipped extraction prompt and validates the returned JSON against the output
schema (one retry, then the deterministic fallback). The fallback harvests
tools from markdown tables and definition-style lines under headings that
mention tools/capabilities/APIs, strips URLs, and flags the doc as a server
only when at least one tool was found and the text mentions MCP.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from mcp_scope.crawl import RawServerDoc, RepoRef, ServerCandidate
from mcp_scope.providers import ProviderError, TextAnalysisProvider, load_prompt

logger = logging.getLogger(__name__)

URL_PATTERN = re.compile(r"(?:[a-zA-Z][a-zA-Z0-9+.-]*://\S+|www\.\S+)")
MD_LINK = re.compile(r"\[([^\]]*)\]\(([^)]*)\)")
TOOLISH_HEADING = re.compile(r"tool|capabilit|api", re.IGNORECASE)
INSTALL_HEADING = re.compile(
    r"install|setup|getting started|prerequisit|configuration|quick ?start|license|contributing",
    re.IGNORECASE,
)
INSTALL_COMMAND = re.compile(
    r"\b(?:npm (?:install|i)\b|npx\b|pip install\b|uvx\b|uv tool install\b|docker (?:run|pull)\b|git clone\b|brew install\b)"
)
NAME_TOKEN = r"[A-Za-z_][A-Za-z0-9_.\-]*"
BULLET_DEF = re.compile(
    rf"^(\s*)[-*+]\s*(?:`(?P<bt>{NAME_TOKEN})`|\*\*(?P<bold>{NAME_TOKEN})\*\*|(?P<plain>{NAME_TOKEN}))"
    r"(?P<args>\([^)]*\))?\s*[:—–-]\s+(?P<desc>.+)$"
)
PLAIN_DEF = re.compile(rf"^(?P<name>{NAME_TOKEN})(?P<args>\([^)]*\))?\s*:\s+(?P<desc>.+)$")
HEADING = re.compile(r"^(#{1,6})\s+(.*)$")
# prose words that look like definition labels but never name a tool
NON_TOOL_WORDS = {
    "note", "notes", "warning", "example", "examples", "usage", "tip",
    "important", "status", "default", "error", "output", "input", "returns",
    "description", "name", "type", "required", "optional", "see", "todo",
}

CHUNK_CHARS = 50_000


@dataclass
class ToolRecord:
    name: str
    description: str = ""
    input_schema: str | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "description": self.description}
        if self.input_schema is not None:
            d["input_schema"] = self.input_schema
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ToolRecord":
        return cls(name=d["name"], description=d.get("description", ""),
                   input_schema=d.get("input_schema"))


@dataclass
class ExtractionResult:
    summary: str
    is_mcp_server: bool
    filtered_content: str
    tools: list[ToolRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "summary": self.summary,
            "is_mcp_server": 1 if self.is_mcp_server else 0,
            "filtered_content": self.filtered_content,
            "tools": [t.to_dict() for t in self.tools],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionResult":
        return cls(
            summary=d.get("summary", ""),
            is_mcp_server=bool(d.get("is_mcp_server", 0)),
            filtered_content=d.get("filtered_content", ""),
            tools=[ToolRecord.from_dict(t) for t in d.get("tools", [])],
        )


@dataclass
class ServerRecord:
    id: str
    repo: RepoRef
    extraction: ExtractionResult
    is_official: bool
    created_at: date | None
    stars: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "repo": self.repo.to_dict(),
            "extraction": self.extraction.to_dict(),
            "is_official": self.is_official,
            "created_at": self.created_at.isoformat() if self.created_at else None,
            "stars": self.stars,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ServerRecord":
        return cls(
            id=d["id"],
            repo=RepoRef(**d["repo"]),
            extraction=ExtractionResult.from_dict(d["extraction"]),
            is_official=d["is_official"],
            created_at=date.fromisoformat(d["created_at"]) if d.get("created_at") else None,
            stars=d["stars"],
        )


def server_id(repo_url: str) -> str:
    """Stable join key: content hash of the normalized repo URL."""
    return hashlib.sha256(repo_url.encode("utf-8")).hexdigest()[:16]


def strip_urls(text: str) -> str:
    """Replace markdown links by their text, remove bare URLs."""
    text = MD_LINK.sub(lambda m: m.group(1), text)
    return URL_PATTERN.sub("", text)


def _dedup_tools(tools: list[ToolRecord]) -> list[ToolRecord]:
    seen = set()
    out = []
    for t in tools:
        if not t.name or t.name in seen:
            continue
        seen.add(t.name)
        out.append(t)
    return out


def _harvest_table(lines: list[str], start: int) -> tuple[list[ToolRecord], int]:
    """Parse a markdown table starting at `start`; returns (tools, next_index)."""
    header = [c.strip().lower() for c in lines[start].strip().strip("|").split("|")]
    name_col = next((i for i, c in enumerate(header) if "name" in c or "tool" in c), None)
    desc_col = next((i for i, c in enumerate(header) if "desc" in c), None)
    schema_col = next(
        (i for i, c in enumerate(header) if re.search(r"param|input|argument|schema", c)), None
    )
    i = start + 1
    tools: list[ToolRecord] = []
    if name_col is None:
        return tools, i
    if i < len(lines) and re.match(r"^\s*\|?[\s:|-]+\|?\s*$", lines[i]):
        i += 1  # separator row
    while i < len(lines) and lines[i].strip().startswith("|"):
        cells = [c.strip() for c in lines[i].strip().strip("|").split("|")]
        if len(cells) > name_col:
            name = cells[name_col].strip("`* ")
            if re.fullmatch(NAME_TOKEN, name) and name.lower() not in NON_TOOL_WORDS:
                desc = cells[desc_col].strip() if desc_col is not None and len(cells) > desc_col else ""
                schema = (
                    cells[schema_col].strip()
                    if schema_col is not None and len(cells) > schema_col and cells[schema_col].strip()
                    else None
                )
                tools.append(ToolRecord(name=name, description=strip_urls(desc).strip(),
                                        input_schema=schema))
        i += 1
    return tools, i


def _filtered_content(text: str) -> str:
    """Drop install/setup sections and install-command code fences, strip URLs."""
    lines = text.splitlines()
    kept: list[str] = []
    skipping_section = False
    in_fence = False
    fence_buf: list[str] = []
    for line in lines:
        heading = HEADING.match(line)
        if heading and not in_fence:
            skipping_section = bool(INSTALL_HEADING.search(heading.group(2)))
            if not skipping_section:
                kept.append(line)
            continue
        if line.lstrip().startswith("```"):
            if not in_fence:
                in_fence = True
                fence_buf = [line]
            else:
                fence_buf.append(line)
                in_fence = False
                body = "\n".join(fence_buf)
                if not skipping_section and not INSTALL_COMMAND.search(body):
                    kept.extend(fence_buf)
                fence_buf = []
            continue
        if in_fence:
            fence_buf.append(line)
            continue
        if skipping_section:
            continue
        if INSTALL_COMMAND.search(line):
            continue
        kept.append(line)
    return strip_urls("\n".join(kept)).strip()


def _first_sentence(text: str) -> str:
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith(("#", "|", "```", "-", "*", ">", "!")):
            continue
        clean = strip_urls(line).strip()
        if not clean:
            continue
        m = re.match(r"(.+?[.!?])(\s|$)", clean)
        return (m.group(1) if m else clean)[:200]
    return ""


def fallback_extract_text(text: str) -> ExtractionResult:
    """Deterministic extraction over raw README text (total function)."""
    lines = text.splitlines()
    tools: list[ToolRecord] = []
    toolish = False
    i = 0
    while i < len(lines):
        line = lines[i]
        heading = HEADING.match(line)
        if heading:
            toolish = bool(TOOLISH_HEADING.search(heading.group(2)))
            i += 1
            continue
        if not toolish:
            i += 1
            continue
        if line.strip().startswith("|"):
            table_tools, i = _harvest_table(lines, i)
            tools.extend(table_tools)
            continue
        m = BULLET_DEF.match(line)
        if m:
            name = m.group("bt") or m.group("bold") or m.group("plain")
            if name.lower() not in NON_TOOL_WORDS:
                schema = m.group("args")[1:-1].strip() if m.group("args") else None
                schema_lines: list[str] = []
                indent = len(m.group(1))
                j = i + 1
                while j < len(lines):
                    sub = re.match(r"^(\s*)[-*+]\s+(.*)$", lines[j])
                    if sub and len(sub.group(1)) > indent:
                        schema_lines.append(sub.group(2).strip())
                        j += 1
                    else:
                        break
                if schema_lines and schema is None:
                    schema = "; ".join(schema_lines)
                tools.append(ToolRecord(
                    name=name,
                    description=strip_urls(m.group("desc")).strip(),
                    input_schema=schema if schema else None,
                ))
                i = j
                continue
        else:
            m = PLAIN_DEF.match(line.strip())
            if m and m.group("name").lower() not in NON_TOOL_WORDS:
                schema = m.group("args")[1:-1].strip() if m.group("args") else None
                tools.append(ToolRecord(
                    name=m.group("name"),
                    description=strip_urls(m.group("desc")).strip(),
                    input_schema=schema if schema else None,
                ))
        i += 1

    tools = _dedup_tools(tools)
    return ExtractionResult(
        summary=_first_sentence(text),
        is_mcp_server=bool(tools) and "mcp" in text.lower(),
        filtered_content=_filtered_content(text),
        tools=tools,
    )


def fallback_extract(doc: RawServerDoc) -> ExtractionResult:
    return fallback_extract_text(doc.readme_text)


class SchemaError(ValueError):
    """Provider output does not conform to the extraction output schema."""


def parse_extraction_output(raw: str) -> ExtractionResult:
    """Parse + schema-validate provider output (JSON, possibly fenced)."""
    body = raw.strip()
    fence = re.match(r"^```(?:json)?\s*(.*?)\s*```$", body, re.DOTALL)
    if fence:
        body = fence.group(1)
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("top level must be an object")
    for key in ("summary", "is_mcp_server", "filtered_content", "tools"):
        if key not in data:
            raise SchemaError(f"missing key: {key}")
    if not isinstance(data["summary"], str) or not isinstance(data["filtered_content"], str):
        raise SchemaError("summary/filtered_content must be strings")
    if data["is_mcp_server"] not in (0, 1, True, False):
        raise SchemaError("is_mcp_server must be 0/1")
    if not isinstance(data["tools"], list):
        raise SchemaError("tools must be a list")
    names = []
    tools = []
    for t in data["tools"]:
        if not isinstance(t, dict) or not t.get("name") or not isinstance(t["name"], str):
            raise SchemaError("each tool needs a non-empty name")
        names.append(t["name"])
        tools.append(ToolRecord(name=t["name"], description=str(t.get("description", "")),
                                input_schema=t.get("input_schema")))
    if len(set(names)) != len(names):
        raise SchemaError("duplicate tool names")
    return ExtractionResult(
        summary=data["summary"],
        is_mcp_server=bool(data["is_mcp_server"]),
        filtered_content=data["filtered_content"],
        tools=tools,
    )


def process_readme(doc: RawServerDoc, provider: TextAnalysisProvider | None = None,
                   chunk_chars: int = CHUNK_CHARS) -> ExtractionResult:
    """Extract summary/validity/tools from one README snapshot.

    Provider output failing schema validation gets one retry, then the
    deterministic fallback. READMEs longer than chunk_chars are chunked and
    the tool lists merged.
    """
    if not doc.readme_text:
        raise ValueError("readme_text must be non-empty")
    if provider is None:
        return fallback_extract(doc)

    text = doc.readme_text
    chunks = [text[i : i + chunk_chars] for i in range(0, len(text), chunk_chars)]
    prompt = load_prompt("readme_extraction")
    partials = []
    for chunk in chunks:
        parsed = None
        for attempt in (1, 2):
            try:
                raw = provider.complete("readme_extraction", prompt, chunk)
                parsed = parse_extraction_output(raw)
                break
            except (ProviderError, SchemaError) as exc:
                logger.warning("extraction attempt %d failed for %s: %s",
                               attempt, doc.repo.url, exc)
        if parsed is None:
            logger.warning("falling back to rule extraction for %s", doc.repo.url)
            return fallback_extract(doc)
        partials.append(parsed)

    merged = ExtractionResult(
        summary=partials[0].summary,
        is_mcp_server=any(p.is_mcp_server for p in partials),
        filtered_content="\n\n".join(p.filtered_content for p in partials),
        tools=_dedup_tools([t for p in partials for t in p.tools]),
    )
    # invariant enforcement: filtered_content never carries URLs
    merged.filtered_content = strip_urls(merged.filtered_content)
    return merged


def validate_server(result: ExtractionResult) -> bool:
    """A verified server both self-identifies as one and defines tools."""
    return bool(result.is_mcp_server) and len(result.tools) > 0


def build_server_record(candidate: ServerCandidate, result: ExtractionResult) -> ServerRecord:
    if not validate_server(result):
        raise ValueError(f"extraction did not validate for {candidate.repo.url}")
    return ServerRecord(
        id=server_id(candidate.repo.url),
        repo=candidate.repo,
        extraction=result,
        is_official=candidate.is_official,
        created_at=candidate.created_at,
        stars=candidate.stars,
    )


def read_servers(path) -> list[ServerRecord]:
    with open(Path(path), encoding="utf-8") as fh:
        return [ServerRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
