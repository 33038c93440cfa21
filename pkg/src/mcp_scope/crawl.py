"""Discovery of candidate MCP server repositories from three source kinds.

Sources: code-host search, the Smithery-style registry, and curated markdown
lists (official + awesome). Candidates are deduplicated by normalized repo
URL, zero-star entries are dropped, and README snapshots follow the cutoff
policy: repos created before the cutoff date keep the cutoff-date copy, newer
repos get the latest collection copy.

Every source supports an offline fixture directory with canonical JSON/markdown
files (documented below), which is the mode the test corpus runs in:

    fixture_dir/
      github_search.json   [{host, owner, name, description, readme_text,
                             tags, stars, created_at}]
      smithery.json        [{repo_url, description, stars, created_at,
                             is_official}]
      official_list.md     markdown with repo links
      awesome_list.md      markdown with repo links
      readmes/<owner>__<name>.md
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from mcp_scope import net

logger = logging.getLogger(__name__)

SOURCE_KINDS = ("github_search", "smithery", "official_list", "awesome_list")

GITHUB_API = "https://api.github.com"
SMITHERY_API = "https://registry.smithery.ai"

_REPO_LINK = re.compile(r"github\.com/([A-Za-z0-9_.-]+)/([A-Za-z0-9_.-]+)")


class SnapshotError(Exception):
    """README missing or repo gone; the candidate is dropped with a reason."""

    def __init__(self, reason: str, repo_url: str):
        super().__init__(f"{reason}: {repo_url}")
        self.reason = reason
        self.repo_url = repo_url


def normalize_repo_url(url: str) -> str:
    """Canonical repo URL: https, lowercase, no trailing slash, no .git."""
    u = url.strip()
    u = re.sub(r"^[a-zA-Z][a-zA-Z0-9+.-]*://", "", u)
    u = u.rstrip("/")
    if u.endswith(".git"):
        u = u[: -len(".git")]
    return "https://" + u.lower()


@dataclass(frozen=True)
class RepoRef:
    host: str
    owner: str
    name: str
    url: str

    @classmethod
    def from_parts(cls, host: str, owner: str, name: str) -> "RepoRef":
        url = normalize_repo_url(f"{host}/{owner}/{name}")
        return cls(host=host.lower(), owner=owner.lower(), name=name.lower(), url=url)

    @classmethod
    def from_url(cls, url: str) -> "RepoRef":
        norm = normalize_repo_url(url)
        parts = norm[len("https://") :].split("/")
        if len(parts) < 3:
            raise ValueError(f"not a repo url: {url}")
        return cls(host=parts[0], owner=parts[1], name=parts[2], url=normalize_repo_url("/".join(parts[:3])))

    def to_dict(self) -> dict:
        return {"host": self.host, "owner": self.owner, "name": self.name, "url": self.url}


@dataclass
class ServerCandidate:
    repo: RepoRef
    sources: set[str]
    stars: int = 0
    created_at: date | None = None
    is_official: bool = False

    def to_dict(self) -> dict:
        return {
            "repo": self.repo.to_dict(),
            "sources": sorted(self.sources),
            "stars": self.stars,
            "created_at": self.created_at.isoformat() if self.created_at else None,
            "is_official": self.is_official,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ServerCandidate":
        return cls(
            repo=RepoRef(**d["repo"]),
            sources=set(d["sources"]),
            stars=d["stars"],
            created_at=date.fromisoformat(d["created_at"]) if d.get("created_at") else None,
            is_official=d["is_official"],
        )


@dataclass
class CrawlConfig:
    search_string: str = "mcp server"
    min_stars: int = 1
    list_urls: dict = field(default_factory=dict)  # source kind -> URL
    snapshot_cutoff: date = date(2025, 10, 1)
    collection_date: date = date(2026, 2, 1)
    requests_per_second: float = 2.0
    max_retries: int = 5
    github_token_env: str = "GITHUB_TOKEN"
    fixture_dir: Path | None = None

    def __post_init__(self):
        if self.min_stars < 0:
            raise ValueError("min_stars must be >= 0")
        if self.snapshot_cutoff > self.collection_date:
            raise ValueError("snapshot_cutoff must not be after the collection date")
        if self.fixture_dir is not None:
            self.fixture_dir = Path(self.fixture_dir)


@dataclass
class RawServerDoc:
    repo: RepoRef
    readme_text: str
    description: str = ""
    tags: list = field(default_factory=list)
    snapshot_date: date | None = None

    def to_dict(self) -> dict:
        return {
            "repo": self.repo.to_dict(),
            "readme_text": self.readme_text,
            "description": self.description,
            "tags": list(self.tags),
            "snapshot_date": self.snapshot_date.isoformat() if self.snapshot_date else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawServerDoc":
        return cls(
            repo=RepoRef(**d["repo"]),
            readme_text=d["readme_text"],
            description=d.get("description", ""),
            tags=d.get("tags", []),
            snapshot_date=date.fromisoformat(d["snapshot_date"]) if d.get("snapshot_date") else None,
        )


def _parse_date(value) -> date | None:
    if not value:
        return None
    if isinstance(value, date) and not isinstance(value, datetime):
        return value
    if isinstance(value, datetime):
        return value.date()
    return datetime.fromisoformat(str(value).replace("Z", "+00:00")).date()


def matches_search(search_string: str, name: str, description: str, readme: str, tags) -> bool:
    """Case-insensitive substring over the concatenated searchable fields."""
    haystack = " ".join([name or "", description or "", readme or "", " ".join(tags or [])])
    return search_string.lower() in haystack.lower()


def discover(source: str, cfg: CrawlConfig, limiter: net.RateLimiter | None = None) -> list[ServerCandidate]:
    """Discover candidates from one source kind, tagged with that source."""
    if source not in SOURCE_KINDS:
        raise ValueError(f"unknown source kind: {source}")
    if cfg.fixture_dir is not None:
        return _discover_fixture(source, cfg)
    limiter = limiter or net.RateLimiter(cfg.requests_per_second)
    if source == "github_search":
        return _discover_github(cfg, limiter)
    if source == "smithery":
        return _discover_smithery(cfg, limiter)
    return _discover_list(source, cfg, limiter)


def _discover_fixture(source: str, cfg: CrawlConfig) -> list[ServerCandidate]:
    root = cfg.fixture_dir
    if source == "github_search":
        entries = json.loads((root / "github_search.json").read_text(encoding="utf-8"))
        out = []
        for e in entries:
            if not matches_search(cfg.search_string, e.get("name", ""), e.get("description", ""),
                                  e.get("readme_text", ""), e.get("tags")):
                continue
            if e.get("stars", 0) < cfg.min_stars:
                continue
            out.append(ServerCandidate(
                repo=RepoRef.from_parts(e.get("host", "github.com"), e["owner"], e["name"]),
                sources={source},
                stars=e.get("stars", 0),
                created_at=_parse_date(e.get("created_at")),
                is_official=bool(e.get("is_official", False)),
            ))
        return out
    if source == "smithery":
        entries = json.loads((root / "smithery.json").read_text(encoding="utf-8"))
        out = []
        for e in entries:
            try:
                repo = RepoRef.from_url(e["repo_url"])
            except (KeyError, ValueError) as exc:
                logger.warning("skipping malformed registry entry %r: %s", e, exc)
                continue
            out.append(ServerCandidate(
                repo=repo,
                sources={source},
                stars=e.get("stars", 0),
                created_at=_parse_date(e.get("created_at")),
                is_official=bool(e.get("is_official", False)),
            ))
        return out
    # curated markdown lists
    md_path = root / f"{source}.md"
    if not md_path.exists():
        return []
    return _candidates_from_markdown(md_path.read_text(encoding="utf-8"), source)


def _candidates_from_markdown(markdown: str, source: str) -> list[ServerCandidate]:
    seen = set()
    out = []
    for owner, name in _REPO_LINK.findall(markdown):
        if name.endswith(".git"):
            name = name[:-4]
        ref = RepoRef.from_parts("github.com", owner, name)
        if ref.url in seen:
            continue
        seen.add(ref.url)
        out.append(ServerCandidate(
            repo=ref,
            sources={source},
            stars=0,  # unknown from a plain list; merged in from other sources at dedup
            is_official=(source == "official_list"),
        ))
    return out


def _github_headers(cfg: CrawlConfig) -> dict:
    import os

    headers = {"Accept": "application/vnd.github+json"}
    token = os.environ.get(cfg.github_token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def _discover_github(cfg: CrawlConfig, limiter: net.RateLimiter) -> list[ServerCandidate]:
    query = f'"{cfg.search_string}" in:name,description,topics,readme stars:>={cfg.min_stars}'
    out = []
    page = 1
    total = None
    while True:
        resp = net.get_with_retries(
            f"{GITHUB_API}/search/repositories",
            headers=_github_headers(cfg),
            params={"q": query, "per_page": 100, "page": page},
            limiter=limiter,
            retries=cfg.max_retries,
        )
        if resp.status_code != 200:
            raise net.RemoteUnavailable(f"github search HTTP {resp.status_code}")
        payload = resp.json()
        if total is None:
            total = payload.get("total_count")
            logger.info("github search total hits: %s", total)
        items = payload.get("items", [])
        if not items:
            break
        for it in items:
            if it.get("stargazers_count", 0) < cfg.min_stars:
                continue
            out.append(ServerCandidate(
                repo=RepoRef.from_parts("github.com", it["owner"]["login"], it["name"]),
                sources={"github_search"},
                stars=it.get("stargazers_count", 0),
                created_at=_parse_date(it.get("created_at")),
            ))
        page += 1
        if page > 10:  # search endpoints cap paging; log and stop
            logger.warning("github search pagination cap reached at page %d", page)
            break
    return out


def _discover_smithery(cfg: CrawlConfig, limiter: net.RateLimiter) -> list[ServerCandidate]:
    out = []
    page = 1
    while True:
        resp = net.get_with_retries(
            f"{SMITHERY_API}/servers",
            params={"page": page, "pageSize": 100},
            limiter=limiter,
            retries=cfg.max_retries,
        )
        if resp.status_code != 200:
            raise net.RemoteUnavailable(f"registry HTTP {resp.status_code}")
        payload = resp.json()
        entries = payload.get("servers", payload if isinstance(payload, list) else [])
        if not entries:
            break
        for e in entries:
            url = e.get("repositoryUrl") or e.get("homepage") or ""
            if "github.com" not in url:
                logger.warning("skipping registry entry without repo url: %s", e.get("qualifiedName"))
                continue
            try:
                repo = RepoRef.from_url(url)
            except ValueError as exc:
                logger.warning("skipping malformed registry entry: %s", exc)
                continue
            out.append(ServerCandidate(
                repo=repo,
                sources={"smithery"},
                stars=e.get("stars", 0),
                created_at=_parse_date(e.get("createdAt")),
                is_official=bool(e.get("isOfficial", False)),
            ))
        page += 1
    return out


def _discover_list(source: str, cfg: CrawlConfig, limiter: net.RateLimiter) -> list[ServerCandidate]:
    url = cfg.list_urls.get(source)
    if not url:
        logger.info("no list url configured for %s", source)
        return []
    resp = net.get_with_retries(url, limiter=limiter, retries=cfg.max_retries)
    if resp.status_code != 200:
        raise net.RemoteUnavailable(f"list fetch HTTP {resp.status_code}")
    return _candidates_from_markdown(resp.text, source)


def dedup(candidates: list[ServerCandidate]) -> list[ServerCandidate]:
    """Merge by normalized URL (union sources, max stars, OR official),
    drop zero-star candidates, return sorted by URL."""
    merged: dict[str, ServerCandidate] = {}
    for c in candidates:
        cur = merged.get(c.repo.url)
        if cur is None:
            merged[c.repo.url] = ServerCandidate(
                repo=c.repo,
                sources=set(c.sources),
                stars=c.stars,
                created_at=c.created_at,
                is_official=c.is_official,
            )
            continue
        cur.sources |= c.sources
        cur.stars = max(cur.stars, c.stars)
        cur.is_official = cur.is_official or c.is_official
        dates = [d for d in (cur.created_at, c.created_at) if d is not None]
        cur.created_at = min(dates) if dates else None
    return [merged[url] for url in sorted(merged) if merged[url].stars > 0]


def snapshot(candidate: ServerCandidate, cfg: CrawlConfig,
             limiter: net.RateLimiter | None = None) -> RawServerDoc:
    """Snapshot the candidate's README under the cutoff policy."""
    if candidate.created_at is not None and candidate.created_at < cfg.snapshot_cutoff:
        snap_date = cfg.snapshot_cutoff
    else:
        snap_date = cfg.collection_date

    if cfg.fixture_dir is not None:
        path = cfg.fixture_dir / "readmes" / f"{candidate.repo.owner}__{candidate.repo.name}.md"
        if not path.exists():
            raise SnapshotError("readme-missing", candidate.repo.url)
        meta = _fixture_repo_meta(cfg.fixture_dir, candidate.repo)
        return RawServerDoc(
            repo=candidate.repo,
            readme_text=path.read_text(encoding="utf-8"),
            description=meta.get("description", ""),
            tags=meta.get("tags", []),
            snapshot_date=snap_date,
        )

    limiter = limiter or net.RateLimiter(cfg.requests_per_second)
    base = f"{GITHUB_API}/repos/{candidate.repo.owner}/{candidate.repo.name}"
    meta_resp = net.get_with_retries(base, headers=_github_headers(cfg), limiter=limiter,
                                     retries=cfg.max_retries)
    if meta_resp.status_code == 404:
        raise SnapshotError("repo-deleted", candidate.repo.url)
    meta = meta_resp.json() if meta_resp.status_code == 200 else {}
    readme_resp = net.get_with_retries(
        f"{base}/readme",
        headers={**_github_headers(cfg), "Accept": "application/vnd.github.raw+json"},
        limiter=limiter,
        retries=cfg.max_retries,
    )
    if readme_resp.status_code == 404:
        raise SnapshotError("readme-missing", candidate.repo.url)
    if readme_resp.status_code != 200:
        raise net.RemoteUnavailable(f"readme HTTP {readme_resp.status_code}")
    return RawServerDoc(
        repo=candidate.repo,
        readme_text=readme_resp.text,
        description=meta.get("description") or "",
        tags=meta.get("topics", []),
        snapshot_date=snap_date,
    )


def _fixture_repo_meta(root: Path, repo: RepoRef) -> dict:
    gh = root / "github_search.json"
    if gh.exists():
        for e in json.loads(gh.read_text(encoding="utf-8")):
            if (e.get("owner", "").lower(), e.get("name", "").lower()) == (repo.owner, repo.name):
                return e
    sm = root / "smithery.json"
    if sm.exists():
        for e in json.loads(sm.read_text(encoding="utf-8")):
            try:
                if RepoRef.from_url(e["repo_url"]).url == repo.url:
                    return e
            except (KeyError, ValueError):
                continue
    return {}


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_candidates(path) -> list[ServerCandidate]:
    with open(path, encoding="utf-8") as fh:
        return [ServerCandidate.from_dict(json.loads(line)) for line in fh if line.strip()]


def read_docs(path) -> list[RawServerDoc]:
    with open(path, encoding="utf-8") as fh:
        return [RawServerDoc.from_dict(json.loads(line)) for line in fh if line.strip()]
