"""Detect AI co-authorship of a repository from its development metadata.

Four evidence criteria over commits (cap 10,000), recent pull requests
(cap 30) and the file tree: (1) Co-Authored-By trailers naming a known
coding agent, (2) agent configuration files, (3) known agent bot accounts
(dependency bots excluded), (4) agent name/handle mentions in commit or PR
text. Evidence is dated (config files by the commit that introduced them);
the first-month variant keeps only evidence within 30 days (30x24h) of
repository creation. Absence of evidence means "not detected", never
"human-authored".
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from mcp_scope import net
from mcp_scope.providers import load_asset_json

logger = logging.getLogger(__name__)

COMMIT_CAP = 10_000
PULL_CAP = 30
FIRST_MONTH = timedelta(hours=30 * 24)

TRAILER_RE = re.compile(r"^\s*co-authored-by:\s*(?P<value>.+?)\s*$", re.IGNORECASE | re.MULTILINE)

CRITERION_KEYS = {1: "coauthor", 2: "config", 3: "bot", 4: "mention"}


def _to_utc(value) -> datetime | None:
    if value is None:
        return None
    if isinstance(value, datetime):
        dt = value
    else:
        dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


@dataclass
class Commit:
    sha: str
    author_login: str
    message: str
    date: datetime | None

    @classmethod
    def from_dict(cls, d: dict) -> "Commit":
        return cls(sha=d.get("sha", ""), author_login=d.get("author_login", "") or "",
                   message=d.get("message", "") or "", date=_to_utc(d.get("date")))


@dataclass
class PullRequest:
    number: int
    author_login: str
    title: str
    body: str
    date: datetime | None

    @classmethod
    def from_dict(cls, d: dict) -> "PullRequest":
        return cls(number=d.get("number", 0), author_login=d.get("author_login", "") or "",
                   title=d.get("title", "") or "", body=d.get("body", "") or "",
                   date=_to_utc(d.get("date")))


@dataclass
class TreeEntry:
    path: str
    introduced_at: datetime | None = None


@dataclass
class RepoActivity:
    commits: list[Commit] = field(default_factory=list)
    pulls: list[PullRequest] = field(default_factory=list)
    tree: list[TreeEntry] = field(default_factory=list)
    created_at: datetime | None = None
    # paths present at the newest commit within the first 30 days, when known
    first_month_tree: list[str] | None = None
    first_month_tree_date: datetime | None = None
    coverage: dict = field(default_factory=lambda: {"commits": True, "pulls": True, "tree": True})

    def __post_init__(self):
        self.commits = self.commits[:COMMIT_CAP]
        self.pulls = self.pulls[:PULL_CAP]


@dataclass
class AiEvidence:
    criterion: int
    tool: str | None
    date: datetime | None
    location: str

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "tool": self.tool,
            "date": self.date.isoformat() if self.date else None,
            "location": self.location,
        }


@dataclass
class AiVerdict:
    ai_authored: bool
    agent: str | None
    score_breakdown: dict
    first_month: bool | None
    date_first_ai_evidence: datetime | None
    evidence: list[AiEvidence] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ai_authored": self.ai_authored,
            "agent": self.agent,
            "score_breakdown": self.score_breakdown,
            "first_month": self.first_month,
            "date_first_ai_evidence": (
                self.date_first_ai_evidence.isoformat() if self.date_first_ai_evidence else None
            ),
            "evidence": [e.to_dict() for e in self.evidence],
        }


class PatternSet:
    """Compiled agent patterns from the shipped asset (or a custom dict)."""

    def __init__(self, raw: dict | None = None):
        raw = raw or load_asset_json("ai_patterns")
        self.weights = raw["criterion_weights"]
        self.excluded_bots = [p.lower() for p in raw["excluded_bot_patterns"]]
        self.agents = raw["agents"]
        self._mentions: list[tuple[str, re.Pattern]] = []
        for agent in self.agents:
            for phrase in agent["mention_phrases"]:
                pattern = re.compile(
                    rf"(?<![\w.@-]){re.escape(phrase)}(?![\w-])", re.IGNORECASE
                )
                self._mentions.append((agent["name"], pattern))

    def match_coauthor(self, trailer_value: str) -> str | None:
        low = trailer_value.lower()
        for agent in self.agents:
            if any(p in low for p in agent["coauthor_patterns"]):
                return agent["name"]
        return None

    def match_config(self, path: str) -> str | None:
        segments = path.split("/")
        for agent in self.agents:
            for pattern in agent["config_paths"]:
                if pattern.endswith("/"):
                    if pattern.rstrip("/") in segments[:-1] or (
                        len(segments) == 1 and segments[0] == pattern.rstrip("/")
                    ):
                        return agent["name"]
                elif path == pattern or segments[-1] == pattern:
                    return agent["name"]
        return None

    def is_excluded_bot(self, login: str) -> bool:
        low = login.lower()
        return any(p in low for p in self.excluded_bots)

    def match_bot(self, login: str) -> str | None:
        if not login or self.is_excluded_bot(login):
            return None
        low = login.lower()
        for agent in self.agents:
            if low in (b.lower() for b in agent["bot_accounts"]):
                return agent["name"]
        return None

    def find_mentions(self, text: str) -> list[str]:
        found = []
        for name, pattern in self._mentions:
            if name not in found and pattern.search(text):
                found.append(name)
        return found


def scan_evidence(activity: RepoActivity, patterns: PatternSet | None = None) -> list[AiEvidence]:
    """Collect dated evidence under all four criteria."""
    patterns = patterns or PatternSet()
    evidence: list[AiEvidence] = []

    def mention_text(raw: str) -> str:
        # trailer lines already counted under criterion 1
        return TRAILER_RE.sub("", raw)

    for commit in activity.commits:
        for m in TRAILER_RE.finditer(commit.message):
            agent = patterns.match_coauthor(m.group("value"))
            if agent:
                evidence.append(AiEvidence(1, agent, commit.date, f"commit {commit.sha}"))
        bot = patterns.match_bot(commit.author_login)
        if bot:
            evidence.append(AiEvidence(3, bot, commit.date, f"commit {commit.sha}"))
        for agent in patterns.find_mentions(mention_text(commit.message)):
            evidence.append(AiEvidence(4, agent, commit.date, f"commit {commit.sha}"))

    for pr in activity.pulls:
        text = f"{pr.title}\n{pr.body}"
        for m in TRAILER_RE.finditer(pr.body or ""):
            agent = patterns.match_coauthor(m.group("value"))
            if agent:
                evidence.append(AiEvidence(1, agent, pr.date, f"PR #{pr.number}"))
        bot = patterns.match_bot(pr.author_login)
        if bot:
            evidence.append(AiEvidence(3, bot, pr.date, f"PR #{pr.number}"))
        for agent in patterns.find_mentions(mention_text(text)):
            evidence.append(AiEvidence(4, agent, pr.date, f"PR #{pr.number}"))

    config_dates: dict[str, tuple[str, datetime | None]] = {}
    for entry in activity.tree:
        agent = patterns.match_config(entry.path)
        if agent:
            config_dates[entry.path] = (agent, entry.introduced_at)
    if activity.first_month_tree:
        for path in activity.first_month_tree:
            agent = patterns.match_config(path)
            if not agent:
                continue
            known = config_dates.get(path)
            window_date = activity.first_month_tree_date
            if known is None or (
                known[1] is None or (window_date is not None and window_date < known[1])
            ):
                config_dates[path] = (agent, window_date)
    for path in sorted(config_dates):
        agent, when = config_dates[path]
        evidence.append(AiEvidence(2, agent, when, path))

    return evidence


def identify_agent(evidence: list[AiEvidence], patterns: PatternSet | None = None) -> tuple[str | None, dict]:
    """Weighted attribution: config 10, bot 5, co-author 3, mention 1.

    Ties break by presence in the higher-weight criterion, then alphabetically.
    """
    if not evidence:
        raise ValueError("identify_agent needs non-empty evidence")
    patterns = patterns or PatternSet()
    weights = patterns.weights
    breakdown: dict[str, dict] = {}
    for ev in evidence:
        if ev.tool is None:
            continue
        row = breakdown.setdefault(
            ev.tool, {"config": 0, "bot": 0, "coauthor": 0, "mention": 0, "score": 0}
        )
        row[CRITERION_KEYS[ev.criterion]] += 1
    for row in breakdown.values():
        row["score"] = (
            weights["config"] * row["config"]
            + weights["bot"] * row["bot"]
            + weights["coauthor"] * row["coauthor"]
            + weights["mention"] * row["mention"]
        )
    if not breakdown:
        return None, {}
    ranked = sorted(
        breakdown.items(),
        key=lambda kv: (
            -kv[1]["score"],
            -kv[1]["config"],
            -kv[1]["bot"],
            -kv[1]["coauthor"],
            -kv[1]["mention"],
            kv[0],
        ),
    )
    return ranked[0][0], breakdown


def verdict(evidence: list[AiEvidence], created_at: datetime | None,
            patterns: PatternSet | None = None) -> AiVerdict:
    """Combine evidence into the per-repo verdict with the first-month variant."""
    created_at = _to_utc(created_at)
    ai_authored = bool(evidence)
    agent, breakdown = (identify_agent(evidence, patterns) if evidence else (None, {}))
    dated = [e.date for e in evidence if e.date is not None]
    first = min(dated) if dated else None
    if created_at is None:
        first_month = None
    else:
        cutoff = created_at + FIRST_MONTH
        first_month = any(d <= cutoff for d in dated)
    return AiVerdict(
        ai_authored=ai_authored,
        agent=agent,
        score_breakdown=breakdown,
        first_month=first_month,
        date_first_ai_evidence=first,
        evidence=evidence,
    )


# ---------------------------------------------------------------- loading

def load_activity_fixture(root, owner: str, name: str) -> RepoActivity:
    """Offline activity from a fixture directory (same JSON shapes as remote).

    fixture layout: activity/<owner>__<name>/{meta,commits,pulls,tree}.json
    plus optional tree_first_month.json {"date": ..., "paths": [...]}.
    """
    base = Path(root) / "activity" / f"{owner}__{name}"
    coverage = {"commits": False, "pulls": False, "tree": False}
    commits, pulls, tree = [], [], []
    created_at = None
    fm_paths, fm_date = None, None
    meta_p = base / "meta.json"
    if meta_p.exists():
        created_at = _to_utc(json.loads(meta_p.read_text(encoding="utf-8")).get("created_at"))
    p = base / "commits.json"
    if p.exists():
        commits = [Commit.from_dict(d) for d in json.loads(p.read_text(encoding="utf-8"))]
        coverage["commits"] = True
    p = base / "pulls.json"
    if p.exists():
        pulls = [PullRequest.from_dict(d) for d in json.loads(p.read_text(encoding="utf-8"))]
        coverage["pulls"] = True
    p = base / "tree.json"
    if p.exists():
        raw = json.loads(p.read_text(encoding="utf-8"))
        for entry in raw:
            if isinstance(entry, str):
                tree.append(TreeEntry(path=entry))
            else:
                tree.append(TreeEntry(path=entry["path"], introduced_at=_to_utc(entry.get("introduced_at"))))
        coverage["tree"] = True
    p = base / "tree_first_month.json"
    if p.exists():
        raw = json.loads(p.read_text(encoding="utf-8"))
        fm_paths = raw.get("paths", [])
        fm_date = _to_utc(raw.get("date"))
    return RepoActivity(
        commits=commits, pulls=pulls, tree=tree, created_at=created_at,
        first_month_tree=fm_paths, first_month_tree_date=fm_date, coverage=coverage,
    )


class GithubActivityClient:
    """Live activity fetcher over the code-host REST endpoints."""

    def __init__(self, token_env: str = "GITHUB_TOKEN",
                 limiter: net.RateLimiter | None = None, retries: int = 5):
        self.token_env = token_env
        self.limiter = limiter or net.RateLimiter(requests_per_second=1.0)
        self.retries = retries

    def _headers(self) -> dict:
        import os

        headers = {"Accept": "application/vnd.github+json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _get(self, url: str, params: dict | None = None):
        return net.get_with_retries(url, headers=self._headers(), params=params,
                                    limiter=self.limiter, retries=self.retries)

    def fetch(self, owner: str, name: str) -> RepoActivity:
        base = f"https://api.github.com/repos/{owner}/{name}"
        coverage = {"commits": True, "pulls": True, "tree": True}
        created_at = None

        resp = self._get(base)
        if resp.status_code == 200:
            created_at = _to_utc(resp.json().get("created_at"))

        commits: list[Commit] = []
        page = 1
        try:
            while len(commits) < COMMIT_CAP:
                resp = self._get(f"{base}/commits", params={"per_page": 100, "page": page})
                if resp.status_code != 200:
                    break
                batch = resp.json()
                if not batch:
                    break
                for c in batch:
                    commits.append(Commit(
                        sha=c.get("sha", ""),
                        author_login=(c.get("author") or {}).get("login", "") or "",
                        message=(c.get("commit") or {}).get("message", "") or "",
                        date=_to_utc(((c.get("commit") or {}).get("author") or {}).get("date")),
                    ))
                page += 1
        except (net.RemoteUnavailable, net.RateLimited) as exc:
            logger.warning("partial commit scan for %s/%s: %s", owner, name, exc)
            coverage["commits"] = False

        pulls: list[PullRequest] = []
        try:
            resp = self._get(f"{base}/pulls", params={
                "state": "all", "sort": "created", "direction": "desc", "per_page": PULL_CAP,
            })
            if resp.status_code == 200:
                for p in resp.json():
                    pulls.append(PullRequest(
                        number=p.get("number", 0),
                        author_login=(p.get("user") or {}).get("login", "") or "",
                        title=p.get("title", "") or "",
                        body=p.get("body", "") or "",
                        date=_to_utc(p.get("created_at")),
                    ))
            else:
                coverage["pulls"] = False
        except (net.RemoteUnavailable, net.RateLimited) as exc:
            logger.warning("partial PR scan for %s/%s: %s", owner, name, exc)
            coverage["pulls"] = False

        tree: list[TreeEntry] = []
        patterns = PatternSet()
        try:
            resp = self._get(f"{base}/git/trees/HEAD", params={"recursive": "1"})
            if resp.status_code == 200:
                for entry in resp.json().get("tree", []):
                    path = entry.get("path", "")
                    introduced = None
                    # dating is one extra lookup; only spend it on matching paths
                    if patterns.match_config(path):
                        introduced = self._first_commit_date(base, path)
                    tree.append(TreeEntry(path=path, introduced_at=introduced))
            else:
                coverage["tree"] = False
        except (net.RemoteUnavailable, net.RateLimited) as exc:
            logger.warning("partial tree scan for %s/%s: %s", owner, name, exc)
            coverage["tree"] = False

        return RepoActivity(commits=commits, pulls=pulls, tree=tree,
                            created_at=created_at, coverage=coverage)

    def _first_commit_date(self, base: str, path: str) -> datetime | None:
        page = 1
        last_batch = None
        while page <= 20:
            resp = self._get(f"{base}/commits", params={"path": path, "per_page": 100, "page": page})
            if resp.status_code != 200:
                break
            batch = resp.json()
            if not batch:
                break
            last_batch = batch
            if len(batch) < 100:
                break
            page += 1
        if not last_batch:
            return None
        oldest = last_batch[-1]
        return _to_utc(((oldest.get("commit") or {}).get("author") or {}).get("date"))
