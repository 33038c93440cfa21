"""Package matching, download ingestion, and usage aggregation.

Servers are matched to npm/pypi packages by install-command patterns in the
raw README plus an exact-name registry lookup; every candidate is verified to
exist on its registry. Monthly download series are zero-filled over the
observation window and cached to disk so re-runs are offline and
byte-identical. Aggregation attributes one server install to every tool on
the server, and splits totals by every label dimension.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from mcp_scope import net
from mcp_scope.providers import load_asset_json

logger = logging.getLogger(__name__)

WINDOW = ("2024-11", "2026-02")

NPM_NAME = re.compile(r"^(@[a-z0-9~-][a-z0-9._~-]*/)?[a-z0-9~-][a-z0-9._~-]*$")
PYPI_NAME = re.compile(r"^[A-Za-z0-9]([A-Za-z0-9._-]*[A-Za-z0-9])?$")

_NPM_PKG = r"(?P<pkg>(?:@[\w.-]+/)?[\w.-]+)"
_PY_PKG = r"(?P<pkg>[A-Za-z0-9][A-Za-z0-9._-]*)"
INSTALL_PATTERNS = [
    ("npm", re.compile(rf"\bnpx\s+(?:-{{1,2}}[\w-]+\s+)*['\"]?{_NPM_PKG}(?:@[^\s'\"]+)?['\"]?")),
    ("npm", re.compile(rf"\bnpm\s+(?:install|i|add)\s+(?:-{{1,2}}[\w-]+\s+)*['\"]?{_NPM_PKG}(?:@[^\s'\"]+)?['\"]?")),
    ("pypi", re.compile(rf"\bpip3?\s+install\s+(?:-{{1,2}}[\w-]+\s+)*['\"]?{_PY_PKG}")),
    ("pypi", re.compile(rf"\buv\s+tool\s+install\s+['\"]?{_PY_PKG}")),
    ("pypi", re.compile(rf"\buvx\s+(?:-{{1,2}}[\w-]+\s+)*['\"]?{_PY_PKG}")),
]


@dataclass(frozen=True)
class PackageRef:
    registry: str
    name: str

    def __post_init__(self):
        if self.registry not in ("npm", "pypi"):
            raise ValueError(f"unknown registry: {self.registry}")
        grammar = NPM_NAME if self.registry == "npm" else PYPI_NAME
        if not grammar.match(self.name):
            raise ValueError(f"invalid {self.registry} package name: {self.name!r}")

    def key(self) -> str:
        return f"{self.registry}:{self.name}"


def month_range(start: str, end: str) -> list[str]:
    """Inclusive list of YYYY-MM months."""
    sy, sm = (int(x) for x in start.split("-"))
    ey, em = (int(x) for x in end.split("-"))
    out = []
    y, m = sy, sm
    while (y, m) <= (ey, em):
        out.append(f"{y:04d}-{m:02d}")
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return out


def month_of(d: date | datetime | str) -> str:
    if isinstance(d, str):
        return d[:7]
    return f"{d.year:04d}-{d.month:02d}"


def month_index(month: str, origin: str = WINDOW[0]) -> int:
    oy, om = (int(x) for x in origin.split("-"))
    y, m = (int(x) for x in month.split("-"))
    return (y - oy) * 12 + (m - om)


@dataclass
class DownloadSeries:
    package: PackageRef
    monthly: dict[str, int]
    window: tuple[str, str] = WINDOW
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        months = set(month_range(*self.window))
        bad = [m for m in self.monthly if m not in months]
        if bad:
            raise ValueError(f"months outside window: {bad}")
        if any(v < 0 for v in self.monthly.values()):
            raise ValueError("negative download count")

    def total(self) -> int:
        return sum(self.monthly.values())

    def to_dict(self) -> dict:
        return {
            "package": {"registry": self.package.registry, "name": self.package.name},
            "monthly": dict(sorted(self.monthly.items())),
            "window": list(self.window),
            "flags": self.flags,
        }


@dataclass
class GeoDownloadSeries:
    package: PackageRef
    cells: dict[tuple[str, str], int]  # (month, ISO country) -> count
    flags: list[str] = field(default_factory=list)

    def country_totals(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for (_m, country), n in self.cells.items():
            out[country] = out.get(country, 0) + n
        return out


def validate_geo_against_totals(geo: GeoDownloadSeries, series: DownloadSeries) -> list[str]:
    """Country-summed cells must not exceed the monthly total (gaps allowed)."""
    violations = []
    by_month: dict[str, int] = {}
    for (m, _c), n in geo.cells.items():
        by_month[m] = by_month.get(m, 0) + n
    for m, geo_total in sorted(by_month.items()):
        total = series.monthly.get(m)
        if total is not None and geo_total > total:
            violations.append(f"{m}: geo {geo_total} > total {total}")
    return violations


# ---------------------------------------------------------------- matching

def packages_from_text(text: str) -> set[PackageRef]:
    """Install-command candidates from raw README text (unverified)."""
    found: set[PackageRef] = set()
    for registry, pattern in INSTALL_PATTERNS:
        for m in pattern.finditer(text):
            name = m.group("pkg")
            if registry == "npm":
                name = name.lower()
            try:
                found.add(PackageRef(registry=registry, name=name))
            except ValueError:
                continue
    return found


def match_packages(readme_text: str, repo_name: str, registry_client) -> set[PackageRef]:
    """Verified packages for one server: install patterns + repo-name lookup."""
    candidates = packages_from_text(readme_text)
    for registry in ("npm", "pypi"):
        try:
            candidates.add(PackageRef(registry=registry, name=repo_name.lower() if registry == "npm" else repo_name))
        except ValueError:
            continue
    verified = {p for p in candidates if registry_client.exists(p)}
    return verified


@dataclass
class UsageJoin:
    server_to_packages: dict[str, list[PackageRef]]
    coverage: dict

    def to_dict(self) -> dict:
        return {
            "server_to_packages": {
                sid: [p.key() for p in pkgs]
                for sid, pkgs in sorted(self.server_to_packages.items())
            },
            "coverage": self.coverage,
        }


def build_join(servers, matched: dict[str, set[PackageRef]]) -> UsageJoin:
    """Enforce the one-server-per-package rule (first seen wins, logged)."""
    owner: dict[str, str] = {}
    join: dict[str, list[PackageRef]] = {}
    for server in servers:
        kept = []
        for pkg in sorted(matched.get(server.id, set()), key=lambda p: p.key()):
            if pkg.key() in owner:
                logger.warning("package %s already matched to server %s; skipping for %s",
                               pkg.key(), owner[pkg.key()], server.id)
                continue
            owner[pkg.key()] = server.id
            kept.append(pkg)
        if kept:
            join[server.id] = kept
    matched_tools = sum(
        len(s.extraction.tools) for s in servers if s.id in join
    )
    return UsageJoin(
        server_to_packages=join,
        coverage={
            "matched_servers": len(join),
            "total_servers": len(list(servers)),
            "matched_tools": matched_tools,
        },
    )


# ---------------------------------------------------------------- registries

class FixtureRegistryClient:
    """Offline registry: known packages + canned monthly downloads.

    fixture layout: registry/npm.json and registry/pypi.json, each
    {"packages": {"name": {"monthly": {"YYYY-MM": count}}}}.
    """

    def __init__(self, root):
        self.root = Path(root)
        self._data = {}
        for registry in ("npm", "pypi"):
            p = self.root / "registry" / f"{registry}.json"
            self._data[registry] = (
                json.loads(p.read_text(encoding="utf-8")) if p.exists() else {"packages": {}}
            )

    def exists(self, pkg: PackageRef) -> bool:
        return pkg.name in self._data[pkg.registry]["packages"]

    def fetch_monthly(self, pkg: PackageRef) -> dict[str, int] | None:
        entry = self._data[pkg.registry]["packages"].get(pkg.name)
        if entry is None:
            return None
        return {m: int(v) for m, v in entry.get("monthly", {}).items()}


class HttpRegistryClient:
    """Live npm/pypi endpoints with shared rate limiting."""

    def __init__(self, limiter: net.RateLimiter | None = None, retries: int = 5,
                 window: tuple[str, str] = WINDOW):
        self.limiter = limiter or net.RateLimiter(requests_per_second=2.0)
        self.retries = retries
        self.window = window

    def exists(self, pkg: PackageRef) -> bool:
        if pkg.registry == "npm":
            url = f"https://registry.npmjs.org/{pkg.name}"
        else:
            url = f"https://pypi.org/pypi/{pkg.name}/json"
        resp = net.get_with_retries(url, limiter=self.limiter, retries=self.retries)
        return resp.status_code == 200

    def fetch_monthly(self, pkg: PackageRef) -> dict[str, int] | None:
        start, end = self.window
        if pkg.registry == "npm":
            first = f"{start}-01"
            ey, em = (int(x) for x in end.split("-"))
            last_day = [31, 29 if ey % 4 == 0 else 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31][em - 1]
            url = f"https://api.npmjs.org/downloads/range/{first}:{end}-{last_day:02d}/{pkg.name}"
            resp = net.get_with_retries(url, limiter=self.limiter, retries=self.retries)
            if resp.status_code != 200:
                return None
            monthly: dict[str, int] = {}
            for row in resp.json().get("downloads", []):
                m = row["day"][:7]
                monthly[m] = monthly.get(m, 0) + int(row["downloads"])
            return monthly
        url = f"https://pypistats.org/api/packages/{pkg.name}/overall"
        resp = net.get_with_retries(url, params={"mirrors": "false"}, limiter=self.limiter,
                                    retries=self.retries)
        if resp.status_code != 200:
            return None
        monthly = {}
        for row in resp.json().get("data", []):
            if row.get("category") not in (None, "without_mirrors"):
                continue
            m = row["date"][:7]
            monthly[m] = monthly.get(m, 0) + int(row["downloads"])
        return monthly


def _cache_key(pkg: PackageRef, window: tuple[str, str]) -> str:
    safe = pkg.name.replace("@", "").replace("/", "__")
    return f"{pkg.registry}__{safe}__{window[0]}__{window[1]}"


def fetch_downloads(pkg: PackageRef, window: tuple[str, str], client,
                    cache_dir=None) -> DownloadSeries:
    """Complete monthly series over the window, zero-filled, disk-cached.

    Cache files are keyed (pkg, range, fetch-date); lookups take the newest
    file for (pkg, range) so repeat runs stay offline and byte-identical.
    """
    months = month_range(*window)
    raw: dict[str, int] | None = None
    flags: list[str] = []

    cache_hit = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        hits = sorted(cache_dir.glob(_cache_key(pkg, window) + "__*.json"))
        if hits:
            cache_hit = hits[-1]
    if cache_hit is not None:
        payload = json.loads(cache_hit.read_text(encoding="utf-8"))
        raw = {m: int(v) for m, v in payload["monthly"].items()}
        flags = list(payload.get("flags", []))
    else:
        raw = client.fetch_monthly(pkg)
        if raw is None:
            flags.append("unknown_package")
            raw = {}
        if cache_dir is not None:
            stamp = datetime.now().strftime("%Y%m%dT%H%M%S")
            out = cache_dir / f"{_cache_key(pkg, window)}__{stamp}.json"
            out.write_text(json.dumps(
                {"monthly": {m: raw.get(m, 0) for m in sorted(raw)}, "flags": flags,
                 "fetch_date": stamp},
                sort_keys=True,
            ), encoding="utf-8")

    monthly = {m: int(raw.get(m, 0)) for m in months}
    return DownloadSeries(package=pkg, monthly=monthly, window=window, flags=flags)


def server_download_series(join: UsageJoin, series: dict[str, DownloadSeries],
                           window: tuple[str, str] = WINDOW) -> dict[str, dict[str, int]]:
    """Per-server monthly downloads: packages matched on both registries sum."""
    months = month_range(*window)
    out: dict[str, dict[str, int]] = {}
    for sid, pkgs in join.server_to_packages.items():
        totals = {m: 0 for m in months}
        for pkg in pkgs:
            s = series.get(pkg.key())
            if s is None:
                continue
            for m, v in s.monthly.items():
                totals[m] = totals.get(m, 0) + v
        out[sid] = totals
    return out


# ---------------------------------------------------------------- aggregation

@dataclass
class UsageRow:
    month: str
    level: str  # server | tool
    dimension: str
    key: str
    value: float


def aggregate_usage(servers, classifications, join: UsageJoin,
                    server_series: dict[str, dict[str, int]],
                    verdicts: dict[str, "object"] | None = None,
                    window: tuple[str, str] = WINDOW) -> list[UsageRow]:
    """Monthly ecosystem tables over every label dimension.

    Server-level rows count server downloads; tool-level rows count tool
    uses under the 1-install = 1-use-per-tool allocation. AI rows apply the
    first-evidence-date rule: a server's downloads count as AI-coauthored
    only from the month of its first dated evidence.
    """
    verdicts = verdicts or {}
    months = month_range(*window)
    cls_by_id = {c.server_id: c for c in classifications}
    acc: dict[tuple[str, str, str, str], float] = {}

    def add(month, level, dimension, key, value):
        if value == 0:
            return
        k = (month, level, dimension, key)
        acc[k] = acc.get(k, 0.0) + value

    for server in servers:
        downloads = server_series.get(server.id)
        if downloads is None:
            continue
        cls = cls_by_id.get(server.id)
        vd = verdicts.get(server.id)
        ai_from = None
        if vd is not None and getattr(vd, "ai_authored", False) and vd.date_first_ai_evidence:
            ai_from = month_of(vd.date_first_ai_evidence)
        for m in months:
            d = downloads.get(m, 0)
            if d == 0:
                continue
            add(m, "server", "total", "total", d)
            ai_key = "ai_coauthored" if (ai_from is not None and m >= ai_from) else "not_detected"
            add(m, "server", "ai", ai_key, d)
            if cls is None:
                add(m, "server", "direct_impact", "unclassified", d)
                continue
            agg = cls.aggregate
            add(m, "server", "direct_impact", agg.direct_impact_category or "unclassified", d)
            add(m, "server", "domain", agg.l1_domain or "unclassified", d)
            add(m, "server", "soc", agg.soc_group or "unclassified", d)
            gen_key = "general" if cls.generality.environment_general else "narrow"
            add(m, "server", "generality", gen_key, d)
            add(m, "server", "payments_autonomy", str(cls.payments.autonomy), d)

            for tool in cls.tools:
                add(m, "tool", "total", "total", d)
                add(m, "tool", "ai", ai_key, d)
                di = tool.direct_impact
                add(m, "tool", "direct_impact", di.category or "unclassified", d)
                add(m, "tool", "functionality", di.functionality or "unclassified", d)
                add(m, "tool", "generality", gen_key, d)
                if tool.task is not None:
                    add(m, "tool", "domain", tool.task.l1_id, d)
                    add(m, "tool", "stakes", tool.task.stakes_bucket or "unclassified", d)
                    if tool.task.soc_distribution:
                        for soc, w in tool.task.soc_distribution.items():
                            add(m, "tool", "soc", soc, d * w)
                    else:
                        add(m, "tool", "soc", "unclassified", d)
                else:
                    add(m, "tool", "domain", "unclassified", d)
                    add(m, "tool", "stakes", "unclassified", d)
                    add(m, "tool", "soc", "unclassified", d)

    return [
        UsageRow(month=k[0], level=k[1], dimension=k[2], key=k[3], value=v)
        for k, v in sorted(acc.items())
    ]


# ---------------------------------------------------------------- concentration

@dataclass
class ConcentrationResult:
    counts: list[int]           # sorted descending
    cumulative_share: list[float]
    top_shares: dict[str, dict]  # "1%" -> {"servers": n, "share": s}
    flags: list[str] = field(default_factory=list)


def concentration(ranked_downloads, percentages=(0.01, 0.10)) -> ConcentrationResult:
    """Cumulative-share curve and top-p% shares (ceil(p*N) servers)."""
    counts = sorted((int(c) for c in ranked_downloads), reverse=True)
    if not counts:
        raise ValueError("empty download list")
    total = sum(counts)
    if total == 0:
        return ConcentrationResult(counts=counts, cumulative_share=[],
                                   top_shares={}, flags=["zero_total"])
    cum = []
    running = 0
    for c in counts:
        running += c
        cum.append(running / total)
    top = {}
    for p in percentages:
        n = max(1, math.ceil(p * len(counts)))
        top[f"{p:.0%}"] = {"servers": n, "share": cum[n - 1]}
    return ConcentrationResult(counts=counts, cumulative_share=cum, top_shares=top)


# ---------------------------------------------------------------- geography

def load_continent_map() -> dict[str, str]:
    return load_asset_json("continents")


def geo_breadth(country_totals: dict[str, float],
                continents: dict[str, str] | None = None) -> tuple[str, dict[str, float]]:
    """one_country (>80% in one country), worldwide (<70% in every continent),
    else one_continent. Returns (bucket, country shares)."""
    total = sum(country_totals.values())
    if total <= 0:
        raise ValueError("zero total downloads")
    continents = continents or load_continent_map()
    shares = {c: n / total for c, n in country_totals.items()}
    if max(shares.values()) > 0.8:
        return "one_country", shares
    cont_shares: dict[str, float] = {}
    for country, share in shares.items():
        cont = continents.get(country.upper(), "UNKNOWN")
        cont_shares[cont] = cont_shares.get(cont, 0.0) + share
    if max(cont_shares.values()) < 0.7:
        return "worldwide", shares
    return "one_continent", shares


def load_geo_table(path, window: tuple[str, str] = WINDOW) -> dict[str, GeoDownloadSeries]:
    """Bulk country-split table: CSV with package, month, country, downloads."""
    import csv as _csv

    out: dict[str, dict[tuple[str, str], int]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in _csv.DictReader(fh):
            pkg = row["package"]
            cell = (row["month"], row["country"].upper())
            out.setdefault(pkg, {})
            out[pkg][cell] = out[pkg].get(cell, 0) + int(row["downloads"])
    result = {}
    for pkg, cells in out.items():
        try:
            ref = PackageRef(registry="pypi", name=pkg)
        except ValueError:
            logger.warning("skipping geo rows for invalid package name %r", pkg)
            continue
        result[pkg] = GeoDownloadSeries(package=ref, cells=cells)
    return result
