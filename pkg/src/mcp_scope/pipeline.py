"""Pipeline orchestration: config, stage ordering, and the run() entry point.

Stages run in dependency order: crawl -> extract -> classify -> detect-ai ->
usage -> fit -> report. Each stage reads this run's artifacts (or a named
prior run's) and writes its own with content digests in the manifest.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import yaml

from mcp_scope import authorship, classify, crawl, extract, store, taxonomy, trends, usage
from mcp_scope.providers import (
    HashingEmbedder,
    HttpTextAnalysisProvider,
    RuleBasedTextProvider,
)

logger = logging.getLogger(__name__)

STAGE_ORDER = ("crawl", "extract", "classify", "detect-ai", "usage", "fit", "report")

# artifact name -> (filename, producing stage)
ARTIFACTS = {
    "candidates": ("candidates.jsonl", "crawl"),
    "raw_docs": ("raw_docs.jsonl", "crawl"),
    "servers": ("servers.jsonl", "extract"),
    "hierarchy": ("hierarchy.json", "classify"),
    "classifications": ("classifications.jsonl", "classify"),
    "ai_verdicts": ("ai_verdicts.jsonl", "detect-ai"),
    "usage_join": ("usage_join.json", "usage"),
    "package_series": ("package_series.jsonl", "usage"),
    "usage_monthly": ("usage_monthly.csv", "usage"),
    "usage_geo": ("usage_geo.csv", "usage"),
    "concentration": ("concentration.csv", "usage"),
    "fits": ("fits.json", "fit"),
}

STAGE_INPUTS = {
    "crawl": (),
    "extract": ("candidates", "raw_docs"),
    "classify": ("servers",),
    "detect-ai": ("servers",),
    "usage": ("servers", "raw_docs", "classifications", "ai_verdicts"),
    "fit": ("servers", "classifications", "ai_verdicts", "usage_monthly", "hierarchy"),
    "report": ("servers", "classifications", "ai_verdicts", "usage_monthly",
               "usage_geo", "concentration", "fits"),
}


class ConfigError(Exception):
    pass


class MissingStageError(Exception):
    def __init__(self, stage: str, missing_artifact: str, producer: str):
        super().__init__(
            f"stage {stage!r} needs artifact {missing_artifact!r}; run stage {producer!r} first"
        )
        self.stage = stage
        self.producer = producer


class ProviderAuthError(Exception):
    pass


@dataclass
class PipelineConfig:
    sources: list = field(default_factory=lambda: list(crawl.SOURCE_KINDS))
    fixture_dir: Path | None = None
    output_dir: Path = Path("runs-store")
    seed: int = 42
    search_string: str = "mcp server"
    min_stars: int = 1
    snapshot_cutoff: date = date(2025, 10, 1)
    collection_date: date = date(2026, 2, 1)
    list_urls: dict = field(default_factory=dict)
    # provider: "rules", None, or {"endpoint":..., "model":..., "api_key_env":...}
    provider: object = "rules"
    embedder_dimension: int = 256
    taxonomy_files: dict | None = None   # {tasks, occupations, work_context}
    hierarchy_path: Path | None = None   # pre-built alternative to taxonomy_files
    taxonomy_k: int = 5
    usage_window: tuple = usage.WINDOW
    geo_table: Path | None = None
    cache_dir: Path | None = None
    bootstrap_replicates: int = 200

    def __post_init__(self):
        if self.fixture_dir is not None:
            self.fixture_dir = Path(self.fixture_dir)
        self.output_dir = Path(self.output_dir)
        unknown = set(self.sources) - set(crawl.SOURCE_KINDS)
        if unknown:
            raise ConfigError(f"unknown sources: {sorted(unknown)}")
        if isinstance(self.provider, dict):
            for key in ("endpoint", "model"):
                if key not in self.provider:
                    raise ConfigError(f"provider config missing {key!r}")
        elif self.provider not in (None, "rules"):
            raise ConfigError(f"provider must be 'rules', null, or an endpoint mapping")
        if self.taxonomy_files is not None:
            for key in ("tasks", "occupations", "work_context"):
                if key not in self.taxonomy_files:
                    raise ConfigError(f"taxonomy_files missing {key!r}")

    @classmethod
    def from_yaml(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = path.parent

        def respath(v):
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        kwargs = {}
        simple = {
            "sources", "seed", "search_string", "min_stars", "list_urls",
            "provider", "embedder_dimension", "taxonomy_k", "bootstrap_replicates",
        }
        for key, value in raw.items():
            if key in simple:
                kwargs[key] = value
            elif key in ("fixture_dir", "output_dir", "geo_table", "cache_dir", "hierarchy_path"):
                kwargs[key] = respath(value)
            elif key in ("snapshot_cutoff", "collection_date"):
                kwargs[key] = value if isinstance(value, date) else date.fromisoformat(str(value))
            elif key == "usage_window":
                kwargs[key] = tuple(value)
            elif key == "taxonomy_files":
                kwargs[key] = {k: respath(v) for k, v in value.items()}
            else:
                raise ConfigError(f"unknown config key: {key}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def snapshot(self) -> dict:
        """Config echo for the manifest; secrets stay in the environment."""

        def plain(value):
            if isinstance(value, Path):
                return str(value)
            if isinstance(value, date):
                return value.isoformat()
            if isinstance(value, (tuple, list)):
                return [plain(v) for v in value]
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            return value

        return {key: plain(value) for key, value in self.__dict__.items()}

    def text_provider(self):
        if self.provider is None:
            return None
        if self.provider == "rules":
            return RuleBasedTextProvider(embedder=HashingEmbedder(self.embedder_dimension))
        return HttpTextAnalysisProvider(
            endpoint=self.provider["endpoint"],
            model=self.provider["model"],
            api_key_env=self.provider.get("api_key_env", "MCP_SCOPE_API_KEY"),
        )

    def check_provider_auth(self):
        import os

        if isinstance(self.provider, dict):
            env = self.provider.get("api_key_env", "MCP_SCOPE_API_KEY")
            if not os.environ.get(env):
                raise ProviderAuthError(f"provider API key missing from ${env}")

    def crawl_config(self) -> crawl.CrawlConfig:
        return crawl.CrawlConfig(
            search_string=self.search_string,
            min_stars=self.min_stars,
            list_urls=self.list_urls,
            snapshot_cutoff=self.snapshot_cutoff,
            collection_date=self.collection_date,
            fixture_dir=self.fixture_dir,
        )


def run(cfg: PipelineConfig, stages=None, prior_run=None) -> dict:
    """Execute the requested stages; returns the finalized run manifest."""
    requested = list(stages) if stages else list(STAGE_ORDER)
    unknown = set(requested) - set(STAGE_ORDER)
    if unknown:
        raise ConfigError(f"unknown stages: {sorted(unknown)}")
    requested = [s for s in STAGE_ORDER if s in requested]

    cfg.check_provider_auth()
    logger.info("pipeline config: %s", json.dumps(cfg.snapshot(), sort_keys=True))

    prior_manifest = store.load_manifest(prior_run) if prior_run else None
    run_store = store.RunStore(cfg.output_dir)
    this_run = run_store.create_run(cfg.snapshot())

    def resolve(name: str) -> Path:
        filename, _producer = ARTIFACTS[name]
        local = this_run.path / filename
        if name in this_run.manifest["artifacts"]:
            return local
        if prior_manifest and name in prior_manifest["artifacts"]:
            return store.artifact_file(prior_run, prior_manifest, name)
        raise KeyError(name)

    def check_inputs(stage: str):
        for needed in STAGE_INPUTS[stage]:
            try:
                resolve(needed)
            except KeyError:
                raise MissingStageError(stage, needed, ARTIFACTS[needed][1]) from None

    impl = {
        "crawl": _stage_crawl,
        "extract": _stage_extract,
        "classify": _stage_classify,
        "detect-ai": _stage_detect_ai,
        "usage": _stage_usage,
        "fit": _stage_fit,
        "report": _stage_report,
    }
    try:
        for stage in requested:
            check_inputs(stage)
            started = time.monotonic()
            info = impl[stage](cfg, this_run, resolve) or {}
            this_run.record_stage(stage, time.monotonic() - started, **info)
            logger.info("stage %s done in %.2fs", stage, time.monotonic() - started)
    finally:
        manifest = this_run.finalize()
    return {"run_dir": str(this_run.path), **manifest}


# ---------------------------------------------------------------- stages

def _stage_crawl(cfg: PipelineConfig, run_: store.Run, resolve) -> dict:
    ccfg = cfg.crawl_config()
    raw = []
    for source in cfg.sources:
        found = crawl.discover(source, ccfg)
        logger.info("discovered %d candidates from %s", len(found), source)
        raw.extend(found)
    merged = crawl.dedup(raw)
    docs = []
    dropped = 0
    for candidate in merged:
        try:
            docs.append(crawl.snapshot(candidate, ccfg))
        except crawl.SnapshotError as exc:
            dropped += 1
            logger.warning("dropping %s: %s", candidate.repo.url, exc.reason)
    kept_urls = {d.repo.url for d in docs}
    kept = [c for c in merged if c.repo.url in kept_urls]
    crawl.write_jsonl(run_.artifact_path("candidates.jsonl"), kept)
    crawl.write_jsonl(run_.artifact_path("raw_docs.jsonl"), docs)
    run_.add_artifact("candidates", "candidates.jsonl")
    run_.add_artifact("raw_docs", "raw_docs.jsonl")
    coverage = {
        "raw_candidates": len(raw),
        "deduplicated": len(merged),
        "snapshot_dropped": dropped,
    }
    run_.manifest["coverage"].update(coverage)
    return coverage


def _stage_extract(cfg: PipelineConfig, run_: store.Run, resolve) -> dict:
    candidates = {c.repo.url: c for c in crawl.read_candidates(resolve("candidates"))}
    docs = crawl.read_docs(resolve("raw_docs"))
    provider = cfg.text_provider()
    servers = []
    for doc in docs:
        result = extract.process_readme(doc, provider)
        if not extract.validate_server(result):
            logger.info("not a verified server: %s", doc.repo.url)
            continue
        servers.append(extract.build_server_record(candidates[doc.repo.url], result))
    crawl.write_jsonl(run_.artifact_path("servers.jsonl"), servers)
    run_.add_artifact("servers", "servers.jsonl")
    raw_n = run_.manifest["coverage"].get("raw_candidates", len(docs))
    dedup_n = run_.manifest["coverage"].get("deduplicated", len(docs))
    if not len(servers) <= dedup_n <= raw_n:
        raise RuntimeError(
            f"funnel monotonicity violated: {len(servers)} verified, "
            f"{dedup_n} deduplicated, {raw_n} raw"
        )
    coverage = {"verified_servers": len(servers),
                "tools_total": sum(len(s.extraction.tools) for s in servers)}
    run_.manifest["coverage"].update(coverage)
    return coverage


def _load_hierarchy(cfg: PipelineConfig, run_: store.Run) -> taxonomy.Hierarchy:
    if cfg.hierarchy_path is not None:
        h = taxonomy.Hierarchy.load(cfg.hierarchy_path)
    else:
        if cfg.taxonomy_files is None:
            raise ConfigError("classify needs taxonomy_files or hierarchy_path")
        tasks, _cw = taxonomy.load_onet_tables(
            cfg.taxonomy_files["tasks"],
            cfg.taxonomy_files["occupations"],
            cfg.taxonomy_files["work_context"],
        )
        h = taxonomy.build_hierarchy(
            tasks, HashingEmbedder(cfg.embedder_dimension),
            namer=None, k=cfg.taxonomy_k, seed=cfg.seed,
        )
    h.save(run_.artifact_path("hierarchy.json"))
    run_.add_artifact("hierarchy", "hierarchy.json")
    return h


def _stage_classify(cfg: PipelineConfig, run_: store.Run, resolve) -> dict:
    servers = extract.read_servers(resolve("servers"))
    hierarchy = _load_hierarchy(cfg, run_)
    provider = cfg.text_provider()
    embedder = HashingEmbedder(cfg.embedder_dimension)
    results = [classify.classify_server(s, hierarchy, provider, embedder) for s in servers]
    with open(run_.artifact_path("classifications.jsonl"), "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    run_.add_artifact("classifications", "classifications.jsonl")
    classified = sum(
        1 for r in results for t in r.tools if t.direct_impact.classified
    )
    return {"servers_classified": len(results), "tools_with_direct_impact": classified}


def _stage_detect_ai(cfg: PipelineConfig, run_: store.Run, resolve) -> dict:
    servers = extract.read_servers(resolve("servers"))
    patterns = authorship.PatternSet()
    rows = []
    detected = 0
    for server in servers:
        if cfg.fixture_dir is not None:
            activity = authorship.load_activity_fixture(
                cfg.fixture_dir, server.repo.owner, server.repo.name
            )
        else:
            client = authorship.GithubActivityClient()
            activity = client.fetch(server.repo.owner, server.repo.name)
        if activity.created_at is None and server.created_at is not None:
            from datetime import datetime, timezone

            activity.created_at = datetime(
                server.created_at.year, server.created_at.month, server.created_at.day,
                tzinfo=timezone.utc,
            )
        evidence = authorship.scan_evidence(activity, patterns)
        v = authorship.verdict(evidence, activity.created_at, patterns)
        detected += int(v.ai_authored)
        rows.append({"server_id": server.id, "repo_url": server.repo.url,
                     "coverage": activity.coverage, **v.to_dict()})
    with open(run_.artifact_path("ai_verdicts.jsonl"), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    run_.add_artifact("ai_verdicts", "ai_verdicts.jsonl")
    return {"servers_scanned": len(rows), "ai_detected": detected}


def _read_verdicts(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out[row["server_id"]] = authorship.AiVerdict(
                ai_authored=row["ai_authored"],
                agent=row["agent"],
                score_breakdown=row["score_breakdown"],
                first_month=row["first_month"],
                date_first_ai_evidence=(
                    authorship._to_utc(row["date_first_ai_evidence"])
                    if row["date_first_ai_evidence"] else None
                ),
            )
    return out


def _stage_usage(cfg: PipelineConfig, run_: store.Run, resolve) -> dict:
    servers = extract.read_servers(resolve("servers"))
    docs = {d.repo.url: d for d in crawl.read_docs(resolve("raw_docs"))}
    classifications = classify.read_classifications(resolve("classifications"))
    verdicts = _read_verdicts(resolve("ai_verdicts"))

    if cfg.fixture_dir is not None:
        client = usage.FixtureRegistryClient(cfg.fixture_dir)
    else:
        client = usage.HttpRegistryClient(window=cfg.usage_window)

    matched = {}
    for server in servers:
        doc = docs.get(server.repo.url)
        readme = doc.readme_text if doc else ""
        matched[server.id] = usage.match_packages(readme, server.repo.name, client)
    join = usage.build_join(servers, matched)

    series = {}
    for pkgs in join.server_to_packages.values():
        for pkg in pkgs:
            series[pkg.key()] = usage.fetch_downloads(
                pkg, cfg.usage_window, client, cache_dir=cfg.cache_dir
            )
    with open(run_.artifact_path("package_series.jsonl"), "w", encoding="utf-8") as fh:
        for key in sorted(series):
            fh.write(json.dumps(series[key].to_dict(), sort_keys=True) + "\n")
    (run_.path / "usage_join.json").write_text(
        json.dumps(join.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )

    per_server = usage.server_download_series(join, series, cfg.usage_window)
    rows = usage.aggregate_usage(servers, classifications, join, per_server,
                                 verdicts=verdicts, window=cfg.usage_window)
    with open(run_.artifact_path("usage_monthly.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("month,level,dimension,key,value\n")
        for r in rows:
            fh.write(f"{r.month},{r.level},{r.dimension},{r.key},{_fmt(r.value)}\n")

    totals = [sum(per_server[sid].values()) for sid in sorted(per_server)]
    lines = ["rank,downloads,cumulative_share\n"]
    if totals and sum(totals) > 0:
        conc = usage.concentration(totals)
        for i, (count, share) in enumerate(zip(conc.counts, conc.cumulative_share), start=1):
            lines.append(f"{i},{count},{share:.6f}\n")
    with open(run_.artifact_path("concentration.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.writelines(lines)

    geo_lines = ["server_id,country,downloads,share,breadth\n"]
    geo_flags = []
    if cfg.geo_table is not None and Path(cfg.geo_table).exists():
        geo_by_pkg = usage.load_geo_table(cfg.geo_table, cfg.usage_window)
        for sid in sorted(join.server_to_packages):
            totals_by_country: dict[str, int] = {}
            for pkg in join.server_to_packages[sid]:
                geo = geo_by_pkg.get(pkg.name)
                if geo is None:
                    continue
                if pkg.key() in series:
                    geo_flags.extend(validate for validate in
                                     usage.validate_geo_against_totals(geo, series[pkg.key()]))
                for country, n in geo.country_totals().items():
                    totals_by_country[country] = totals_by_country.get(country, 0) + n
            if not totals_by_country:
                continue
            bucket, shares = usage.geo_breadth(totals_by_country)
            for country in sorted(totals_by_country):
                geo_lines.append(
                    f"{sid},{country},{totals_by_country[country]},"
                    f"{shares[country]:.6f},{bucket}\n"
                )
    with open(run_.artifact_path("usage_geo.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.writelines(geo_lines)

    for name in ("usage_join", "package_series", "usage_monthly", "usage_geo", "concentration"):
        run_.add_artifact(name, ARTIFACTS[name][0])
    coverage = dict(join.coverage)
    if geo_flags:
        coverage["geo_violations"] = geo_flags
    run_.manifest["coverage"].update(coverage)
    return coverage


def _fmt(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return f"{value:.6f}"


def read_usage_rows(path) -> list[usage.UsageRow]:
    import csv

    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(usage.UsageRow(
                month=row["month"], level=row["level"], dimension=row["dimension"],
                key=row["key"], value=float(row["value"]),
            ))
    return rows


def _stage_fit(cfg: PipelineConfig, run_: store.Run, resolve) -> dict:
    rows = read_usage_rows(resolve("usage_monthly"))
    servers = extract.read_servers(resolve("servers"))
    classifications = classify.read_classifications(resolve("classifications"))
    verdicts = _read_verdicts(resolve("ai_verdicts"))
    hierarchy = taxonomy.Hierarchy.load(resolve("hierarchy"))

    table = {(r.month, r.level, r.dimension, r.key): r.value for r in rows}
    months = sorted({r.month for r in rows})
    fits: dict[str, dict] = {}

    def record(name, payload):
        fits[name] = payload

    def monthly(level, dimension, key):
        return [(m, table.get((m, level, dimension, key), 0.0)) for m in months]

    # downloads growth + doubling time
    totals = [(m, v) for m, v in monthly("server", "total", "total") if v > 0]
    if len(totals) >= 3:
        ts = trends.TimeSeries(points=[(usage.month_index(m), v) for m, v in totals])
        fit_res = trends.fit(ts, "exponential")
        payload = {"fit": fit_res.to_dict(), "series": totals}
        if fit_res.converged and fit_res.params["k"] > 0:
            dt = trends.doubling_time(fit_res)
            payload["doubling_months"] = dt.months
            payload["doubling_ci"] = list(dt.ci)
        record("total_downloads_exponential", payload)
    else:
        record("total_downloads_exponential", {"skipped": "fewer than 3 nonzero months"})

    def share_series(dimension, key, level="tool"):
        pts, weights = [], []
        for m in months:
            total = table.get((m, level, "total", "total"), 0.0)
            if total <= 0:
                continue
            pts.append((usage.month_index(m), table.get((m, level, dimension, key), 0.0) / total))
            weights.append(total)
        return pts, weights

    pts, weights = share_series("direct_impact", "action")
    if len(pts) >= 4:
        ts = trends.TimeSeries(points=pts, weights=weights)
        record("action_share_asymptotic",
               {"fit": trends.fit(ts, "asymptotic").to_dict(), "series": pts})
    else:
        record("action_share_asymptotic", {"skipped": "fewer than 4 months with downloads"})

    pts, weights = share_series("generality", "general")
    if len(pts) >= 5:
        ts = trends.TimeSeries(points=pts, weights=weights)
        base = trends.fit(ts, "poly_convergence")
        payload = {"fit": base.to_dict(), "series": pts}
        if base.converged:
            boot = trends.bootstrap_ci(ts, "poly_convergence", kind="wild",
                                       n_boot=cfg.bootstrap_replicates, seed=cfg.seed)
            payload["wild_bootstrap_ci"] = {k: list(v) for k, v in boot.ci.items()}
            payload["bootstrap_flags"] = boot.flags
        record("general_share_poly", payload)
    else:
        record("general_share_poly", {"skipped": "fewer than 5 months with downloads"})

    # count-based general share of cumulative published servers
    env_by_server = {c.server_id: c.generality.environment_general for c in classifications}
    created = sorted(
        (usage.month_of(s.created_at), s.id) for s in servers if s.created_at is not None
    )
    if created:
        pts = []
        cum_total = cum_general = 0
        idx = 0
        for m in months:
            while idx < len(created) and created[idx][0] <= m:
                cum_total += 1
                cum_general += int(env_by_server.get(created[idx][1], False))
                idx += 1
            if cum_total:
                pts.append((usage.month_index(m), cum_general / cum_total))
        if len(pts) >= 5:
            ts = trends.TimeSeries(points=pts)
            record("general_share_count_poly",
                   {"fit": trends.fit(ts, "poly_convergence").to_dict(), "series": pts})
        else:
            record("general_share_count_poly", {"skipped": "fewer than 5 months of servers"})

    # first-month AI share of newly created servers, quadratic WLS
    new_by_month: dict[str, int] = {}
    ai_by_month: dict[str, int] = {}
    for s in servers:
        if s.created_at is None:
            continue
        m = usage.month_of(s.created_at)
        new_by_month[m] = new_by_month.get(m, 0) + 1
        v = verdicts.get(s.id)
        if v is not None and v.first_month:
            ai_by_month[m] = ai_by_month.get(m, 0) + 1
    ai_months = sorted(new_by_month)
    pts = [(usage.month_index(m), ai_by_month.get(m, 0) / new_by_month[m]) for m in ai_months]
    weights = [new_by_month[m] for m in ai_months]
    if len(pts) >= 4:
        ts = trends.TimeSeries(points=pts, weights=weights)
        fit_res = trends.fit(ts, "quadratic")
        payload = {"fit": fit_res.to_dict(), "series": pts,
                   "monthly_new_servers": {m: new_by_month[m] for m in ai_months},
                   "monthly_ai_servers": {m: ai_by_month.get(m, 0) for m in ai_months}}
        value, ci = trends.quadratic_marginal_change(fit_res, [p[0] for p in pts])
        payload["marginal_change_per_month"] = value
        payload["marginal_change_ci"] = list(ci)
        record("ai_new_server_share_quadratic", payload)
    else:
        record("ai_new_server_share_quadratic", {"skipped": "fewer than 4 creation months"})

    # stakes scatter: tools per SOC occupation group vs mean task impact score
    impact_sum: dict[str, float] = {}
    impact_n: dict[str, int] = {}
    tool_count: dict[str, int] = {}
    for c in classifications:
        for t in c.tools:
            if t.task is None or not t.task.soc_distribution:
                continue
            dist = t.task.soc_distribution
            top = min(s for s, w in dist.items() if w >= max(dist.values()) - 1e-12)
            tool_count[top] = tool_count.get(top, 0) + 1
            task = hierarchy.tasks.get(t.task.task_id)
            if task is not None and task.impact_score is not None:
                impact_sum[top] = impact_sum.get(top, 0.0) + task.impact_score
                impact_n[top] = impact_n.get(top, 0) + 1
    labeled = []
    for soc in sorted(tool_count):
        if impact_n.get(soc):
            labeled.append({"soc": soc, "score": impact_sum[soc] / impact_n[soc],
                            "tool_count": tool_count[soc]})
    points = [(p["score"], p["tool_count"]) for p in labeled]
    if len([p for p in points if p[1] >= 1]) >= 4:
        try:
            res = trends.stakes_fit(points)
            record("stakes_quadratic", {
                "fit": res.fit.to_dict(),
                "f_statistic": res.f_statistic,
                "p_value": res.p_value,
                "points": labeled,
            })
        except trends.FitError as exc:
            record("stakes_quadratic", {"skipped": str(exc), "points": labeled})
    else:
        record("stakes_quadratic", {"skipped": "fewer than 4 occupations with tools",
                                    "points": labeled})

    fits["inputs"] = {
        name: store.sha256_file(resolve(name))
        for name in ("usage_monthly", "classifications", "servers", "ai_verdicts")
    }
    fits["seed"] = cfg.seed
    (run_.path / "fits.json").write_text(
        json.dumps(fits, indent=2, sort_keys=True), encoding="utf-8"
    )
    run_.add_artifact("fits", "fits.json")
    done = sum(1 for k, v in fits.items() if isinstance(v, dict) and "fit" in v)
    return {"fits_computed": done}


def _stage_report(cfg: PipelineConfig, run_: store.Run, resolve) -> dict:
    import shutil

    from mcp_scope import report as report_mod

    # pull any prior-run inputs into this run so it stays self-contained
    for name in STAGE_INPUTS["report"]:
        if name in run_.manifest["artifacts"]:
            continue
        src = resolve(name)
        filename = ARTIFACTS[name][0]
        shutil.copyfile(src, run_.artifact_path(filename))
        run_.add_artifact(name, filename)
    if "hierarchy" not in run_.manifest["artifacts"]:
        try:
            shutil.copyfile(resolve("hierarchy"), run_.artifact_path("hierarchy.json"))
            run_.add_artifact("hierarchy", "hierarchy.json")
        except KeyError:
            pass

    files = report_mod.emit_all(run_.path, run_.manifest)
    for kind, paths in files.items():
        for p in paths:
            rel = str(Path(p).relative_to(run_.path))
            run_.add_artifact(f"report_{kind}_{Path(p).suffix[1:]}", rel)
    return {"reports": sorted(files)}
