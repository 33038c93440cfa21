"""Report emission: per-kind CSV tables plus rendered SVG charts.

Every emitted number is derived from stored run artifacts; regeneration from
the same artifacts is byte-identical (fixed float formatting, salted SVG ids,
no timestamps). reports/manifest.json names the input artifact digests each
report was computed from.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from mcp_scope import store
from mcp_scope.classify import VALID_CODES, read_classifications
from mcp_scope.extract import read_servers
from mcp_scope.taxonomy import L1_CATEGORIES
from mcp_scope.usage import month_of, month_range

logger = logging.getLogger(__name__)

KINDS = ("domains", "direct_impact", "generality", "geography", "ai_coauthor",
         "payments", "stakes", "concentration")

KIND_INPUTS = {
    "domains": ("servers", "classifications", "usage_monthly"),
    "direct_impact": ("usage_monthly",),
    "generality": ("usage_monthly", "servers", "classifications"),
    "geography": ("usage_geo",),
    "ai_coauthor": ("servers", "ai_verdicts", "fits"),
    "payments": ("servers", "classifications"),
    "stakes": ("fits",),
    "concentration": ("concentration",),
}

CATEGORY_OF = {"1": "perception", "2": "reasoning", "3": "action"}
CODE_COLORS = {
    "1.1": "#9e9e9e",
    "2.1": "#4f7fbf", "2.2": "#6f9fd8", "2.3": "#92bbe8",
    "3.1": "#fdd0c2", "3.2": "#fca082", "3.3": "#fb7c5c", "3.4": "#f5553d",
    "3.5": "#e32f27", "3.6": "#c3161b", "3.7": "#9e0d14",
}
L1_NAME = dict(L1_CATEGORIES)

plt.rcParams["svg.hashsalt"] = "mcp-scope"
plt.rcParams["figure.figsize"] = (8, 4.5)


def _fmt(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return f"{x:.6f}"


def _pct(x: float) -> str:
    return f"{100 * x:.4f}"


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    if not rows:
        logger.warning("empty slice: emitting header-only %s", path.name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


class _Data:
    """Lazy artifact loader bound to one run directory + manifest."""

    def __init__(self, run_dir, manifest):
        self.run_dir = Path(run_dir)
        self.manifest = manifest
        self._cache = {}

    def path(self, name) -> Path:
        return store.artifact_file(self.run_dir, self.manifest, name)

    def digest(self, name) -> str:
        return self.manifest["artifacts"][name]["sha256"]

    def servers(self):
        if "servers" not in self._cache:
            self._cache["servers"] = read_servers(self.path("servers"))
        return self._cache["servers"]

    def classifications(self):
        if "cls" not in self._cache:
            self._cache["cls"] = read_classifications(self.path("classifications"))
        return self._cache["cls"]

    def verdicts(self):
        if "verdicts" not in self._cache:
            rows = []
            with open(self.path("ai_verdicts"), encoding="utf-8") as fh:
                rows = [json.loads(line) for line in fh if line.strip()]
            self._cache["verdicts"] = rows
        return self._cache["verdicts"]

    def usage_table(self):
        if "usage" not in self._cache:
            table = defaultdict(float)
            months = set()
            with open(self.path("usage_monthly"), encoding="utf-8", newline="") as fh:
                for row in csv.DictReader(fh):
                    table[(row["month"], row["level"], row["dimension"], row["key"])] += float(row["value"])
                    months.add(row["month"])
            self._cache["usage"] = (table, sorted(months))
        return self._cache["usage"]

    def fits(self):
        if "fits" not in self._cache:
            self._cache["fits"] = json.loads(self.path("fits").read_text(encoding="utf-8"))
        return self._cache["fits"]


def emit_report(run_dir, kind: str, manifest: dict | None = None) -> list[Path]:
    """Emit one report kind; returns the written file paths."""
    if kind not in KINDS:
        raise ValueError(f"unknown report kind: {kind}")
    run_dir = Path(run_dir)
    manifest = manifest or store.load_manifest(run_dir)
    data = _Data(run_dir, manifest)
    out_dir = run_dir / "reports"
    out_dir.mkdir(exist_ok=True)
    emitter = globals()[f"_emit_{kind}"]
    files = emitter(data, out_dir)
    _update_reports_manifest(out_dir, kind, files, data)
    return files


def emit_all(run_dir, manifest: dict | None = None) -> dict[str, list[Path]]:
    return {kind: emit_report(run_dir, kind, manifest) for kind in KINDS}


def _update_reports_manifest(out_dir: Path, kind: str, files: list[Path], data: _Data) -> None:
    path = out_dir / "manifest.json"
    existing = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    existing[kind] = {
        "files": sorted(str(f.name) for f in files),
        "inputs": {name: data.digest(name) for name in KIND_INPUTS[kind]
                   if name in data.manifest["artifacts"]},
    }
    path.write_text(json.dumps(existing, indent=2, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------- emitters

def _emit_domains(data: _Data, out_dir: Path) -> list[Path]:
    servers = data.servers()
    classifications = data.classifications()
    table, months = data.usage_table()

    server_domain = {c.server_id: (c.aggregate.l1_domain or "unclassified")
                     for c in classifications}
    tool_domains = defaultdict(int)
    for c in classifications:
        for t in c.tools:
            tool_domains[t.task.l1_id if t.task else "unclassified"] += 1

    server_counts = defaultdict(int)
    for s in servers:
        server_counts[server_domain.get(s.id, "unclassified")] += 1

    def dim_total(level, dimension, key):
        return sum(table.get((m, level, dimension, key), 0.0) for m in months)

    domains = sorted(set(server_counts) | set(tool_domains))
    total_servers = sum(server_counts.values())
    total_tools = sum(tool_domains.values())
    total_server_dl = dim_total("server", "total", "total")
    total_tool_dl = dim_total("tool", "total", "total")

    rows = []
    for d in sorted(domains, key=lambda d: (-dim_total("server", "domain", d), d)):
        rows.append([
            d,
            L1_NAME.get(d, d),
            server_counts.get(d, 0),
            _pct(server_counts.get(d, 0) / total_servers) if total_servers else "0.0000",
            _pct(dim_total("server", "domain", d) / total_server_dl) if total_server_dl else "0.0000",
            tool_domains.get(d, 0),
            _pct(tool_domains.get(d, 0) / total_tools) if total_tools else "0.0000",
            _pct(dim_total("tool", "domain", d) / total_tool_dl) if total_tool_dl else "0.0000",
        ])
    csv_path = out_dir / "domains.csv"
    _write_csv(csv_path, ["domain_id", "domain_name", "servers_n", "servers_pct",
                          "server_downloads_pct", "tools_n", "tools_pct",
                          "tool_downloads_pct"], rows)

    fig, ax = plt.subplots()
    names = [r[0] for r in rows][::-1]
    shares = [float(r[4]) for r in rows][::-1]
    ax.barh(names, shares, color="#4f7fbf")
    ax.set_xlabel("share of server downloads (%)")
    ax.set_title("Task domains by download share")
    fig.tight_layout()
    svg_path = out_dir / "domains.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def _emit_direct_impact(data: _Data, out_dir: Path) -> list[Path]:
    table, months = data.usage_table()
    codes = list(VALID_CODES)
    rows = []
    shares_by_code = {c: [] for c in codes}
    plot_months = []
    for m in months:
        total = table.get((m, "tool", "total", "total"), 0.0)
        unclassified = table.get((m, "tool", "functionality", "unclassified"), 0.0)
        classified = total - unclassified  # unclassified stays out of share denominators
        row = [m, _fmt(total), _fmt(unclassified)]
        for code in codes:
            value = table.get((m, "tool", "functionality", code), 0.0)
            share = value / classified if classified > 0 else 0.0
            row.append(f"{share:.6f}")
            shares_by_code[code].append(share)
        rows.append(row)
        plot_months.append(m)
    header = ["month", "tool_uses_total", "tool_uses_unclassified"] + [f"share_{c}" for c in codes]
    csv_path = out_dir / "direct_impact.csv"
    _write_csv(csv_path, header, rows)

    fig, ax = plt.subplots()
    if plot_months:
        x = range(len(plot_months))
        stack = [shares_by_code[c] for c in codes]
        ax.stackplot(x, *stack, labels=codes, colors=[CODE_COLORS[c] for c in codes])
        ax.set_xticks(list(x))
        ax.set_xticklabels(plot_months, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("share of monthly tool uses")
    ax.set_title("Tool usage by functionality (grouped into perception/reasoning/action)")
    ax.legend(fontsize=6, ncol=4)
    fig.tight_layout()
    svg_path = out_dir / "direct_impact.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def _cumulative_general_share(servers, classifications, months):
    env = {c.server_id: c.generality.environment_general for c in classifications}
    created = sorted((month_of(s.created_at), s.id) for s in servers if s.created_at)
    out = {}
    cum_total = cum_general = 0
    idx = 0
    for m in months:
        while idx < len(created) and created[idx][0] <= m:
            cum_total += 1
            cum_general += int(env.get(created[idx][1], False))
            idx += 1
        out[m] = (cum_total, cum_general / cum_total if cum_total else 0.0)
    return out


def _emit_generality(data: _Data, out_dir: Path) -> list[Path]:
    table, months = data.usage_table()
    cumulative = _cumulative_general_share(data.servers(), data.classifications(), months)
    rows = []
    dl_shares, count_shares = [], []
    for m in months:
        total = table.get((m, "tool", "total", "total"), 0.0)
        general = table.get((m, "tool", "generality", "general"), 0.0)
        dl_share = general / total if total > 0 else 0.0
        cum_total, count_share = cumulative[m]
        rows.append([m, _fmt(total), f"{dl_share:.6f}", cum_total, f"{count_share:.6f}"])
        dl_shares.append(dl_share)
        count_shares.append(count_share)
    csv_path = out_dir / "generality.csv"
    _write_csv(csv_path, ["month", "tool_uses_total", "download_share_general",
                          "cumulative_servers", "server_share_general"], rows)

    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    x = range(len(months))
    ax1.plot(x, dl_shares, "o-", color="#e32f27")
    ax1.set_ylabel("download share\n(general-purpose)")
    ax2.plot(x, count_shares, "o-", color="#4f7fbf")
    ax2.set_ylabel("server share\n(general-purpose)")
    ax2.set_xticks(list(x))
    ax2.set_xticklabels(months, rotation=45, ha="right", fontsize=7)
    fig.suptitle("General-purpose share: downloads (top) and published servers (bottom)")
    fig.tight_layout()
    svg_path = out_dir / "generality.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def _emit_geography(data: _Data, out_dir: Path) -> list[Path]:
    totals = defaultdict(int)
    with open(data.path("usage_geo"), encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            totals[row["country"]] += int(row["downloads"])
    grand = sum(totals.values())
    rows = [[c, totals[c], f"{totals[c] / grand:.6f}" if grand else "0.000000"]
            for c in sorted(totals, key=lambda c: (-totals[c], c))]
    csv_path = out_dir / "geography.csv"
    _write_csv(csv_path, ["country", "downloads", "share"], rows)

    fig, ax = plt.subplots()
    ax.bar([r[0] for r in rows], [r[1] for r in rows], color="#4f7fbf")
    ax.set_ylabel("downloads")
    ax.set_title("Downloads by country")
    fig.tight_layout()
    svg_path = out_dir / "geography.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def _emit_ai_coauthor(data: _Data, out_dir: Path) -> list[Path]:
    servers = data.servers()
    verdicts = {v["server_id"]: v for v in data.verdicts()}
    agents = sorted({v["agent"] for v in verdicts.values() if v.get("agent")})
    new_by_month = defaultdict(int)
    ai_by_month = defaultdict(int)
    agent_by_month = defaultdict(lambda: defaultdict(int))
    for s in servers:
        if s.created_at is None:
            continue
        m = month_of(s.created_at)
        new_by_month[m] += 1
        v = verdicts.get(s.id)
        if v is not None and v.get("first_month"):
            ai_by_month[m] += 1
            if v.get("agent"):
                agent_by_month[m][v["agent"]] += 1
    months = sorted(new_by_month)
    rows = []
    for m in months:
        share = ai_by_month[m] / new_by_month[m] if new_by_month[m] else 0.0
        rows.append([m, new_by_month[m], ai_by_month[m], f"{share:.6f}"]
                    + [agent_by_month[m].get(a, 0) for a in agents])
    csv_path = out_dir / "ai_coauthor.csv"
    _write_csv(csv_path, ["month", "new_servers", "ai_first_month", "share"]
               + [f"agent_{a}" for a in agents], rows)

    fig, ax = plt.subplots()
    x = range(len(months))
    shares = [float(r[3]) for r in rows]
    ax.plot(x, shares, "o", color="#333333", label="observed share")
    fits = data.fits().get("ai_new_server_share_quadratic", {})
    if "fit" in fits:
        params = fits["fit"]["params"]
        xs = [p[0] for p in fits["series"]]
        curve = [params["a"] + params["b"] * t + params["c"] * t * t for t in xs]
        ax.plot(range(len(curve)), curve, "-", color="#e32f27", label="quadratic WLS fit")
    ax.set_xticks(list(x))
    ax.set_xticklabels(months, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("share of new servers with first-month AI evidence")
    ax.set_title("AI-coauthored share of newly published servers")
    ax.legend(fontsize=7)
    fig.tight_layout()
    svg_path = out_dir / "ai_coauthor.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def _emit_payments(data: _Data, out_dir: Path) -> list[Path]:
    servers = data.servers()
    autonomy = {c.server_id: c.payments.autonomy for c in data.classifications()}
    created = [(month_of(s.created_at), autonomy.get(s.id, 0))
               for s in servers if s.created_at is not None]
    if created:
        first = min(m for m, _ in created)
        last = max(m for m, _ in created)
        months = month_range(first, last)
    else:
        months = []
    rows = []
    series = {level: [] for level in (1, 2, 3, 4)}
    for m in months:
        counts = {level: 0 for level in (1, 2, 3, 4)}
        for created_month, level in created:
            if created_month <= m and level >= 1:
                counts[level] += 1
        ge2 = counts[2] + counts[3] + counts[4]
        rows.append([m, counts[1], counts[2], counts[3], counts[4], ge2])
        for level in (1, 2, 3, 4):
            series[level].append(counts[level])
    csv_path = out_dir / "payments.csv"
    _write_csv(csv_path, ["month", "autonomy_1", "autonomy_2", "autonomy_3",
                          "autonomy_4", "servers_autonomy_ge2"], rows)

    fig, ax = plt.subplots()
    if months:
        x = range(len(months))
        colors = {1: "#c6dbef", 2: "#fdae6b", 3: "#e6550d", 4: "#a63603"}
        labels = {1: "1: payment info only", 2: "2: creates payment requests",
                  3: "3: executes via third-party", 4: "4: executes directly"}
        ax.stackplot(x, series[2], series[3], series[4],
                     labels=[labels[2], labels[3], labels[4]],
                     colors=[colors[2], colors[3], colors[4]])
        ax.plot(x, series[1], "--", color=colors[1], label=labels[1])
        ax.set_xticks(list(x))
        ax.set_xticklabels(months, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("servers with payment tools (cumulative)")
    ax.set_title("Payment-capable servers by autonomy level")
    ax.legend(fontsize=7)
    fig.tight_layout()
    svg_path = out_dir / "payments.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def _emit_stakes(data: _Data, out_dir: Path) -> list[Path]:
    block = data.fits().get("stakes_quadratic", {})
    points = block.get("points", [])
    rows = [[p["soc"], f"{p['score']:.4f}", p["tool_count"]] for p in points]
    csv_path = out_dir / "stakes.csv"
    _write_csv(csv_path, ["soc_group", "impact_score", "tool_count"], rows)

    fig, ax = plt.subplots()
    if points:
        xs = [p["score"] for p in points]
        ys = [p["tool_count"] for p in points]
        ax.scatter(xs, ys, color="#4f7fbf")
        for p in points:
            ax.annotate(p["soc"], (p["score"], p["tool_count"]), fontsize=7,
                        xytext=(3, 3), textcoords="offset points")
        ax.set_yscale("log")
        if "fit" in block:
            params = block["fit"]["params"]
            lo, hi = min(xs), max(xs)
            grid = [lo + (hi - lo) * i / 100 for i in range(101)]
            curve = [10 ** (params["a"] + params["b"] * g + params["c"] * g * g) for g in grid]
            label = f"quadratic fit (R2={block['fit']['r_squared']:.3f}, p={block['p_value']:.3f})"
            ax.plot(grid, curve, "--", color="#e32f27", label=label)
            ax.legend(fontsize=7)
    ax.set_xlabel("occupation decision-impact score (0-100)")
    ax.set_ylabel("tools mapped to occupation group")
    ax.set_title("Tool counts vs occupation stakes")
    fig.tight_layout()
    svg_path = out_dir / "stakes.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]


def _emit_concentration(data: _Data, out_dir: Path) -> list[Path]:
    rows = []
    with open(data.path("concentration"), encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append([int(row["rank"]), int(row["downloads"]),
                         f"{float(row['cumulative_share']):.6f}"])
    csv_path = out_dir / "concentration.csv"
    _write_csv(csv_path, ["rank", "downloads", "cumulative_share"], rows)

    fig, ax = plt.subplots()
    if rows:
        ax.plot([r[0] for r in rows], [float(r[2]) for r in rows], "-o", color="#4f7fbf")
    ax.set_xlabel("server rank by downloads")
    ax.set_ylabel("cumulative download share")
    ax.set_ylim(0, 1.05)
    ax.set_title("Download concentration across servers")
    fig.tight_layout()
    svg_path = out_dir / "concentration.svg"
    _save(fig, svg_path)
    return [csv_path, svg_path]
