"""Operator CLI: mcp-scope run | report | fit.

Exit codes: 0 success, 2 config error, 3 missing dependency stage,
4 provider failure, 1 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import subprocess
import sys
from pathlib import Path

from mcp_scope import pipeline, report, store, trends

logger = logging.getLogger("mcp_scope")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_MISSING_STAGE = 3
EXIT_PROVIDER = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcp-scope",
                                     description="MCP server ecosystem monitor")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute pipeline stages")
    p_run.add_argument("--config", required=True, help="YAML config file")
    p_run.add_argument("--stages", help="comma-separated subset of "
                                        + ",".join(pipeline.STAGE_ORDER))
    p_run.add_argument("--fixture-dir", help="offline fixture directory (overrides config)")
    p_run.add_argument("--seed", type=int, help="override config seed")
    p_run.add_argument("--prior-run", help="run directory to read missing inputs from")

    p_rep = sub.add_parser("report", help="re-emit reports from a stored run")
    p_rep.add_argument("--run-dir", required=True)
    p_rep.add_argument("--kind", default="all",
                       choices=["all", *report.KINDS])

    p_fit = sub.add_parser("fit", help="fit a trend model to a CSV series")
    p_fit.add_argument("--input", required=True, help="CSV with columns t,y[,w]")
    p_fit.add_argument("--model", required=True, choices=sorted(trends.MODEL_PARAMS))
    p_fit.add_argument("--ci", default="covariance",
                       choices=["covariance", "bootstrap_standard", "bootstrap_wild"])
    p_fit.add_argument("--n-boot", type=int, default=1000)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--output", help="write FitResult JSON here (default stdout)")

    p_topics = sub.add_parser("topics", help="run the optional topic-explorer tool "
                                             "on a servers.jsonl artifact")
    p_topics.add_argument("--servers", required=True)
    p_topics.add_argument("--out-dir", required=True)
    return parser


def _cmd_run(args) -> int:
    try:
        cfg = pipeline.PipelineConfig.from_yaml(args.config)
        if args.fixture_dir:
            cfg.fixture_dir = Path(args.fixture_dir)
        if args.seed is not None:
            cfg.seed = args.seed
        stages = args.stages.split(",") if args.stages else None
        manifest = pipeline.run(cfg, stages=stages, prior_run=args.prior_run)
    except pipeline.ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except pipeline.MissingStageError as exc:
        logger.error("%s", exc)
        return EXIT_MISSING_STAGE
    except pipeline.ProviderAuthError as exc:
        logger.error("provider failure: %s", exc)
        return EXIT_PROVIDER
    print(json.dumps({"run_dir": manifest["run_dir"],
                      "stages": manifest["stages"],
                      "coverage": manifest["coverage"]}, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        if args.kind == "all":
            files = report.emit_all(args.run_dir)
            emitted = [str(p) for paths in files.values() for p in paths]
        else:
            emitted = [str(p) for p in report.emit_report(args.run_dir, args.kind)]
    except store.StoreError as exc:
        logger.error("%s", exc)
        return EXIT_MISSING_STAGE
    for path in sorted(emitted):
        print(path)
    return EXIT_OK


def _cmd_fit(args) -> int:
    points, weights = [], []
    with open(args.input, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            points.append((float(row["t"]), float(row["y"])))
            if "w" in row and row["w"] not in (None, ""):
                weights.append(float(row["w"]))
    series = trends.TimeSeries(points=points, weights=weights or None)
    try:
        if args.ci == "covariance":
            result = trends.fit(series, args.model)
        else:
            kind = args.ci.removeprefix("bootstrap_")
            result = trends.bootstrap_ci(series, args.model, kind=kind,
                                         n_boot=args.n_boot, seed=args.seed)
    except trends.FitError as exc:
        logger.error("fit rejected: %s", exc)
        return EXIT_CONFIG
    payload = json.dumps(result.to_dict(), indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    return EXIT_OK


def _cmd_topics(args) -> int:
    exe = shutil.which("topic-explorer")
    if exe is None:
        logger.error("topic-explorer is not installed; the monitor runs fine without it")
        return EXIT_CONFIG
    proc = subprocess.run([exe, "build", "--servers", args.servers, "--out-dir", args.out_dir])
    return proc.returncode


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "topics":
            return _cmd_topics(args)
        return EXIT_INTERNAL
    except Exception:  # noqa: BLE001 - the CLI boundary reports and exits 1
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
