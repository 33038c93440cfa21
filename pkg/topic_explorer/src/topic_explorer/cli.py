"""topic-explorer CLI: build a topic map from a monitor servers.jsonl file."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from topic_explorer import pipeline
from topic_explorer.embedding import EmbeddingUnavailable

logger = logging.getLogger("topic_explorer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topic-explorer")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="embed, cluster, and export the topic map")
    p.add_argument("--servers", required=True, help="servers.jsonl from the monitor")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--classifications", help="optional classifications.jsonl for "
                                             "top-down domain colouring")
    p.add_argument("--embedding", default="hashing-256",
                   help="'hashing-<dim>' or a sentence-transformer model name")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--min-cluster-size", type=int)
    p.add_argument("--sweep", action="store_true",
                   help="sweep min_cluster_size toward the 40-60 topic target")
    return parser


def load_topdown_labels(path) -> dict[str, str]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            domain = (rec.get("aggregate") or {}).get("l1_domain")
            if domain:
                labels[rec["server_id"]] = domain
    return labels


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "build":
        return 1
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs = pipeline.load_server_docs(args.servers)
    params = pipeline.TopicParams(
        embedding=args.embedding, seed=args.seed,
        min_cluster_size=args.min_cluster_size,
    )
    try:
        if args.sweep:
            run = pipeline.sweep_topics(docs, params)
        else:
            run = pipeline.build_topics(docs, params)
    except EmbeddingUnavailable as exc:
        logger.error("embedding model unavailable: %s", exc)
        return 2
    except ValueError as exc:
        logger.error("%s", exc)
        return 2

    topdown = load_topdown_labels(args.classifications) if args.classifications else {}
    pipeline.export_map(run, topdown, out_dir / "topics.csv", out_dir / "topic_map.svg")
    pipeline.write_metrics(run, out_dir / "topic_metrics.json")
    print(json.dumps({
        "n_docs": len(run.doc_ids),
        "n_topics": run.n_topics(),
        "outlier_rate": round(run.outlier_rate, 4),
        "flags": run.flags,
        "out_dir": str(out_dir),
    }, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
