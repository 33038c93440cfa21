"""Bottom-up topic discovery: embed, reduce to 5 dims, density-cluster, score.

Documents are one line of server text each (name + description + readme
summary). Clustering parameters derive from corpus size: min_cluster_size =
0.3% of N, min_samples = 30% of min_cluster_size, selection epsilon 0.02.
A deterministic 90/10 split by id hash holds out a validation set: the
reducer and clusterer fit on the main split, held-out docs get the label of
their nearest main-split neighbour, and outlier rate / coherence are
reported for both splits.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import HDBSCAN
from sklearn.decomposition import PCA

from topic_explorer import coherence as coh
from topic_explorer.embedding import make_embedding

logger = logging.getLogger(__name__)

MIN_DOCS = 200
TARGET_TOPICS = (40, 60)


def derive_cluster_params(n_docs: int) -> tuple[int, int]:
    """min_cluster_size = 0.3% of N, min_samples = 30% of that."""
    mcs = max(2, round(0.003 * n_docs))
    ms = max(1, round(0.3 * mcs))
    return mcs, ms


@dataclass
class TopicParams:
    embedding: str = "hashing-256"
    reduce_dim: int = 5
    reducer: str = "auto"  # auto -> umap if importable, else pca
    min_cluster_size: int | None = None   # None -> derived from N
    min_samples: int | None = None
    cluster_selection_epsilon: float = 0.02
    seed: int = 42

    def resolved(self, n_docs: int) -> "TopicParams":
        mcs, ms = derive_cluster_params(n_docs)
        return TopicParams(
            embedding=self.embedding,
            reduce_dim=self.reduce_dim,
            reducer=self.reducer,
            min_cluster_size=self.min_cluster_size or mcs,
            min_samples=self.min_samples or ms,
            cluster_selection_epsilon=self.cluster_selection_epsilon,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TopicRun:
    doc_ids: list[str]
    documents: list[str]
    embedding_model_id: str
    reducer: str
    reduced: np.ndarray            # (n, 5)
    labels: np.ndarray             # -1 = outlier
    projection_2d: np.ndarray      # (n, 2)
    heldout_mask: np.ndarray       # True where doc is in the held-out split
    cluster_terms: dict[int, list[str]]
    cluster_names: dict[int, str]
    outlier_rate: float
    coherence: float
    metrics: dict
    params: dict
    flags: list[str] = field(default_factory=list)

    def n_topics(self) -> int:
        return len({l for l in self.labels.tolist() if l >= 0})


def load_server_docs(servers_jsonl) -> list[tuple[str, str]]:
    """Documents from the monitor's servers.jsonl: id + name/summary/content."""
    docs = []
    with open(servers_jsonl, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            extraction = rec.get("extraction", {})
            text = " ".join(filter(None, [
                rec.get("repo", {}).get("name", ""),
                extraction.get("summary", ""),
                extraction.get("filtered_content", "")[:2000],
            ]))
            docs.append((rec["id"], text))
    return docs


def heldout_split(doc_ids: list[str]) -> np.ndarray:
    """Deterministic 90/10 split: hash(id) % 10 == 0 -> held out."""
    return np.array([
        int(hashlib.sha256(i.encode()).hexdigest(), 16) % 10 == 0 for i in doc_ids
    ])


def _make_reducer(kind: str, dim: int, seed: int):
    if kind in ("auto", "umap"):
        try:
            from umap import UMAP  # optional; not on every install

            return "umap", UMAP(n_components=dim, random_state=seed)
        except ImportError:
            if kind == "umap":
                raise
    return "pca", PCA(n_components=dim, random_state=seed)


def build_topics(docs: list[tuple[str, str]], params: TopicParams | None = None) -> TopicRun:
    """Full pipeline over (id, text) documents; flags degenerate situations."""
    params = (params or TopicParams()).resolved(len(docs))
    flags = []
    if len(docs) < MIN_DOCS:
        flags.append("below_min_docs")
        logger.warning("only %d docs; density clustering needs >= %d", len(docs), MIN_DOCS)
    if len(docs) < 3:
        raise ValueError("need at least 3 documents")

    ids = [d[0] for d in docs]
    texts = [d[1] for d in docs]
    embedding = make_embedding(params.embedding)
    X = embedding.embed(texts)

    held = heldout_split(ids)
    main_idx = np.where(~held)[0]
    held_idx = np.where(held)[0]
    if len(main_idx) < 3:
        main_idx = np.arange(len(ids))
        held_idx = np.array([], dtype=int)
        held = np.zeros(len(ids), dtype=bool)

    reducer_kind, reducer = _make_reducer(params.reducer, min(params.reduce_dim, X.shape[1]), params.seed)
    reduced_main = np.asarray(reducer.fit_transform(X[main_idx]))
    reduced = np.zeros((len(ids), reduced_main.shape[1]))
    reduced[main_idx] = reduced_main
    if len(held_idx):
        reduced[held_idx] = np.asarray(reducer.transform(X[held_idx]))

    clusterer = HDBSCAN(
        min_cluster_size=params.min_cluster_size,
        min_samples=params.min_samples,
        cluster_selection_epsilon=params.cluster_selection_epsilon,
    )
    main_labels = clusterer.fit_predict(reduced_main)

    labels = np.full(len(ids), -1, dtype=int)
    labels[main_idx] = main_labels
    if len(held_idx):
        # out-of-sample assignment: label of the nearest main-split document
        for i in held_idx:
            dists = np.linalg.norm(reduced_main - reduced[i], axis=1)
            labels[i] = main_labels[int(np.argmin(dists))]

    if (labels >= 0).sum() == 0:
        flags.append("all_outliers")
        logger.warning("degenerate clustering: every document is an outlier")

    projector = PCA(n_components=2, random_state=params.seed)
    projection = np.asarray(projector.fit_transform(reduced)) if reduced.shape[1] > 2 else reduced[:, :2]

    docs_tokens = [coh.tokenize(t) for t in texts]
    cluster_docs_main: dict[int, list[int]] = {}
    for pos, i in enumerate(main_idx):
        if main_labels[pos] >= 0:
            cluster_docs_main.setdefault(int(main_labels[pos]), []).append(int(i))
    terms = coh.top_terms(docs_tokens, cluster_docs_main)
    names = {label: fallback_name(terms[label]) for label in terms}

    metrics = {
        "main": _split_metrics(labels[main_idx], terms, [docs_tokens[i] for i in main_idx],
                               cluster_docs_main),
        "heldout": _split_metrics(labels[held_idx], terms, [docs_tokens[i] for i in held_idx],
                                  cluster_docs_main) if len(held_idx) else None,
    }

    run = TopicRun(
        doc_ids=ids,
        documents=texts,
        embedding_model_id=embedding.model_id,
        reducer=reducer_kind,
        reduced=reduced,
        labels=labels,
        projection_2d=projection,
        heldout_mask=held,
        cluster_terms=terms,
        cluster_names=names,
        outlier_rate=float((labels == -1).mean()),
        coherence=metrics["main"]["coherence"],
        metrics=metrics,
        params=params.to_dict(),
        flags=flags,
    )
    return run


def _split_metrics(labels, terms, docs_tokens, cluster_docs_main) -> dict:
    outlier_rate = float((np.asarray(labels) == -1).mean()) if len(labels) else 0.0
    scores = []
    excluded = []
    for label, term_list in sorted(terms.items()):
        if len(cluster_docs_main.get(label, [])) < 2:
            excluded.append(label)  # singleton cluster: coherence undefined
            continue
        score = coh.cluster_coherence(term_list, docs_tokens)
        if not np.isnan(score):
            scores.append(score)
    return {
        "outlier_rate": outlier_rate,
        "coherence": float(np.mean(scores)) if scores else float("nan"),
        "clusters_scored": len(scores),
        "singletons_excluded": excluded,
    }


def evaluate_topics(run: TopicRun) -> dict:
    """Outlier rate and coherence of a finished run (main split)."""
    return {"outlier_rate": run.outlier_rate, "coherence": run.coherence}


def fallback_name(terms: list[str]) -> str:
    """Deterministic '<2 words> tools' name from the top terms."""
    picked = [t for t in terms[:2]] or ["misc"]
    return f"{'-'.join(picked)} tools"


def sweep_topics(docs, base: TopicParams | None = None,
                 target: tuple[int, int] = TARGET_TOPICS,
                 multipliers=(0.5, 0.75, 1.0, 1.5, 2.0)) -> TopicRun:
    """Scale min_cluster_size toward the target topic-count range; of the
    candidates in range, keep the most coherent (else the closest count)."""
    base = (base or TopicParams()).resolved(len(docs))
    runs = []
    for mult in multipliers:
        params = TopicParams(**{**base.to_dict(),
                                "min_cluster_size": max(2, round(base.min_cluster_size * mult)),
                                "min_samples": None})
        runs.append(build_topics(docs, params))
    lo, hi = target
    in_range = [r for r in runs if lo <= r.n_topics() <= hi]
    if in_range:
        return max(in_range, key=lambda r: (r.coherence if not np.isnan(r.coherence) else -1))
    return min(runs, key=lambda r: min(abs(r.n_topics() - lo), abs(r.n_topics() - hi)))


# ---------------------------------------------------------------- export

def export_map(run: TopicRun, topdown_labels: dict[str, str] | None,
               csv_path, svg_path) -> None:
    """topics.csv (id, x, y, cluster, cluster_name, topdown_domain) + scatter."""
    import csv

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "topic-explorer"

    topdown_labels = topdown_labels or {}
    missing = 0
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "x", "y", "cluster", "cluster_name", "topdown_domain"])
        for i, doc_id in enumerate(run.doc_ids):
            label = int(run.labels[i])
            domain = topdown_labels.get(doc_id, "")
            if not domain:
                missing += 1
            writer.writerow([
                doc_id,
                f"{run.projection_2d[i, 0]:.6f}",
                f"{run.projection_2d[i, 1]:.6f}",
                label,
                run.cluster_names.get(label, "") if label >= 0 else "",
                domain,
            ])
    if missing:
        logger.warning("%d documents missing a top-down domain label", missing)

    fig, ax = plt.subplots(figsize=(8, 6))
    domains = sorted({topdown_labels.get(d, "") for d in run.doc_ids})
    cmap = plt.get_cmap("tab10")
    for j, domain in enumerate(domains):
        mask = np.array([topdown_labels.get(d, "") == domain for d in run.doc_ids])
        ax.scatter(run.projection_2d[mask, 0], run.projection_2d[mask, 1],
                   s=12, color=cmap(j % 10), label=domain or "(unlabelled)", alpha=0.7)
    for label, name in sorted(run.cluster_names.items()):
        member = run.labels == label
        if member.sum() == 0:
            continue
        cx, cy = run.projection_2d[member, 0].mean(), run.projection_2d[member, 1].mean()
        ax.annotate(name, (cx, cy), fontsize=7, ha="center")
    ax.set_title("Server topic map (colour = top-down domain)")
    ax.legend(fontsize=6, loc="best")
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_metrics(run: TopicRun, path) -> None:
    def clean(value):
        if isinstance(value, float) and np.isnan(value):
            return None
        return value

    payload = {
        "n_docs": len(run.doc_ids),
        "n_topics": run.n_topics(),
        "outlier_rate": run.outlier_rate,
        "coherence": clean(run.coherence),
        "embedding_model": run.embedding_model_id,
        "reducer": run.reducer,
        "params": run.params,
        "flags": run.flags,
        "metrics": {
            split: ({**m, "coherence": clean(m["coherence"])} if m else None)
            for split, m in run.metrics.items()
        },
        "cluster_names": {str(k): v for k, v in sorted(run.cluster_names.items())},
        "cluster_terms": {str(k): v for k, v in sorted(run.cluster_terms.items())},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
