"""Three-level occupational task hierarchy and the stakes scale.

Level 1 is a fixed set of 12 categories; level 2 clusters are built by
k-means over task embeddings (task text augmented with the occupation title,
e.g. "Analyze financial data [Financial Analyst]"), and each cluster is
assigned to the level-1 category with the highest cosine similarity between
its (L2-normalized) centroid and the category-name embedding. The base level
is the task statements themselves.

Input tables are three tab-separated files:

    task_statements.tsv   Task ID <tab> Task
    task_occupations.tsv  Task ID <tab> O*NET-SOC Code <tab> Title
    work_context.tsv      O*NET-SOC Code <tab> Element ID <tab> Scale ID <tab> Data Value

The stakes scale is the "impact of decisions" work-context rating of the
occupation (element 4.C.1.c.2, CX scale 1..5, normalized to 0..100 via
(v - 1) / 4 * 100). Tasks shared by several occupations average their
occupations' scores and spread their SOC weight proportionally.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans
from sklearn.feature_extraction.text import TfidfVectorizer

from mcp_scope.providers import (
    EmbeddingProvider,
    ProviderError,
    TextAnalysisProvider,
    load_prompt,
)

logger = logging.getLogger(__name__)

IMPACT_ELEMENT_ID = "4.C.1.c.2"
IMPACT_SCALE_ID = "CX"

L1_CATEGORIES: list[tuple[str, str]] = [
    ("L1_01", "Business management, finance, and customer service operations"),
    ("L1_02", "Comprehensive healthcare services and medical specialties"),
    ("L1_03", "Manage education, HR, and professional development programs"),
    ("L1_04", "Design, implement, and maintain diverse information technology systems"),
    ("L1_05", "Operate and manage diverse industrial and agricultural processes"),
    ("L1_06", "Perform government regulatory enforcement and public safety operations"),
    ("L1_07", "Conduct scientific research and technical analysis across disciplines"),
    ("L1_08", "Create and preserve art, culture, and religious artifacts"),
    ("L1_09", "Coordinate transportation networks and manage logistics supply chains"),
    ("L1_10", "Manage diverse energy sources and optimize power systems"),
    ("L1_11", "Design and construct infrastructure projects and engineering systems"),
    ("L1_12", "Manage and improve environmental systems and sustainability practices"),
]


@dataclass
class OnetTask:
    task_id: str
    text: str
    occupation_title: str = ""
    soc_code: str = ""
    impact_score: float | None = None
    occupations: list = field(default_factory=list)  # [(soc code, title), ...]

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"task {self.task_id} has empty text")
        if self.impact_score is not None and not 0 <= self.impact_score <= 100:
            raise ValueError(f"impact_score out of [0,100]: {self.impact_score}")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "text": self.text,
            "occupation_title": self.occupation_title,
            "soc_code": self.soc_code,
            "impact_score": self.impact_score,
            "occupations": [list(o) for o in self.occupations],
        }


@dataclass
class TaxonomyNode:
    level: int
    id: str
    name: str
    parent: str | None = None
    members: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "id": self.id,
            "name": self.name,
            "parent": self.parent,
            "members": self.members,
        }


@dataclass
class Hierarchy:
    l1_nodes: list[TaxonomyNode]
    l2_nodes: list[TaxonomyNode]
    tasks: dict[str, OnetTask]
    l2_centroids: dict[str, list[float]]
    assignment_similarities: dict[str, float]
    metadata: dict

    def children(self, l1_id: str) -> list[TaxonomyNode]:
        return [n for n in self.l2_nodes if n.parent == l1_id]

    def members(self, l2_id: str) -> list[OnetTask]:
        node = next(n for n in self.l2_nodes if n.id == l2_id)
        return [self.tasks[tid] for tid in node.members]

    def to_dict(self) -> dict:
        return {
            "l1": [n.to_dict() for n in self.l1_nodes],
            "l2": [
                {
                    **n.to_dict(),
                    "centroid": self.l2_centroids[n.id],
                    "assignment_similarity": self.assignment_similarities[n.id],
                }
                for n in self.l2_nodes
            ],
            "tasks": [t.to_dict() for t in self.tasks.values()],
            "metadata": self.metadata,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "Hierarchy":
        l1 = [TaxonomyNode(level=1, id=n["id"], name=n["name"]) for n in d["l1"]]
        l2, centroids, sims = [], {}, {}
        for n in d["l2"]:
            l2.append(TaxonomyNode(level=2, id=n["id"], name=n["name"],
                                   parent=n["parent"], members=n["members"]))
            centroids[n["id"]] = n["centroid"]
            sims[n["id"]] = n["assignment_similarity"]
        tasks = {
            t["task_id"]: OnetTask(
                task_id=t["task_id"], text=t["text"],
                occupation_title=t.get("occupation_title", ""),
                soc_code=t.get("soc_code", ""), impact_score=t.get("impact_score"),
                occupations=[tuple(o) for o in t.get("occupations", [])],
            )
            for t in d["tasks"]
        }
        return cls(l1_nodes=l1, l2_nodes=l2, tasks=tasks, l2_centroids=centroids,
                   assignment_similarities=sims, metadata=d.get("metadata", {}))

    @classmethod
    def load(cls, path) -> "Hierarchy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def assign_l1(centroid, l1_embeddings: list[tuple[str, np.ndarray]]) -> tuple[str, float]:
    """Highest-cosine level-1 category; ties break to the smallest id."""
    c = np.asarray(centroid, dtype=float)
    cn = np.linalg.norm(c)
    if cn == 0:
        raise ValueError("zero centroid vector")
    best: tuple[float, str] | None = None
    for l1_id, vec in l1_embeddings:
        v = np.asarray(vec, dtype=float)
        vn = np.linalg.norm(v)
        if vn == 0:
            raise ValueError(f"zero embedding for {l1_id}")
        if v.shape != c.shape:
            raise ValueError(f"dimension mismatch for {l1_id}: {v.shape} vs {c.shape}")
        sim = float(c @ v / (cn * vn))
        if best is None or sim > best[0] + 1e-12 or (abs(sim - best[0]) <= 1e-12 and l1_id < best[1]):
            best = (sim, l1_id)
    return best[1], best[0]


def _tfidf_names(texts_by_cluster: dict[str, list[str]], top_n: int = 5) -> dict[str, str]:
    """Deterministic cluster names: top TF-IDF terms of member texts."""
    ids = sorted(texts_by_cluster)
    docs = [" ".join(texts_by_cluster[i]) for i in ids]
    vec = TfidfVectorizer(stop_words="english", lowercase=True)
    try:
        X = vec.fit_transform(docs)
    except ValueError:
        return {i: f"cluster {i}" for i in ids}
    vocab = np.array(vec.get_feature_names_out())
    names = {}
    for row, cluster_id in enumerate(ids):
        weights = X[row].toarray().ravel()
        top = np.argsort(-weights, kind="stable")[:top_n]
        terms = [vocab[j] for j in top if weights[j] > 0]
        names[cluster_id] = " ".join(terms) if terms else f"cluster {cluster_id}"
    return names


def _name_with_provider(namer: TextAnalysisProvider, members: list[str],
                        boundary: list[str]) -> str | None:
    prompt = (
        load_prompt("l2_naming")
        .replace("<<MEMBER_TASKS>>", "\n".join(f"- {t}" for t in members[:15]))
        .replace("<<BOUNDARY_TASKS>>", "\n".join(f"- {t}" for t in boundary[:5]))
    )
    for _ in range(2):
        try:
            name = namer.complete("l2_naming", prompt).strip().strip('"')
            if 6 <= len(name.split()) <= 13:
                return name
        except ProviderError:
            pass
    return None


def build_hierarchy(
    tasks: list[OnetTask],
    embedder: EmbeddingProvider,
    namer: TextAnalysisProvider | None = None,
    k: int = 400,
    seed: int = 42,
    n_init: int = 10,
) -> Hierarchy:
    """Cluster tasks into k level-2 nodes and hang them under the 12 L1s."""
    if not tasks:
        raise ValueError("tasks must be non-empty")
    if k > len(tasks):
        raise ValueError(f"k={k} exceeds number of tasks ({len(tasks)})")

    texts = [f"{t.text} [{t.occupation_title}]" if t.occupation_title else t.text for t in tasks]
    X = np.asarray(embedder.embed(texts), dtype=float)
    if X.shape[0] != len(tasks):
        raise ValueError("embedder returned wrong row count")

    if k == len(tasks):
        labels = np.arange(len(tasks))
        centroids = X.copy()
    else:
        km = KMeans(n_clusters=k, n_init=n_init, random_state=seed)
        labels = km.fit_predict(X)
        centroids = km.cluster_centers_

    # L2-normalize centroids before cosine assignment (recorded in metadata)
    norms = np.linalg.norm(centroids, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    centroids = centroids / norms

    l1_nodes = [TaxonomyNode(level=1, id=i, name=n) for i, n in L1_CATEGORIES]
    l1_vecs = np.asarray(embedder.embed([n for _, n in L1_CATEGORIES]), dtype=float)
    l1_embeddings = [(L1_CATEGORIES[i][0], l1_vecs[i]) for i in range(len(L1_CATEGORIES))]

    member_ids: dict[int, list[str]] = {}
    for idx, lab in enumerate(labels):
        member_ids.setdefault(int(lab), []).append(tasks[idx].task_id)

    texts_by_cluster = {
        f"L2_{lab:03d}": [tasks[i].text for i in range(len(tasks)) if int(labels[i]) == lab]
        for lab in member_ids
    }
    fallback_names = _tfidf_names(texts_by_cluster)

    l2_nodes, centroid_map, sims = [], {}, {}
    for lab in sorted(member_ids):
        l2_id = f"L2_{lab:03d}"
        centroid = centroids[lab]
        parent, sim = assign_l1(centroid, l1_embeddings)
        name = None
        if namer is not None:
            member_texts = texts_by_cluster[l2_id]
            others = np.array([i for i in range(len(tasks)) if int(labels[i]) != lab])
            boundary: list[str] = []
            if len(others):
                d = np.linalg.norm(X[others] - centroid, axis=1)
                boundary = [tasks[int(others[j])].text for j in np.argsort(d, kind="stable")[:5]]
            name = _name_with_provider(namer, member_texts, boundary)
        if name is None:
            name = fallback_names[l2_id]
        l2_nodes.append(TaxonomyNode(
            level=2, id=l2_id, name=name, parent=parent,
            members=sorted(member_ids[lab]),
        ))
        centroid_map[l2_id] = [float(v) for v in centroid]
        sims[l2_id] = sim

    mean_sim = float(np.mean(list(sims.values()))) if sims else 0.0
    return Hierarchy(
        l1_nodes=l1_nodes,
        l2_nodes=l2_nodes,
        tasks={t.task_id: t for t in tasks},
        l2_centroids=centroid_map,
        assignment_similarities=sims,
        metadata={
            "seed": seed,
            "k": k,
            "n_init": n_init,
            "embedder_dimension": int(X.shape[1]),
            "centroids_normalized": True,
            "mean_assignment_similarity": mean_sim,
        },
    )


def stakes_bucket(score: float) -> str:
    """low (<50), medium (50..75 inclusive), high (>75) on the 0..100 scale."""
    if not 0 <= score <= 100:
        raise ValueError(f"score out of [0,100]: {score}")
    if score < 50:
        return "low"
    if score <= 75:
        return "medium"
    return "high"


def soc_of_task(task_id: str, crosswalk: dict[str, list[tuple[str, str]]]) -> dict[str, float]:
    """Weighted 2-digit SOC distribution for one task (weights sum to 1)."""
    if task_id not in crosswalk:
        raise KeyError(f"unknown task id: {task_id}")
    return _soc_distribution(crosswalk[task_id])


def task_soc_distribution(task: OnetTask) -> dict[str, float]:
    """SOC distribution from the occupation list a task carries."""
    if task.occupations:
        return _soc_distribution(task.occupations)
    if task.soc_code:
        return {task.soc_code: 1.0}
    return {}


def _soc_distribution(entries) -> dict[str, float]:
    share = 1.0 / len(entries)
    dist: dict[str, float] = {}
    for soc, _title in entries:
        group = soc[:2]
        dist[group] = dist.get(group, 0.0) + share
    return dist


def _read_tsv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def load_onet_tables(task_file, occupation_file, context_file):
    """Load the three release tables.

    Returns (tasks, crosswalk): tasks carry the primary occupation plus the
    occupation-averaged impact score; crosswalk maps task id to all
    (soc code, occupation title) rows for proportional SOC aggregation.
    """
    impact_by_soc: dict[str, float] = {}
    for row in _read_tsv(context_file):
        if row["Element ID"] != IMPACT_ELEMENT_ID or row["Scale ID"] != IMPACT_SCALE_ID:
            continue
        value = float(row["Data Value"])
        impact_by_soc[row["O*NET-SOC Code"]] = (value - 1.0) / 4.0 * 100.0

    crosswalk: dict[str, list[tuple[str, str]]] = {}
    for row in _read_tsv(occupation_file):
        crosswalk.setdefault(row["Task ID"], []).append(
            (row["O*NET-SOC Code"], row["Title"])
        )

    tasks = []
    for row in _read_tsv(task_file):
        task_id = row["Task ID"]
        occs = crosswalk.get(task_id, [])
        scores = [impact_by_soc[soc] for soc, _ in occs if soc in impact_by_soc]
        tasks.append(OnetTask(
            task_id=task_id,
            text=row["Task"],
            occupation_title=occs[0][1] if occs else "",
            soc_code=occs[0][0][:2] if occs else "",
            impact_score=float(np.mean(scores)) if scores else None,
            occupations=list(occs),
        ))
    return tasks, crosswalk
