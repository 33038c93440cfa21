"""Hierarchy construction, L1 assignment, stakes buckets, SOC crosswalk."""

import hashlib
import json
import random

import numpy as np
import pytest

from mcp_scope.providers import EmbeddingProvider
from mcp_scope.taxonomy import (
    L1_CATEGORIES,
    Hierarchy,
    OnetTask,
    assign_l1,
    build_hierarchy,
    load_onet_tables,
    soc_of_task,
    stakes_bucket,
    task_soc_distribution,
)


class BlobEmbedder(EmbeddingProvider):
    """Marker words map to well-separated base vectors plus a small
    deterministic per-text offset; other texts hash to unit noise vectors."""

    MARKERS = {"alphaword": 0, "betaword": 1, "gammaword": 2}

    def __init__(self, dimension=8, jitter=0.02):
        self._dim = dimension
        self.jitter = jitter

    @property
    def dimension(self):
        return self._dim

    def _vector(self, text):
        rng = np.random.default_rng(
            int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")
        )
        for marker, axis in self.MARKERS.items():
            if marker in text:
                base = np.zeros(self._dim)
                base[axis] = 1.0
                return base + self.jitter * rng.normal(size=self._dim)
        v = rng.normal(size=self._dim)
        return v / np.linalg.norm(v)

    def embed(self, texts):
        return np.array([self._vector(t) for t in texts])


def blob_tasks():
    tasks = []
    for blob, marker in enumerate(("alphaword", "betaword", "gammaword")):
        for i in range(8):
            tasks.append(OnetTask(
                task_id=f"T{blob}{i:02d}",
                text=f"{marker} task number {i}",
                occupation_title=f"Occupation {blob}",
                soc_code="15",
            ))
    return tasks


# ---------------------------------------------------------------- build_hierarchy

def test_blob_fixture_recovers_clusters_exactly():
    tasks = blob_tasks()
    emb = BlobEmbedder()
    h = build_hierarchy(tasks, emb, k=3, seed=42)
    assert len(h.l2_nodes) == 3

    # brute-force nearest-centroid oracle on the separable fixture
    X = emb.embed([f"{t.text} [{t.occupation_title}]" for t in tasks])
    by_cluster = {n.id: set(n.members) for n in h.l2_nodes}
    truth = {}
    for blob in range(3):
        truth[blob] = {t.task_id for t in tasks if t.task_id.startswith(f"T{blob}")}
    assert set(map(frozenset, by_cluster.values())) == set(map(frozenset, truth.values()))

    centroids = {n.id: np.array(h.l2_centroids[n.id]) for n in h.l2_nodes}
    for idx, task in enumerate(tasks):
        dists = {cid: np.linalg.norm(X[idx] / np.linalg.norm(X[idx]) - c / np.linalg.norm(c))
                 for cid, c in centroids.items()}
        nearest = min(dists, key=dists.get)
        assert task.task_id in by_cluster[nearest]


def test_k_equals_n_singletons():
    tasks = blob_tasks()[:5]
    h = build_hierarchy(tasks, BlobEmbedder(), k=5, seed=1)
    assert len(h.l2_nodes) == 5
    assert all(len(n.members) == 1 for n in h.l2_nodes)


def test_k_greater_than_n_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        build_hierarchy(blob_tasks()[:3], BlobEmbedder(), k=5)
    with pytest.raises(ValueError, match="non-empty"):
        build_hierarchy([], BlobEmbedder(), k=1)


def test_partition_invariants():
    tasks = blob_tasks()
    h = build_hierarchy(tasks, BlobEmbedder(), k=3, seed=42)
    seen = [tid for n in h.l2_nodes for tid in n.members]
    assert sorted(seen) == sorted(t.task_id for t in tasks)  # exactly one L2 each
    l1_ids = {n.id for n in h.l1_nodes}
    assert len(h.l1_nodes) == 12
    assert [n.name for n in h.l1_nodes] == [name for _, name in L1_CATEGORIES]
    assert all(n.parent in l1_ids for n in h.l2_nodes)


def test_hierarchy_reproducible_and_serializable(tmp_path):
    tasks = blob_tasks()
    a = build_hierarchy(tasks, BlobEmbedder(), k=3, seed=7)
    b = build_hierarchy(tasks, BlobEmbedder(), k=3, seed=7)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)

    path = tmp_path / "hierarchy.json"
    a.save(path)
    loaded = Hierarchy.load(path)
    assert json.dumps(loaded.to_dict(), sort_keys=True) == json.dumps(a.to_dict(), sort_keys=True)


def test_hierarchy_metadata_records_choices():
    h = build_hierarchy(blob_tasks(), BlobEmbedder(), k=3, seed=42)
    md = h.metadata
    assert md["seed"] == 42 and md["k"] == 3 and md["centroids_normalized"] is True
    assert 0 <= md["mean_assignment_similarity"] <= 1 or md["mean_assignment_similarity"] >= -1


# ---------------------------------------------------------------- assign_l1

def l1_vectors(dim=5, seed=3):
    rng = np.random.default_rng(seed)
    return [(f"L1_{i:02d}", rng.normal(size=dim)) for i in range(1, 13)]


def test_assign_l1_identity_similarity_one():
    vecs = l1_vectors()
    chosen, sim = assign_l1(vecs[4][1], vecs)
    assert chosen == vecs[4][0]
    assert sim == pytest.approx(1.0, abs=1e-12)


def test_assign_l1_orthogonal_cases():
    e = np.eye(4)
    embeddings = [("L1_01", e[0]), ("L1_02", e[1]), ("L1_03", e[2])]
    chosen, sim = assign_l1(e[1], embeddings)
    assert chosen == "L1_02" and sim == pytest.approx(1.0)


def test_assign_l1_matches_exhaustive_oracle():
    rng = np.random.default_rng(17)
    vecs = l1_vectors()
    for _ in range(50):
        c = rng.normal(size=5)
        chosen, sim = assign_l1(c, vecs)
        sims = {
            lid: float(c @ v / (np.linalg.norm(c) * np.linalg.norm(v))) for lid, v in vecs
        }
        best = max(sims.values())
        oracle = min(lid for lid, s in sims.items() if s >= best - 1e-12)
        assert chosen == oracle
        assert sim == pytest.approx(best, abs=1e-12)


def test_assign_l1_tie_breaks_lexicographically():
    v = np.array([1.0, 0.0])
    embeddings = [("L1_09", v), ("L1_02", v * 2)]  # same direction, same cosine
    chosen, _ = assign_l1(v, embeddings)
    assert chosen == "L1_02"


def test_assign_l1_rejects_zero_vectors():
    vecs = l1_vectors()
    with pytest.raises(ValueError, match="zero"):
        assign_l1(np.zeros(5), vecs)
    with pytest.raises(ValueError, match="dimension"):
        assign_l1(np.ones(3), vecs)


# ---------------------------------------------------------------- stakes

def test_stakes_bucket_paper_boundaries():
    assert stakes_bucket(80) == "high"
    assert stakes_bucket(0) == "low"
    assert stakes_bucket(75) == "medium"
    assert stakes_bucket(50) == "medium"
    assert stakes_bucket(49.999) == "low"
    assert stakes_bucket(75.001) == "high"
    assert stakes_bucket(100) == "high"


def test_stakes_bucket_rejects_out_of_range():
    for bad in (-0.1, 100.1, 500):
        with pytest.raises(ValueError):
            stakes_bucket(bad)


def test_stakes_bucket_monotone():
    order = {"low": 0, "medium": 1, "high": 2}
    rng = random.Random(5)
    for _ in range(300):
        a, b = sorted((rng.uniform(0, 100), rng.uniform(0, 100)))
        assert order[stakes_bucket(a)] <= order[stakes_bucket(b)]


# ---------------------------------------------------------------- SOC crosswalk

def test_soc_single_occupation_weight_one():
    cw = {"T1": [("15-1252.00", "Software Developers")]}
    assert soc_of_task("T1", cw) == {"15": 1.0}


def test_soc_two_occupations_half_each():
    cw = {"T1": [("15-1252.00", "Software Developers"), ("13-2051.00", "Analysts")]}
    assert soc_of_task("T1", cw) == {"15": 0.5, "13": 0.5}


def test_soc_same_group_sums():
    cw = {"T1": [("15-1252.00", "A"), ("15-1211.00", "B")]}
    assert soc_of_task("T1", cw) == {"15": pytest.approx(1.0)}


def test_soc_unknown_task_rejected_with_id():
    with pytest.raises(KeyError, match="T9"):
        soc_of_task("T9", {})


def test_soc_twenty_task_fixture_against_join_oracle():
    rng = random.Random(11)
    socs = ["15-1252.00", "13-2051.00", "27-1024.00", "15-1211.00", "11-1021.00"]
    cw = {}
    for i in range(20):
        n = rng.randint(1, 4)
        cw[f"T{i:02d}"] = [(rng.choice(socs), f"Occ{j}") for j in range(n)]
    for tid, entries in cw.items():
        got = soc_of_task(tid, cw)
        # brute-force join oracle
        expected = {}
        for soc, _ in entries:
            expected[soc[:2]] = expected.get(soc[:2], 0.0) + 1.0 / len(entries)
        assert set(got) == set(expected)
        for k in got:
            assert got[k] == pytest.approx(expected[k], abs=1e-12)
        assert sum(got.values()) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- file loading

ONET_TASKS_TSV = "Task ID\tTask\nT1\tWrite computer programs\nT2\tPrepare financial reports\n"
ONET_OCCS_TSV = (
    "Task ID\tO*NET-SOC Code\tTitle\n"
    "T1\t15-1252.00\tSoftware Developers\n"
    "T2\t13-2051.00\tFinancial Analysts\n"
    "T2\t11-3031.00\tFinancial Managers\n"
)
ONET_CONTEXT_TSV = (
    "O*NET-SOC Code\tElement ID\tScale ID\tData Value\n"
    "15-1252.00\t4.C.1.c.2\tCX\t3.0\n"
    "13-2051.00\t4.C.1.c.2\tCX\t4.2\n"
    "11-3031.00\t4.C.1.c.2\tCX\t5.0\n"
    "15-1252.00\t4.C.3.a.1\tCX\t2.0\n"
)


def test_load_onet_tables(tmp_path):
    (tmp_path / "tasks.tsv").write_text(ONET_TASKS_TSV)
    (tmp_path / "occs.tsv").write_text(ONET_OCCS_TSV)
    (tmp_path / "ctx.tsv").write_text(ONET_CONTEXT_TSV)
    tasks, cw = load_onet_tables(tmp_path / "tasks.tsv", tmp_path / "occs.tsv", tmp_path / "ctx.tsv")
    by_id = {t.task_id: t for t in tasks}
    # CX 3.0 -> (3-1)/4*100 = 50
    assert by_id["T1"].impact_score == pytest.approx(50.0)
    assert by_id["T1"].occupation_title == "Software Developers"
    assert by_id["T1"].soc_code == "15"
    # T2 averages (4.2-1)/4*100 = 80 and (5-1)/4*100 = 100 -> 90
    assert by_id["T2"].impact_score == pytest.approx(90.0)
    assert task_soc_distribution(by_id["T2"]) == {"13": 0.5, "11": 0.5}
    assert cw["T2"] == [("13-2051.00", "Financial Analysts"), ("11-3031.00", "Financial Managers")]
