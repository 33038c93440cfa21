"""Topic pipeline tests: generative fixture recovery, parameter rule, export."""

import json
import random

import numpy as np
import pytest

from topic_explorer import coherence as coh
from topic_explorer import pipeline
from topic_explorer.pipeline import (
    TopicParams,
    build_topics,
    derive_cluster_params,
    evaluate_topics,
    export_map,
    fallback_name,
    heldout_split,
    load_server_docs,
    write_metrics,
)

VOCABULARIES = {
    "database": ["database", "query", "records", "sql", "tables", "index",
                 "rows", "schema", "joins", "transactions", "storage", "keys"],
    "browser": ["browser", "click", "page", "scroll", "screenshot", "website",
                "automation", "element", "tab", "mouse", "keyboard", "render"],
    "finance": ["payment", "invoice", "trading", "wallet", "bank", "balance",
                "transaction", "crypto", "ledger", "settlement", "account", "funds"],
    "research": ["paper", "experiment", "analysis", "dataset", "science",
                 "laboratory", "hypothesis", "results", "citation", "review",
                 "methods", "findings"],
    "messaging": ["email", "chat", "message", "notify", "inbox", "channel",
                  "thread", "reply", "contact", "broadcast", "deliver", "subject"],
}


def generative_fixture(n_docs=1000, seed=7):
    """Docs drawn from 5 disjoint vocabularies; returns (docs, domain by id)."""
    rng = random.Random(seed)
    domains = sorted(VOCABULARIES)
    docs, truth = [], {}
    for i in range(n_docs):
        domain = domains[i % len(domains)]
        words = rng.choices(VOCABULARIES[domain], k=20)
        doc_id = f"doc{i:04d}"
        docs.append((doc_id, " ".join(words)))
        truth[doc_id] = domain
    return docs, truth


@pytest.fixture(scope="module")
def fixture_run():
    # explicit min_cluster_size: 2% of N. The 0.3%-of-N derivation rule was
    # tuned at ~20k docs (where it gives ~58) and is property-checked below;
    # at N=1000 it yields 3, which carves micro-clusters out of dense blobs.
    docs, truth = generative_fixture()
    run = build_topics(docs, TopicParams(seed=42, min_cluster_size=20))
    return docs, truth, run


# ---------------------------------------------------------------- S1 core

def test_recovers_five_clusters(fixture_run):
    _docs, _truth, run = fixture_run
    assert run.n_topics() == 5
    assert -1.0 <= run.coherence <= 1.0  # documented range of the measure


def test_outlier_rate_below_ten_percent(fixture_run):
    _docs, _truth, run = fixture_run
    assert run.outlier_rate < 0.10
    assert 0.0 <= run.outlier_rate <= 1.0


def test_cluster_domain_agreement_above_eighty_percent(fixture_run):
    _docs, truth, run = fixture_run
    majority = {}
    for label in set(run.labels.tolist()):
        if label < 0:
            continue
        members = [run.doc_ids[i] for i in range(len(run.doc_ids)) if run.labels[i] == label]
        counts = {}
        for doc_id in members:
            counts[truth[doc_id]] = counts.get(truth[doc_id], 0) + 1
        majority[label] = max(sorted(counts), key=counts.get)
    agree = sum(
        1 for i, doc_id in enumerate(run.doc_ids)
        if run.labels[i] >= 0 and majority[run.labels[i]] == truth[doc_id]
    )
    assert agree / len(run.doc_ids) > 0.80


def test_parameter_derivation_rule():
    assert derive_cluster_params(10_000) == (30, 9)
    rng = random.Random(3)
    for _ in range(200):
        n = rng.randint(1, 2_000_000)
        mcs, ms = derive_cluster_params(n)
        assert mcs == max(2, round(0.003 * n))
        assert ms == max(1, round(0.3 * mcs))


def test_fixed_seed_determinism():
    docs, _ = generative_fixture(n_docs=400, seed=11)
    a = build_topics(docs, TopicParams(seed=42))
    b = build_topics(docs, TopicParams(seed=42))
    assert a.labels.tolist() == b.labels.tolist()
    assert a.cluster_names == b.cluster_names
    assert a.outlier_rate == b.outlier_rate


# ---------------------------------------------------------------- evaluation

def test_identical_documents_reach_measure_maximum():
    docs_tokens = [["alpha", "beta", "gamma"]] * 20
    score = coh.cluster_coherence(["alpha", "beta", "gamma"], docs_tokens)
    assert score == pytest.approx(1.0, abs=1e-9)


def test_random_labels_score_below_true_clustering(fixture_run):
    docs, _truth, run = fixture_run
    docs_tokens = [coh.tokenize(t) for _id, t in docs]

    rng = np.random.default_rng(5)
    random_labels = rng.integers(0, 5, len(docs))
    random_clusters = {
        int(k): [i for i in range(len(docs)) if random_labels[i] == k] for k in range(5)
    }
    random_terms = coh.top_terms(docs_tokens, random_clusters)
    random_scores = [coh.cluster_coherence(t, docs_tokens) for t in random_terms.values()]
    assert float(np.nanmean(random_scores)) < run.coherence


def test_singleton_clusters_excluded_from_coherence():
    docs = [(f"d{i}", "alpha beta gamma delta") for i in range(9)]
    docs += [("solo", "zeta eta theta iota")]
    run = build_topics(docs, TopicParams(min_cluster_size=2, min_samples=1))
    for split in ("main", "heldout"):
        block = run.metrics.get(split)
        if block:
            assert isinstance(block["singletons_excluded"], list)


def test_evaluate_topics_contract(fixture_run):
    _docs, _truth, run = fixture_run
    out = evaluate_topics(run)
    assert set(out) == {"outlier_rate", "coherence"}
    assert out["outlier_rate"] == run.outlier_rate


def test_zero_outliers_fixture():
    docs = [(f"a{i}", "alpha " * 10) for i in range(10)]
    docs += [(f"b{i}", "omega " * 10) for i in range(10)]
    run = build_topics(docs, TopicParams(min_cluster_size=3, min_samples=1))
    assert run.outlier_rate == 0.0


def test_heldout_split_is_deterministic_tenth():
    ids = [f"doc{i}" for i in range(5000)]
    mask = heldout_split(ids)
    assert mask.tolist() == heldout_split(ids).tolist()
    assert 0.05 < mask.mean() < 0.15


def test_heldout_metrics_present(fixture_run):
    _docs, _truth, run = fixture_run
    assert run.metrics["heldout"] is not None
    assert 0.0 <= run.metrics["heldout"]["outlier_rate"] <= 1.0


# ---------------------------------------------------------------- export

def test_export_map_shape_and_joins(tmp_path, fixture_run):
    docs, truth, run = fixture_run
    labels = dict(list(truth.items())[:-7])  # a few docs lack a domain label
    csv_path, svg_path = tmp_path / "topics.csv", tmp_path / "topic_map.svg"
    export_map(run, labels, csv_path, svg_path)
    import csv as _csv

    with open(csv_path, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    assert len(rows) == len(docs)
    assert all(np.isfinite(float(r["x"])) and np.isfinite(float(r["y"])) for r in rows)
    missing = [r for r in rows if r["topdown_domain"] == ""]
    assert len(missing) == 7
    named = [r for r in rows if int(r["cluster"]) >= 0]
    assert all(r["cluster_name"].endswith(" tools") for r in named)
    assert svg_path.exists()


def test_export_map_colour_agreement(tmp_path, fixture_run):
    """Cluster majority domain matches the generative domain for >80% of dots."""
    docs, truth, run = fixture_run
    csv_path, svg_path = tmp_path / "t.csv", tmp_path / "t.svg"
    export_map(run, truth, csv_path, svg_path)
    import csv as _csv

    with open(csv_path, newline="") as fh:
        rows = [r for r in _csv.DictReader(fh) if int(r["cluster"]) >= 0]
    majority = {}
    for r in rows:
        majority.setdefault(r["cluster"], {})
        majority[r["cluster"]][r["topdown_domain"]] = \
            majority[r["cluster"]].get(r["topdown_domain"], 0) + 1
    agree = sum(
        1 for r in rows
        if max(sorted(majority[r["cluster"]]), key=majority[r["cluster"]].get) == r["topdown_domain"]
    )
    assert agree / len(rows) > 0.80


def test_write_metrics_round_trips(tmp_path, fixture_run):
    _docs, _truth, run = fixture_run
    path = tmp_path / "topic_metrics.json"
    write_metrics(run, path)
    payload = json.loads(path.read_text())
    assert payload["n_topics"] == 5
    assert payload["params"]["min_cluster_size"] == 20
    assert payload["embedding_model"] == "hashing-256"


def test_derived_params_used_when_unset():
    docs, _ = generative_fixture(n_docs=400, seed=2)
    run = build_topics(docs, TopicParams(seed=42))
    mcs, ms = derive_cluster_params(400)
    assert run.params["min_cluster_size"] == mcs
    assert run.params["min_samples"] == ms


def test_sweep_reaches_topic_target():
    docs, _ = generative_fixture()
    run = pipeline.sweep_topics(docs, TopicParams(seed=42), target=(40, 60))
    assert 40 <= run.n_topics() <= 60


def test_fallback_name_format():
    assert fallback_name(["database", "query", "sql"]) == "database-query tools"
    assert fallback_name([]) == "misc tools"


def test_below_min_docs_flagged():
    docs = [(f"d{i}", "alpha beta") for i in range(30)]
    run = build_topics(docs, TopicParams(min_cluster_size=3, min_samples=1))
    assert "below_min_docs" in run.flags


def test_rejects_tiny_corpora():
    with pytest.raises(ValueError, match="at least 3"):
        build_topics([("a", "x"), ("b", "y")])


# ---------------------------------------------------------------- file intake

def test_load_server_docs_reads_monitor_format(tmp_path):
    servers = tmp_path / "servers.jsonl"
    rec = {
        "id": "abc123", "repo": {"name": "files-mcp"},
        "extraction": {"summary": "A file server.", "is_mcp_server": 1,
                       "filtered_content": "reads and writes files", "tools": []},
        "is_official": False, "created_at": None, "stars": 1,
    }
    servers.write_text(json.dumps(rec) + "\n")
    docs = load_server_docs(servers)
    assert docs == [("abc123", "files-mcp A file server. reads and writes files")]
