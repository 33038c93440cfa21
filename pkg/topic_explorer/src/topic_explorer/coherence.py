"""C_v-style topic coherence over boolean document co-occurrence.

For each cluster's top terms: NPMI context vectors per term (document-level
co-occurrence windows), then the mean cosine between each term's vector and
the summed vector of the full term set. Identical documents give the measure
maximum of 1.0; the theoretical range is [-1, 1]. Clusters with fewer than
two documents are excluded as undefined.
"""

from __future__ import annotations

import math
import re

import numpy as np

TOKEN = re.compile(r"[a-z][a-z0-9_-]+")

EPS = 1e-12


def tokenize(text: str) -> list[str]:
    return TOKEN.findall(text.lower())


def top_terms(docs_tokens: list[list[str]], cluster_doc_idx: dict[int, list[int]],
              n_terms: int = 10) -> dict[int, list[str]]:
    """Top terms per cluster: within-cluster frequency weighted by IDF."""
    n_docs = len(docs_tokens)
    df: dict[str, int] = {}
    for tokens in docs_tokens:
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1
    out = {}
    for label, idx in cluster_doc_idx.items():
        counts: dict[str, int] = {}
        for i in idx:
            for term in docs_tokens[i]:
                counts[term] = counts.get(term, 0) + 1
        scored = sorted(
            counts,
            key=lambda t: (-counts[t] * math.log(1 + n_docs / df[t]), t),
        )
        out[label] = scored[:n_terms]
    return out


def _npmi(p_i: float, p_j: float, p_ij: float) -> float:
    if p_ij <= 0:
        return -1.0
    pmi = math.log(p_ij / (p_i * p_j))
    denom = -math.log(p_ij)
    if denom <= EPS:
        # terms co-occur in every document: maximal association
        return 1.0
    return pmi / denom


def cluster_coherence(terms: list[str], docs_tokens: list[list[str]]) -> float:
    """C_v-style score for one term set over the whole corpus."""
    n = len(docs_tokens)
    if n == 0 or len(terms) < 2:
        return float("nan")
    present = []
    for term in terms:
        present.append(np.array([term in set(t) for t in docs_tokens], dtype=bool))
    p = [max(m.mean(), EPS) for m in present]
    k = len(terms)
    vectors = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                vectors[i, j] = 1.0
                continue
            p_ij = float((present[i] & present[j]).mean())
            vectors[i, j] = _npmi(p[i], p[j], p_ij)
    summed = vectors.sum(axis=0)
    sims = []
    for i in range(k):
        ni = np.linalg.norm(vectors[i])
        ns = np.linalg.norm(summed)
        if ni <= EPS or ns <= EPS:
            continue
        sims.append(float(vectors[i] @ summed / (ni * ns)))
    return float(np.mean(sims)) if sims else float("nan")
