"""Document embedding backends.

The default is a deterministic hashed bag-of-words vectorizer: no model
download, identical text always embeds identically. A sentence-transformer
backend can be requested by model name; if the library or model is not
available the request is rejected rather than silently substituted.
"""

from __future__ import annotations

import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer


class EmbeddingUnavailable(Exception):
    """Requested embedding model cannot be loaded."""


class HashingEmbedding:
    def __init__(self, dimension: int = 256):
        self.model_id = f"hashing-{dimension}"
        self.dimension = dimension
        self._vec = HashingVectorizer(n_features=dimension, norm="l2",
                                      alternate_sign=True, analyzer="word")

    def embed(self, texts) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dimension))
        return np.asarray(self._vec.transform(texts).todense())


class SentenceTransformerEmbedding:
    def __init__(self, model_name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EmbeddingUnavailable("sentence-transformers is not installed") from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:  # model missing from cache, no network, etc.
            raise EmbeddingUnavailable(f"cannot load {model_name}: {exc}") from exc
        self.model_id = model_name
        self.dimension = self._model.get_sentence_embedding_dimension()

    def embed(self, texts) -> np.ndarray:
        return np.asarray(self._model.encode(list(texts), show_progress_bar=False))


def make_embedding(spec: str = "hashing-256"):
    """'hashing-<dim>' or a sentence-transformer model name."""
    if spec.startswith("hashing-"):
        return HashingEmbedding(dimension=int(spec.split("-", 1)[1]))
    return SentenceTransformerEmbedding(spec)
