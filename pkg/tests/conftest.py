from pathlib import Path

import pytest

from mcp_scope import pipeline

CORPUS = Path(__file__).parent / "fixtures" / "corpus"


def corpus_config(tmp_dir: Path, **overrides) -> pipeline.PipelineConfig:
    kwargs = dict(
        fixture_dir=CORPUS,
        output_dir=tmp_dir / "store",
        provider="rules",
        taxonomy_files={
            "tasks": CORPUS / "onet" / "task_statements.tsv",
            "occupations": CORPUS / "onet" / "task_occupations.tsv",
            "work_context": CORPUS / "onet" / "work_context.tsv",
        },
        taxonomy_k=5,
        geo_table=CORPUS / "geo.csv",
        cache_dir=tmp_dir / "cache",
        bootstrap_replicates=100,
    )
    kwargs.update(overrides)
    return pipeline.PipelineConfig(**kwargs)


@pytest.fixture(scope="session")
def corpus_run(tmp_path_factory):
    """One full pipeline run over the committed corpus, shared by tests."""
    tmp = tmp_path_factory.mktemp("corpus-run")
    manifest = pipeline.run(corpus_config(tmp))
    return manifest


@pytest.fixture
def corpus_dir():
    return CORPUS
