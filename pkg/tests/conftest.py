import pytest

from hemascreen import dataset, pipeline


@pytest.fixture(scope="session")
def default_config():
    return pipeline.PipelineConfig()


@pytest.fixture(scope="session")
def small_corpus():
    return dataset.synth_corpus(24, seed=11)


@pytest.fixture(scope="session")
def small_rows(small_corpus, default_config):
    rows, skipped = pipeline.rows_from_patients(small_corpus, default_config)
    assert not skipped
    return rows


@pytest.fixture(scope="session")
def small_bundle(small_rows, default_config):
    return pipeline.train_bundle(small_rows, default_config)
