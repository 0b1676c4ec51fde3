import numpy as np
import pytest

from synth import planted_records, tiny_corpus, tiny_records, write_jsonl


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def corpus6():
    return tiny_corpus()


@pytest.fixture
def dataset6(tmp_path):
    path = tmp_path / "dataset.jsonl"
    write_jsonl(path, tiny_records())
    return path


@pytest.fixture(scope="session")
def planted_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("planted") / "dataset.jsonl"
    write_jsonl(path, planted_records())
    return path
