import pytest

from plansim.corpus import bundled_corpus_path, load_corpus


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(bundled_corpus_path())


@pytest.fixture()
def apartment(corpus):
    # fresh mutable copy per test
    return corpus.scenes["apartment"].clone()


@pytest.fixture()
def studio(corpus):
    return corpus.scenes["studio_flat"].clone()
