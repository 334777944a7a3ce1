from pathlib import Path

import pytest
import torch

from kanrec.kg_store import load_triples
from kanrec.news_encoder import WordVocabulary

FIXTURES = Path(__file__).parent / "fixtures"

# everything numeric in the package is float64; keep test tensors consistent
torch.set_default_dtype(torch.float64)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def mini_kg():
    return load_triples(FIXTURES / "mini_kg.tsv")


@pytest.fixture
def toy_vocab() -> WordVocabulary:
    return WordVocabulary.load(FIXTURES / "toy_vectors.txt")
