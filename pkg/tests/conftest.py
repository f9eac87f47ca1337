import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from selfother.corpus import DialogueSample, build_vocabulary
from selfother.knowledge import KnowledgeStore
from selfother.network import ModelConfig


TOY_CONFIG = dict(hidden_dim=8, heads=2, encoder_layers=1, decoder_layers=1,
                  graph_layers=1, ffn_dim=16, dropout=0.0, knowledge_dim=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config():
    return ModelConfig(**TOY_CONFIG)


@pytest.fixture
def two_turn_sample():
    # one self turn and one other turn, so both awareness graphs are non-empty
    return DialogueSample(
        id="d1",
        utterances=(("self", ("hello", "there")),
                    ("other", ("i", "feel", "sad", "today"))),
        emotion="sad",
        response=("oh", "no", "cheer", "up"),
    )


@pytest.fixture
def first_turn_sample():
    return DialogueSample(
        id="d2",
        utterances=(("other", ("great", "news", "today")),),
        emotion="excited",
        response=("that", "is", "great"),
    )


@pytest.fixture
def toy_samples(two_turn_sample, first_turn_sample):
    return [two_turn_sample, first_turn_sample]


@pytest.fixture
def toy_vocab(toy_samples):
    return build_vocabulary(toy_samples)


@pytest.fixture
def toy_store(toy_samples):
    return KnowledgeStore.synthetic(toy_samples, dim=6, seed=0)
