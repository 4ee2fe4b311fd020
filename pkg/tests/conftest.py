import sys

import numpy as np
import pytest

from dialsum import corpus
from dialsum.corpus import DialogueExample, FactTriplet
from dialsum.model import ModelConfig, Summarizer


def tiny_example() -> DialogueExample:
    return DialogueExample(
        "tiny",
        [["tom", ":", "i", "bought", "a", "car", "."], ["ann", ":", "nice", "!"]],
        ["tom", "bought", "a", "car", ".", "ann", "is", "happy", "."],
        [FactTriplet("tom", "bought", "car", 0, 1, 3)],
    )


@pytest.fixture
def tiny_vocab():
    # "happy" stays out of the vocabulary; "ann" is only copyable
    return corpus.build_vocab([["tom", "i", "bought", "a", "car", ".", ":", "nice", "!", "is"]])


@pytest.fixture
def tiny_config():
    return ModelConfig(d_e=6, d=8, d_up=3, d_sp=3, dropout=0.0, max_utt_positions=4, max_sum_positions=12)


@pytest.fixture
def tiny_model(tiny_config, tiny_vocab):
    return Summarizer.create(tiny_config, tiny_vocab, seed=3)


@pytest.fixture
def tiny_source(tiny_vocab):
    return corpus.encode_example(tiny_example(), tiny_vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
