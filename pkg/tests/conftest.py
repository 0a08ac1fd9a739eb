"""Test fixtures for critiqa tests."""

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from critiqa.core.models import ActorConfig, CriticConfig  # noqa: E402
from critiqa.core.synthetic import SyntheticConfig, make_synthetic_squad  # noqa: E402
from critiqa.core.textio import parse_squad  # noqa: E402

GROTTO_CONTEXT = (
    "Immediately behind the basilica is the Grotto, a Marian place of prayer and reflection. "
    "It is a replica of the grotto at Lourdes, France."
)


class PinnedCritic:
    """Critic stub returning the same probability for every pair."""

    def __init__(self, probability: float, query_window: int = 64):
        self.value = probability
        self.config = CriticConfig(query_window=query_window)
        self.calls = []

    def probability(self, query_tokens, span_tokens):
        self.calls.append((tuple(query_tokens), tuple(span_tokens)))
        return self.value


class LabelAwareCritic:
    """Critic stub that knows which spans are genuine."""

    def __init__(self, genuine_spans):
        self.genuine = {tuple(s) for s in genuine_spans}

    def probability(self, query_tokens, span_tokens):
        return 0.99 if tuple(span_tokens) in self.genuine else 0.01


class FixedLogitsActor:
    """Actor stub returning the same logits for every example."""

    def __init__(self, start, end):
        self.start = np.asarray(start, dtype=np.float32)
        self.end = np.asarray(end, dtype=np.float32)

    def logits(self, example):
        return self.start, self.end


class OracleActor:
    """Actor stub that puts all its mass on the gold span."""

    def logits(self, example):
        n = len(example.passage.tokens)
        start = np.zeros(n, dtype=np.float32)
        end = np.zeros(n, dtype=np.float32)
        start[example.gold_span[0]] = 10.0
        end[example.gold_span[1]] = 10.0
        return start, end


@pytest.fixture
def squad_payload():
    """Two alignable questions over one paragraph."""
    return {
        "version": "1.1",
        "data": [
            {
                "title": "University_of_Notre_Dame",
                "paragraphs": [
                    {
                        "context": GROTTO_CONTEXT,
                        "qas": [
                            {
                                "id": "5733be284776f41900661180",
                                "question": "What is the Grotto at Notre Dame?",
                                "answers": [{"text": "a Marian place of prayer", "answer_start": 47}],
                            },
                            {
                                "id": "5733be284776f41900661181",
                                "question": "The Grotto is a replica of what?",
                                "answers": [{"text": "the grotto at Lourdes", "answer_start": 107}],
                            },
                        ],
                    }
                ],
            }
        ],
    }


@pytest.fixture
def squad_file(tmp_path, squad_payload):
    """The two-question payload written to disk."""
    import json

    path = tmp_path / "squad.json"
    path.write_text(json.dumps(squad_payload), encoding="utf-8")
    return path


@pytest.fixture
def squad_dataset(squad_payload):
    return parse_squad(squad_payload)


@pytest.fixture
def synthetic_dataset():
    """Small clean synthetic corpus."""
    return parse_squad(make_synthetic_squad(SyntheticConfig(n_examples=16, seed=3)))


@pytest.fixture
def tiny_actor_config():
    return ActorConfig(embed_dim=8, hidden_dim=8)


@pytest.fixture
def tiny_critic_config():
    return CriticConfig(embed_dim=8, hidden_dim=8, head_dims=(8, 4), query_window=6)


@pytest.fixture
def pinned_critic():
    """Factory for critics pinned at a probability."""
    return PinnedCritic


@pytest.fixture
def label_aware_critic():
    return LabelAwareCritic


@pytest.fixture
def fixed_logits_actor():
    return FixedLogitsActor


@pytest.fixture
def oracle_actor():
    return OracleActor()


@pytest.fixture(autouse=True)
def reset_critiqa_logger():
    """Undo setup_logging so caplog sees critiqa records in every test."""
    yield
    logger = logging.getLogger("critiqa")
    logger.handlers = []
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
