"""
Synthetic SQuAD-schema corpora for critiqa

Small, fully controlled question answering data for desk-scale experiments.
Every passage holds one answer sentence, ``<topic words> <cue> <answer words> .``,
among filler sentences; the question asks ``what <cue> <topic words> ?``. With
``distractor`` set, one more sentence is appended that puts question words
right after the cue, like the adversarial SQuAD distractor sentences.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from .ndmath import make_rng
from .textio import STOP_WORDS

logger = logging.getLogger("critiqa.synthetic")

CUES = ("holds", "names", "keeps", "marks")
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SyntheticConfig:
    n_examples: int = 200
    topic_words: int = 60
    answer_words: int = 60
    filler_words: int = 60
    question_len: int = 3
    answer_len: int = 2
    filler_sentences: int = 2
    distractor: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("n_examples", "topic_words", "answer_words", "filler_words", "question_len", "answer_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.filler_sentences < 0:
            raise ConfigError(f"filler_sentences must be >= 0, got {self.filler_sentences}")
        if self.question_len > self.topic_words or self.answer_len > self.answer_words:
            raise ConfigError("word pools are smaller than the requested phrase lengths")


def _word_pool(size: int, rng: np.random.Generator) -> List[str]:
    """Distinct pronounceable CVCV words, none of them stop words."""
    candidates = [
        "".join(parts)
        for parts in itertools.product(_CONSONANTS, _VOWELS, _CONSONANTS, _VOWELS)
        if "".join(parts) not in STOP_WORDS and "".join(parts) not in CUES
    ]
    if size > len(candidates):
        raise ConfigError(f"cannot make {size} distinct synthetic words")
    picked = rng.choice(len(candidates), size=size, replace=False)
    return [candidates[i] for i in picked]


def _pick(pool: Sequence[str], k: int, rng: np.random.Generator) -> List[str]:
    return [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]


def _sentence(words: Sequence[str]) -> str:
    return " ".join(words) + " ."


def _make_example(
    index: int,
    cfg: SyntheticConfig,
    pools: Tuple[List[str], List[str], List[str]],
    rng: np.random.Generator,
) -> Tuple[str, Dict[str, Any]]:
    topics, answers, fillers = pools
    cue = CUES[int(rng.integers(0, len(CUES)))]
    topic = _pick(topics, cfg.question_len, rng)
    answer = _pick(answers, cfg.answer_len, rng)

    sentences = [
        _sentence(_pick(fillers, int(rng.integers(4, 7)), rng)) for _ in range(cfg.filler_sentences)
    ]
    slot = int(rng.integers(0, len(sentences) + 1))
    sentences.insert(slot, _sentence(topic + [cue] + answer))
    if cfg.distractor:
        decoy_topic = _pick([w for w in topics if w not in topic], cfg.question_len, rng)
        echoed = [topic[i % len(topic)] for i in range(cfg.answer_len)]
        sentences.append(_sentence(decoy_topic + [cue] + echoed))

    prefix = " ".join(sentences[:slot])
    answer_start = (len(prefix) + 1 if prefix else 0) + len(" ".join(topic + [cue])) + 1
    context = " ".join(sentences)
    answer_text = " ".join(answer)

    qid = f"syn-{index:05d}" + ("-distractor" if cfg.distractor else "")
    qa = {
        "id": qid,
        "question": "what " + " ".join([cue] + topic) + " ?",
        "answers": [{"text": answer_text, "answer_start": answer_start}],
    }
    return context, qa


def make_synthetic_squad(cfg: SyntheticConfig) -> Dict[str, Any]:
    """A SQuAD-v1.1-schema object with one paragraph per example."""
    # word pools depend only on pool sizes so clean and distractor corpora share them
    pool_rng = make_rng(0)
    words = _word_pool(cfg.topic_words + cfg.answer_words + cfg.filler_words, pool_rng)
    topics = words[: cfg.topic_words]
    answers = words[cfg.topic_words : cfg.topic_words + cfg.answer_words]
    fillers = words[cfg.topic_words + cfg.answer_words :]

    rng = make_rng(cfg.seed)
    paragraphs = []
    for index in range(cfg.n_examples):
        context, qa = _make_example(index, cfg, (topics, answers, fillers), rng)
        paragraphs.append({"context": context, "qas": [qa]})
    logger.info(
        "generated %d synthetic examples (distractor=%s, seed=%d)",
        cfg.n_examples, cfg.distractor, cfg.seed,
    )
    return {"version": "1.1", "data": [{"title": "synthetic", "paragraphs": paragraphs}]}
