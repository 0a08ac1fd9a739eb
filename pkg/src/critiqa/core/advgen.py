"""
Adversarial span generation for critiqa

Builds negative spans by replacing golden-span tokens with tokens sampled from
the question, and assembles the critic's balanced corpus of genuine and
adversarial (query, span) pairs. Every example draws from its own random
substream, derived from the run seed and the example id, so output does not
depend on processing order or worker count.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ..errors import ConfigError, DataError, DataLoadError, GenerationError
from .ndmath import make_rng
from .run_manifest import atomic_write_lines
from .textio import Dataset, QAExample, Vocabulary, is_stop_word

logger = logging.getLogger("critiqa.advgen")

MAX_SEED = 2**64 - 1


class Scope(Enum):
    """Which golden-span positions may be replaced."""

    ALL_WORDS = "all_words"
    NON_STOP_WORDS = "non_stop_words"

    @classmethod
    def parse(cls, value: Union[str, "Scope"]) -> "Scope":
        if isinstance(value, cls):
            return value
        aliases = {"all": cls.ALL_WORDS, "nonstop": cls.NON_STOP_WORDS}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ConfigError(f"unknown scope {value!r}") from None


class Label(IntEnum):
    ADVERSARIAL = 0
    GENUINE = 1


@dataclass
class GenConfig:
    """Adversarial generation settings."""

    replacement_prob: float = 0.75
    scope: Scope = Scope.ALL_WORDS
    query_window: int = 64
    seed: int = 0

    def __post_init__(self):
        self.scope = Scope.parse(self.scope)
        if not 0.0 <= self.replacement_prob <= 1.0:
            raise ConfigError(f"replacement_prob must be in [0, 1], got {self.replacement_prob}")
        if self.query_window < 1:
            raise ConfigError(f"query_window must be >= 1, got {self.query_window}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class NegativeSpan:
    """Generated tokens plus the per-position replacement mask."""

    tokens: Tuple[str, ...]
    replaced: Tuple[bool, ...]

    @property
    def replaced_count(self) -> int:
        return int(np.sum(self.replaced))


@dataclass(frozen=True)
class CriticPair:
    """One (query, span, label) training unit for the critic."""

    source_qid: str
    query: Tuple[str, ...]
    span: Tuple[str, ...]
    label: Label

    def __post_init__(self):
        if not self.query:
            raise DataError(f"pair {self.source_qid}: empty query")
        if not self.span:
            raise DataError(f"pair {self.source_qid}: empty span")

    def to_record(self) -> Dict[str, object]:
        return {
            "qid": self.source_qid,
            "query": list(self.query),
            "span": list(self.span),
            "label": int(self.label),
        }


class CriticPairRecord(BaseModel):
    """Schema of one line of the critic corpus file."""

    qid: str
    query: List[str] = Field(min_length=1)
    span: List[str] = Field(min_length=1)
    label: Literal[0, 1]

    def to_pair(self) -> CriticPair:
        return CriticPair(
            source_qid=self.qid,
            query=tuple(self.query),
            span=tuple(self.span),
            label=Label(self.label),
        )


@dataclass(frozen=True)
class CriticDataset:
    """Balanced genuine/adversarial pairs, two per source question."""

    pairs: Tuple[CriticPair, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[CriticPair]:
        return iter(self.pairs)

    @property
    def n_genuine(self) -> int:
        return sum(1 for p in self.pairs if p.label == Label.GENUINE)

    @property
    def n_adversarial(self) -> int:
        return sum(1 for p in self.pairs if p.label == Label.ADVERSARIAL)

    def class_counts(self) -> Dict[str, int]:
        return {"genuine": self.n_genuine, "adversarial": self.n_adversarial}

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.build(list(p.query) + list(p.span) for p in self.pairs)

    def split(self, holdout_fraction: float, seed: int) -> Tuple["CriticDataset", "CriticDataset"]:
        """Deterministic train/held-out split; both pairs of a question stay together."""
        qids = list(dict.fromkeys(p.source_qid for p in self.pairs))
        n_holdout = int(round(len(qids) * holdout_fraction))
        if holdout_fraction > 0 and len(qids) > 1:
            n_holdout = min(max(n_holdout, 1), len(qids) - 1)
        else:
            n_holdout = 0
        order = make_rng(seed).permutation(len(qids))
        held = {qids[i] for i in order[:n_holdout]}
        train = tuple(p for p in self.pairs if p.source_qid not in held)
        holdout = tuple(p for p in self.pairs if p.source_qid in held)
        return CriticDataset(train), CriticDataset(holdout)


def example_rng(seed: int, qid: str) -> np.random.Generator:
    """Per-example PCG64 substream keyed by (seed, sha256(qid))."""
    digest = hashlib.sha256(qid.encode("utf-8")).digest()
    words = np.frombuffer(digest, dtype="<u4").tolist()
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *words])))


def sample_replacements(
    gold_span: Sequence[str],
    question: Sequence[str],
    cfg: GenConfig,
    rng: np.random.Generator,
) -> NegativeSpan:
    """Replace each eligible position independently with a uniform question token.

    A position counts as replaced even when the sampled token equals the
    original one.
    """
    if not gold_span:
        raise GenerationError("empty golden span")
    if not question:
        raise GenerationError("empty question: no replacement source")

    n = len(gold_span)
    replaced = rng.random(n) < cfg.replacement_prob
    picks = rng.integers(0, len(question), size=n)
    if cfg.scope == Scope.NON_STOP_WORDS:
        replaced &= np.array([not is_stop_word(t) for t in gold_span], dtype=bool)

    tokens = tuple(
        question[picks[i]] if replaced[i] else gold_span[i] for i in range(n)
    )
    return NegativeSpan(tokens=tokens, replaced=tuple(bool(r) for r in replaced))


def generate_negative_span(
    gold_span: Sequence[str],
    question: Sequence[str],
    cfg: GenConfig,
    rng: np.random.Generator,
) -> List[str]:
    return list(sample_replacements(gold_span, question, cfg, rng).tokens)


def build_query(passage_tokens: Sequence[str], start: int, window: int) -> Tuple[str, ...]:
    """BOS followed by at most ``window`` passage tokens ending just before ``start``."""
    prefix = passage_tokens[max(0, start - window) : start]
    return (Vocabulary.BOS, *prefix)


def build_critic_pairs(
    example: QAExample, cfg: GenConfig, rng: np.random.Generator
) -> Tuple[CriticPair, CriticPair]:
    start, end = example.gold_span
    passage = example.passage.tokens
    gold = passage[start : end + 1]
    query = build_query(passage, start, cfg.query_window)
    negative = generate_negative_span(gold, example.question.tokens, cfg, rng)
    genuine = CriticPair(example.id, query, tuple(gold), Label.GENUINE)
    adversarial = CriticPair(example.id, query, tuple(negative), Label.ADVERSARIAL)
    return genuine, adversarial


def build_critic_dataset(dataset: Dataset, cfg: GenConfig, workers: int = 1) -> CriticDataset:
    """Two pairs per example, in dataset order."""
    if not len(dataset):
        raise GenerationError("cannot build a critic corpus from an empty dataset")

    def _pairs_for(example: QAExample) -> Tuple[CriticPair, CriticPair]:
        return build_critic_pairs(example, cfg, example_rng(cfg.seed, example.id))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_pairs_for, dataset.examples))
    else:
        results = [_pairs_for(ex) for ex in dataset.examples]

    pairs = tuple(p for both in results for p in both)
    logger.info(
        "built %d critic pairs from %d examples (p=%.2f, scope=%s)",
        len(pairs), len(dataset), cfg.replacement_prob, cfg.scope.value,
    )
    return CriticDataset(pairs)


def write_critic_pairs(path: Union[str, Path], corpus: CriticDataset) -> Path:
    """JSON Lines, UTF-8, one pair per line."""
    lines = [json.dumps(p.to_record(), ensure_ascii=False) for p in corpus]
    return atomic_write_lines(path, lines)


def read_critic_pairs(path: Union[str, Path]) -> CriticDataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataLoadError(f"cannot read {path}: {e}") from e

    pairs: List[CriticPair] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            pairs.append(CriticPairRecord.model_validate(json.loads(line)).to_pair())
        except (json.JSONDecodeError, ValidationError, DataError) as e:
            raise DataLoadError(f"{path}:{lineno}: malformed pair: {e}") from e
    if not pairs:
        raise DataLoadError(f"{path}: no critic pairs")
    return CriticDataset(tuple(pairs))
