"""
Text I/O for critiqa

Tokenization, stop-word detection, vocabulary building, SQuAD-format ingestion
and character-offset-to-token-span alignment.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import regex as re
from pydantic import BaseModel, Field, ValidationError

from ..errors import AlignmentError, DataLoadError

logger = logging.getLogger("critiqa.textio")

# One token per punctuation/symbol character, otherwise maximal runs of
# non-space, non-punctuation characters.
_TOKEN_PATTERN = re.compile(r"[\p{P}\p{S}]|[^\s\p{P}\p{S}]+")

# Fixed English stop-word list: articles, copulas and auxiliaries, prepositions,
# conjunctions, pronouns and question words. Punctuation is never a stop word.
STOP_WORDS = frozenset(
    {
        # articles
        "a", "an", "the",
        # copulas / auxiliaries
        "is", "are", "was", "were", "be", "been", "being", "am",
        "do", "does", "did", "has", "have", "had",
        # prepositions
        "of", "in", "on", "at", "to", "from", "by", "for", "with",
        "about", "as", "into", "than",
        # conjunctions
        "and", "or", "but", "if", "so",
        # pronouns / determiners
        "it", "its", "he", "she", "they", "them", "his", "her", "their",
        "this", "that", "these", "those", "which",
        # question words
        "what", "who", "whom", "whose", "when", "where", "why", "how",
    }
)


@dataclass(frozen=True)
class TokenizedText:
    """Lowercase tokens with character offsets into the original text."""

    text: str
    tokens: Tuple[str, ...]
    offsets: Tuple[Tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.tokens)


class Vocabulary:
    """Token to id map with PAD, BOS and UNK at fixed ids 0, 1, 2."""

    PAD = "<pad>"
    BOS = "<bos>"
    UNK = "<unk>"
    SPECIALS = (PAD, BOS, UNK)
    PAD_ID, BOS_ID, UNK_ID = 0, 1, 2

    def __init__(self, tokens: Sequence[str] = ()):
        self._id_to_token: List[str] = list(self.SPECIALS)
        self._token_to_id: Dict[str, int] = {t: i for i, t in enumerate(self.SPECIALS)}
        for token in tokens:
            if token not in self._token_to_id:
                self._token_to_id[token] = len(self._id_to_token)
                self._id_to_token.append(token)

    @classmethod
    def build(cls, token_streams: Iterable[Iterable[str]]) -> "Vocabulary":
        """Build a vocabulary ordered by descending frequency, then lexicographically."""
        counts: Counter = Counter()
        for stream in token_streams:
            counts.update(stream)
        for special in cls.SPECIALS:
            counts.pop(special, None)
        ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        return cls([token for token, _ in ordered])

    @classmethod
    def from_list(cls, id_to_token: Sequence[str]) -> "Vocabulary":
        """Rebuild from a full id-ordered token list (specials included)."""
        if tuple(id_to_token[: len(cls.SPECIALS)]) != cls.SPECIALS:
            raise DataLoadError("vocabulary list must start with <pad>, <bos>, <unk>")
        return cls(id_to_token[len(cls.SPECIALS):])

    def to_list(self) -> List[str]:
        return list(self._id_to_token)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, self.UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.id_of(token) for token in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self._id_to_token[i] for i in ids]

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._id_to_token == other._id_to_token


@dataclass(frozen=True)
class QAExample:
    """One question/passage pair with its golden token span."""

    id: str
    question: TokenizedText
    passage: TokenizedText
    gold_span: Tuple[int, int]
    gold_answers: Tuple[str, ...]


@dataclass(frozen=True)
class Dataset:
    """Loaded examples plus the vocabulary built over them."""

    examples: Tuple[QAExample, ...]
    vocab: Vocabulary
    skipped: int = 0
    duplicates: int = 0
    source: Optional[str] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


# SQuAD v1.1 schema (only the fields we read)
class SquadAnswer(BaseModel):
    text: str
    answer_start: int


class SquadQA(BaseModel):
    id: str
    question: str
    answers: List[SquadAnswer] = Field(default_factory=list)


class SquadParagraph(BaseModel):
    context: str
    qas: List[SquadQA]


class SquadArticle(BaseModel):
    title: Optional[str] = None
    paragraphs: List[SquadParagraph]


class SquadFile(BaseModel):
    version: Optional[str] = None
    data: List[SquadArticle]


def tokenize(text: str) -> TokenizedText:
    """Lowercase, split on whitespace and detach punctuation characters."""
    tokens: List[str] = []
    offsets: List[Tuple[int, int]] = []
    for match in _TOKEN_PATTERN.finditer(text):
        tokens.append(match.group().lower())
        offsets.append(match.span())
    return TokenizedText(text=text, tokens=tuple(tokens), offsets=tuple(offsets))


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def span_text(passage: TokenizedText, start: int, end: int) -> str:
    """Original characters covered by tokens start..end inclusive."""
    return passage.text[passage.offsets[start][0] : passage.offsets[end][1]]


def is_stop_word(token: str) -> bool:
    return token in STOP_WORDS


def align_answer(passage: TokenizedText, answer: str, char_start: int) -> Tuple[int, int]:
    """Map a SQuAD character offset to an inclusive token span.

    A start offset inside a token snaps to the containing token; an offset on
    whitespace snaps forward to the first token inside the answer range.
    """
    from .evaluation import normalize_answer

    if char_start < 0 or char_start >= len(passage.text) or not passage.tokens:
        raise AlignmentError(
            f"answer offset {char_start} outside passage of {len(passage.text)} chars"
        )
    char_end = char_start + max(len(answer), 1)

    start = None
    for index, (tok_start, tok_end) in enumerate(passage.offsets):
        if tok_start <= char_start < tok_end:
            start = index
            break
        if tok_start > char_start:
            if tok_start < char_end:
                start = index
            break
    if start is None:
        raise AlignmentError(f"no token at or after offset {char_start}")

    end = start
    for index in range(start, len(passage.tokens)):
        tok_start, _ = passage.offsets[index]
        if tok_start >= char_end:
            break
        end = index

    covered = normalize_answer(span_text(passage, start, end))
    if normalize_answer(answer) not in covered:
        raise AlignmentError(
            f"answer {answer!r} not found in aligned span {span_text(passage, start, end)!r}"
        )
    return start, end


def build_dataset(examples: Sequence[QAExample], source: Optional[str] = None) -> Dataset:
    """Build a Dataset and its vocabulary from in-memory examples."""
    vocab = Vocabulary.build(
        list(ex.question.tokens) + list(ex.passage.tokens) for ex in examples
    )
    return Dataset(examples=tuple(examples), vocab=vocab, source=source)


def parse_squad(payload: Union[dict, SquadFile], source: str = "<memory>") -> Dataset:
    """Turn a SQuAD-v1.1 object into a Dataset, skipping unalignable answers."""
    try:
        squad = payload if isinstance(payload, SquadFile) else SquadFile.model_validate(payload)
    except ValidationError as e:
        raise DataLoadError(f"{source}: not SQuAD v1.1 schema: {e}") from e

    examples: List[QAExample] = []
    seen: set = set()
    skipped = 0
    duplicates = 0
    for article in squad.data:
        for paragraph in article.paragraphs:
            passage = tokenize(paragraph.context)
            for qa in paragraph.qas:
                if qa.id in seen:
                    duplicates += 1
                    logger.warning("duplicate question id %s skipped", qa.id)
                    continue
                seen.add(qa.id)
                question = tokenize(qa.question)
                span = None
                for answer in qa.answers:
                    try:
                        span = align_answer(passage, answer.text, answer.answer_start)
                        break
                    except AlignmentError as e:
                        logger.debug("qa %s: %s", qa.id, e)
                if span is None or not question.tokens:
                    skipped += 1
                    logger.warning("qa %s skipped: no alignable answer", qa.id)
                    continue
                examples.append(
                    QAExample(
                        id=qa.id,
                        question=question,
                        passage=passage,
                        gold_span=span,
                        gold_answers=tuple(a.text for a in qa.answers),
                    )
                )

    if not examples:
        raise DataLoadError(f"{source}: zero alignable examples")
    dataset = build_dataset(examples, source=source)
    if skipped or duplicates:
        logger.warning(
            "%s: loaded %d examples, skipped %d unalignable, %d duplicate ids",
            source, len(examples), skipped, duplicates,
        )
    return Dataset(
        examples=dataset.examples,
        vocab=dataset.vocab,
        skipped=skipped,
        duplicates=duplicates,
        source=source,
    )


def load_squad(path: Union[str, Path]) -> Dataset:
    """Load a SQuAD-v1.1-schema JSON file (adversarial distractor-sentence variants included)."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataLoadError(f"cannot read {path}: {e}") from e
    return parse_squad(payload, source=str(path))
