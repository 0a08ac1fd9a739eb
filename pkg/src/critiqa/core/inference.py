"""
Critic-gated span selection for critiqa

The actor proposes the best (start, end) pair by joint argmax, the critic scores
the proposal against the passage text that precedes it, and proposals below the
threshold are excluded before the argmax is taken again. When exclusions leave
nothing to choose from, the first proposal is returned (fail-open).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from ..errors import ConfigError, ShapeError
from .advgen import build_query
from .models import PairScorer, SpanScorer
from .textio import QAExample

logger = logging.getLogger("critiqa.inference")

DEFAULT_QUERY_WINDOW = 64


class RejectionMode(Enum):
    """What a rejection removes before the next argmax."""

    ENDPOINTS = "endpoints"
    SPAN = "span"


@dataclass
class InferenceConfig:
    threshold: float = 0.3
    rejection_mode: RejectionMode = RejectionMode.ENDPOINTS
    reject_budget: int = 1
    max_span_len: int = 30

    def __post_init__(self):
        try:
            self.rejection_mode = RejectionMode(self.rejection_mode)
        except ValueError:
            raise ConfigError(f"unknown rejection_mode {self.rejection_mode!r}") from None
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.reject_budget < 0:
            raise ConfigError(f"reject_budget must be >= 0, got {self.reject_budget}")
        if self.max_span_len < 1:
            raise ConfigError(f"max_span_len must be >= 1, got {self.max_span_len}")


@dataclass
class ExclusionSet:
    excluded_starts: Set[int] = field(default_factory=set)
    excluded_ends: Set[int] = field(default_factory=set)
    excluded_positions: Set[int] = field(default_factory=set)

    def record(self, start: int, end: int, mode: RejectionMode) -> None:
        if mode == RejectionMode.SPAN:
            self.excluded_positions.update(range(start, end + 1))
        else:
            self.excluded_starts.add(start)
            self.excluded_ends.add(end)


@dataclass(frozen=True)
class SpanPrediction:
    """Selected span plus the first proposal it replaced, if any."""

    start: int
    end: int
    joint_score: float
    critic_prob: float
    rejections_used: int
    fell_back: bool
    first_start: int
    first_end: int
    first_score: float

    @property
    def rejected(self) -> bool:
        return self.rejections_used > 0


def _in_range(indices: Set[int], n: int) -> List[int]:
    return [i for i in indices if 0 <= i < n]


def select_span(
    start_logits: Union[np.ndarray, Sequence[float]],
    end_logits: Union[np.ndarray, Sequence[float]],
    exclusions: Optional[ExclusionSet] = None,
    max_span_len: int = 30,
) -> Optional[Tuple[int, int, float]]:
    """Joint argmax of start[s] + end[e] over admissible pairs, or None.

    Admissible: s <= e, e - s < max_span_len, s and e not excluded and, for
    excluded positions, no overlap with [s, e]. Ties go to the smallest s,
    then the smallest e.
    """
    starts = np.asarray(start_logits, dtype=np.float64)
    ends = np.asarray(end_logits, dtype=np.float64)
    if starts.ndim != 1 or starts.shape != ends.shape:
        raise ShapeError(f"select_span: logits lengths differ: {starts.shape} and {ends.shape}")
    n = starts.shape[0]
    if n == 0:
        return None
    exclusions = exclusions or ExclusionSet()

    s_idx, e_idx = np.indices((n, n))
    valid = (e_idx >= s_idx) & (e_idx - s_idx < max_span_len)
    valid[_in_range(exclusions.excluded_starts, n), :] = False
    valid[:, _in_range(exclusions.excluded_ends, n)] = False
    if exclusions.excluded_positions:
        blocked = np.zeros(n, dtype=np.int64)
        blocked[_in_range(exclusions.excluded_positions, n)] = 1
        covered = np.concatenate([[0], np.cumsum(blocked)])
        valid &= (covered[e_idx + 1] - covered[s_idx]) == 0
    if not valid.any():
        return None

    scores = np.where(valid, starts[:, None] + ends[None, :], -np.inf)
    best = int(np.argmax(scores))
    s, e = divmod(best, n)
    return s, e, float(scores[s, e])


def _query_window(critic: PairScorer) -> int:
    config = getattr(critic, "config", None)
    return getattr(config, "query_window", DEFAULT_QUERY_WINDOW)


def predict_with_critic(
    actor: SpanScorer,
    critic: PairScorer,
    example: QAExample,
    cfg: InferenceConfig,
) -> SpanPrediction:
    start_logits, end_logits = actor.logits(example)
    first = select_span(start_logits, end_logits, None, cfg.max_span_len)
    if first is None:
        raise ShapeError(f"example {example.id}: empty passage")
    passage = example.passage.tokens
    window = _query_window(critic)

    exclusions = ExclusionSet()
    current = first
    first_prob: Optional[float] = None
    rejections = 0
    while True:
        s, e, score = current
        prob = critic.probability(build_query(passage, s, window), passage[s : e + 1])
        if first_prob is None:
            first_prob = prob
        if prob >= cfg.threshold or rejections >= cfg.reject_budget:
            return SpanPrediction(s, e, score, prob, rejections, False, first[0], first[1], first[2])
        exclusions.record(s, e, cfg.rejection_mode)
        rejections += 1
        logger.debug("%s: rejected (%d, %d) p=%.3f", example.id, s, e, prob)
        following = select_span(start_logits, end_logits, exclusions, cfg.max_span_len)
        if following is None:
            return SpanPrediction(
                first[0], first[1], first[2], first_prob, rejections, True, first[0], first[1], first[2]
            )
        current = following


def predict_baseline(actor: SpanScorer, example: QAExample, max_span_len: int = 30) -> SpanPrediction:
    start_logits, end_logits = actor.logits(example)
    chosen = select_span(start_logits, end_logits, None, max_span_len)
    if chosen is None:
        raise ShapeError(f"example {example.id}: empty passage")
    s, e, score = chosen
    return SpanPrediction(s, e, score, 1.0, 0, False, s, e, score)


def predict_many(
    actor: SpanScorer,
    critic: Optional[PairScorer],
    examples: Sequence[QAExample],
    cfg: InferenceConfig,
    workers: int = 1,
) -> List[SpanPrediction]:
    """Predictions in input order; the baseline path when ``critic`` is None."""

    def _predict(example: QAExample) -> SpanPrediction:
        if critic is None:
            return predict_baseline(actor, example, cfg.max_span_len)
        return predict_with_critic(actor, critic, example, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_predict, examples))
    return [_predict(ex) for ex in examples]
