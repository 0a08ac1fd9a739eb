"""
Training loops for critiqa

The critic is trained first on the generated pair corpus. The actor is then
trained with the frozen critic attached: each example's proposed span is scored
by the critic and the critic's binary cross-entropy enters the actor loss,
either as an additive term or as a per-example weight on the span
cross-entropy.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import reduce
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, DataError, FrozenCriticError
from . import ndmath as nd
from .advgen import CriticDataset, Label, build_query
from .evaluation import critic_probabilities, f1_em
from .inference import DEFAULT_QUERY_WINDOW, select_span
from .models import ActorModel, ActorOutput, CriticModel, PairScorer, actor_forward, critic_forward
from .ndmath import OptimizerState, Tensor, clip_grad_norm, make_rng, optimizer_step
from .run_logger import MetricsLogger
from .textio import Dataset, QAExample, span_text

logger = logging.getLogger("critiqa.training")

ACCURACY_THRESHOLD = 0.5


class LossMode(Enum):
    """How the critic's confidence enters the actor loss."""

    ADDITIVE = "additive"
    REWEIGHT = "reweight"


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    loss_mode: LossMode = LossMode.REWEIGHT
    bce_cap: float = 5.0
    holdout_fraction: float = 0.1
    clip_norm: float = 5.0
    max_span_len: int = 30
    log_every: int = 0  # batches between progress lines; 0 disables them

    def __post_init__(self):
        try:
            self.loss_mode = LossMode(self.loss_mode)
        except ValueError:
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}") from None
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.bce_cap <= 0:
            raise ConfigError(f"bce_cap must be > 0, got {self.bce_cap}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError(f"holdout_fraction must be in [0, 1), got {self.holdout_fraction}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.max_span_len < 1:
            raise ConfigError(f"max_span_len must be >= 1, got {self.max_span_len}")
        if self.log_every < 0:
            raise ConfigError(f"log_every must be >= 0, got {self.log_every}")


@dataclass(frozen=True)
class LossBreakdown:
    ce_start: float
    ce_end: float
    ce_span: float
    bce: float
    combined: float


@dataclass
class CriticEpochRecord:
    epoch: int
    bce: float
    train_accuracy: float
    heldout_accuracy: float

    def to_log(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "bce": self.bce,
            "critic_acc": self.heldout_accuracy,
            "train_acc": self.train_accuracy,
        }


@dataclass
class ActorEpochRecord:
    epoch: int
    ce_span: float
    bce: float
    combined: float
    em: float
    f1: float

    def to_log(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class CriticTrainResult:
    critic: CriticModel
    trace: List[CriticEpochRecord] = field(default_factory=list)


@dataclass
class ActorTrainResult:
    actor: ActorModel
    trace: List[ActorEpochRecord] = field(default_factory=list)


@dataclass
class ActorStep:
    """One example's loss graph plus what the critic saw."""

    loss: Tensor
    breakdown: LossBreakdown
    proposal: Tuple[int, int]
    p_genuine: float


# Losses


def genuine_bce(p_genuine: float, bce_cap: float) -> float:
    """-log p(genuine), clamped like binary_cross_entropy and capped."""
    p = min(max(p_genuine, nd.BCE_EPSILON), 1.0 - nd.BCE_EPSILON)
    return min(-math.log(p), bce_cap)


def _combine(ce_span, bce: float, mode: LossMode):
    if mode == LossMode.ADDITIVE:
        return ce_span * 0.5 + 0.5 * bce
    return ce_span * (1.0 + bce)


def combine_terms(
    ce_start: float, ce_end: float, p_genuine: float, mode: LossMode, bce_cap: float = 5.0
) -> LossBreakdown:
    ce_span = (ce_start + ce_end) / 2
    bce = genuine_bce(p_genuine, bce_cap)
    return LossBreakdown(ce_start, ce_end, ce_span, bce, _combine(ce_span, bce, LossMode(mode)))


def span_cross_entropy(actor_out: ActorOutput, gold: Tuple[int, int]) -> Tuple[Tensor, Tensor, Tensor]:
    """(ce_start, ce_end, their mean) as graph nodes."""
    ce_start = nd.cross_entropy(actor_out.start_logits, gold[0])
    ce_end = nd.cross_entropy(actor_out.end_logits, gold[1])
    return ce_start, ce_end, (ce_start + ce_end) * 0.5


def combined_loss_graph(
    actor_out: ActorOutput, gold: Tuple[int, int], p_genuine: float, mode: LossMode, bce_cap: float
) -> Tuple[Tensor, LossBreakdown]:
    """The differentiable combined loss; the critic term is a constant."""
    ce_start, ce_end, ce_span = span_cross_entropy(actor_out, gold)
    breakdown = combine_terms(ce_start.item(), ce_end.item(), p_genuine, mode, bce_cap)
    return _combine(ce_span, breakdown.bce, LossMode(mode)), breakdown


def combined_loss(
    actor_out: ActorOutput, gold: Tuple[int, int], p_genuine: float, mode: LossMode, bce_cap: float = 5.0
) -> LossBreakdown:
    return combined_loss_graph(actor_out, gold, p_genuine, mode, bce_cap)[1]


def _query_window(critic: PairScorer) -> int:
    config = getattr(critic, "config", None)
    return getattr(config, "query_window", DEFAULT_QUERY_WINDOW)


def actor_loss_graph(
    actor: ActorModel, critic: PairScorer, example: QAExample, cfg: TrainConfig
) -> ActorStep:
    """Forward one example, let the critic judge the unconstrained proposal, build the loss."""
    question_ids, passage_ids = actor.encode(example)
    out = actor_forward(actor, question_ids, passage_ids)
    s, e, _ = select_span(
        out.start_logits.numpy(), out.end_logits.numpy(), None, cfg.max_span_len
    )
    passage = example.passage.tokens
    with nd.no_grad():
        p_genuine = critic.probability(build_query(passage, s, _query_window(critic)), passage[s : e + 1])
    loss, breakdown = combined_loss_graph(out, example.gold_span, p_genuine, cfg.loss_mode, cfg.bce_cap)
    return ActorStep(loss=loss, breakdown=breakdown, proposal=(s, e), p_genuine=p_genuine)


def _batch_mean(losses: Sequence[Tensor]) -> Tensor:
    return reduce(nd.add, losses) * (1.0 / len(losses))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for begin in range(0, n, batch_size):
        yield order[begin : begin + batch_size]


# Critic


def evaluate_critic(critic: PairScorer, corpus: CriticDataset, workers: int = 1) -> float:
    """Fraction of pairs where (p >= 0.5) agrees with the label."""
    if not len(corpus):
        raise DataError("evaluate_critic: empty corpus")
    probs = critic_probabilities(critic, corpus, workers=workers)
    correct = sum(
        1 for p, pair in zip(probs, corpus.pairs)
        if (p >= ACCURACY_THRESHOLD) == (pair.label == Label.GENUINE)
    )
    return correct / len(corpus)


def train_critic(
    critic: CriticModel,
    corpus: CriticDataset,
    cfg: TrainConfig,
    metrics: Optional[MetricsLogger] = None,
) -> CriticTrainResult:
    if not len(corpus):
        raise DataError("train_critic: empty critic corpus")
    train, heldout = corpus.split(cfg.holdout_fraction, cfg.seed)
    logger.info(
        "training critic on %d pairs (%d held out), %d parameters",
        len(train), len(heldout), critic.params.num_parameters(),
    )
    encoded = [
        (critic.vocab.encode(p.query), critic.vocab.encode(p.span), int(p.label)) for p in train
    ]
    rng = make_rng(cfg.seed)
    state = OptimizerState(learning_rate=cfg.learning_rate)
    result = CriticTrainResult(critic=critic)

    for epoch in range(1, cfg.epochs + 1):
        bce_sum = 0.0
        for step, batch in enumerate(_batches(len(encoded), cfg.batch_size, rng), start=1):
            losses = [
                nd.binary_cross_entropy(critic_forward(critic, encoded[i][0], encoded[i][1]), encoded[i][2])
                for i in batch
            ]
            bce_sum += math.fsum(loss.item() for loss in losses)
            nd.backward(_batch_mean(losses))
            clip_grad_norm(critic.params, cfg.clip_norm)
            optimizer_step(critic.params, state)
            if cfg.log_every and step % cfg.log_every == 0:
                logger.debug("critic epoch %d batch %d", epoch, step)

        train_acc = evaluate_critic(critic, train)
        heldout_acc = evaluate_critic(critic, heldout) if len(heldout) else train_acc
        record = CriticEpochRecord(epoch, bce_sum / len(encoded), train_acc, heldout_acc)
        result.trace.append(record)
        if metrics is not None:
            metrics.log(record.to_log())
    return result


# Actor


def train_actor(
    actor: ActorModel,
    critic: CriticModel,
    dataset: Dataset,
    cfg: TrainConfig,
    metrics: Optional[MetricsLogger] = None,
) -> ActorTrainResult:
    """Train the actor against a frozen critic; the critic must come out unchanged."""
    examples = list(dataset.examples)
    if not examples:
        raise DataError("train_actor: empty dataset")
    critic.freeze()
    digest_before = critic.params.digest()
    logger.info(
        "training actor on %d examples (%s loss), %d parameters",
        len(examples), cfg.loss_mode.value, actor.params.num_parameters(),
    )
    rng = make_rng(cfg.seed)
    state = OptimizerState(learning_rate=cfg.learning_rate)
    result = ActorTrainResult(actor=actor)

    for epoch in range(1, cfg.epochs + 1):
        ce_span, bce, combined, em, f1 = [], [], [], [], []
        for step, batch in enumerate(_batches(len(examples), cfg.batch_size, rng), start=1):
            steps = [actor_loss_graph(actor, critic, examples[i], cfg) for i in batch]
            nd.backward(_batch_mean([s.loss for s in steps]))
            clip_grad_norm(actor.params, cfg.clip_norm)
            optimizer_step(actor.params, state)

            for i, actor_step in zip(batch, steps):
                example = examples[i]
                text = span_text(example.passage, *actor_step.proposal)
                f1_value, em_value = f1_em(text, example.gold_answers)
                ce_span.append(actor_step.breakdown.ce_span)
                bce.append(actor_step.breakdown.bce)
                combined.append(actor_step.breakdown.combined)
                f1.append(f1_value)
                em.append(em_value)
            if cfg.log_every and step % cfg.log_every == 0:
                logger.debug("actor epoch %d batch %d", epoch, step)

        n = len(examples)
        record = ActorEpochRecord(
            epoch=epoch,
            ce_span=math.fsum(ce_span) / n,
            bce=math.fsum(bce) / n,
            combined=math.fsum(combined) / n,
            em=100.0 * math.fsum(em) / n,
            f1=100.0 * math.fsum(f1) / n,
        )
        result.trace.append(record)
        if metrics is not None:
            metrics.log(record.to_log())

    if critic.params.digest() != digest_before:
        raise FrozenCriticError("critic parameters changed during actor training")
    return result
