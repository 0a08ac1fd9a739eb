"""
Evaluation for critiqa

SQuAD v1.1 answer normalisation and token-bag F1 / exact match, QA metric
reports over actor (and optionally critic) predictions, critic probability
histograms, and their JSON / rich renderings.
"""

import json
import logging
import math
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import regex as re
from pydantic import BaseModel, Field
from rich.table import Table

from ..errors import ConfigError, DataError
from .advgen import CriticDataset, Label
from .inference import InferenceConfig, SpanPrediction, predict_many
from .models import PairScorer, SpanScorer
from .run_manifest import atomic_write_lines, atomic_write_text
from .textio import Dataset, QAExample, span_text

logger = logging.getLogger("critiqa.evaluation")

_PUNCTUATION = frozenset(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCTUATION)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _f1_single(prediction: str, gold: str) -> float:
    pred_tokens = normalize_answer(prediction).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return (2 * precision * recall) / (precision + recall)


def f1_em(prediction: str, golds: Sequence[str]) -> Tuple[float, int]:
    """Best F1 and exact match over all gold answers."""
    if not golds:
        raise DataError("f1_em needs at least one gold answer")
    normalized = normalize_answer(prediction)
    f1 = max(_f1_single(prediction, gold) for gold in golds)
    em = int(any(normalized == normalize_answer(gold) for gold in golds))
    return f1, em


class PredictionRecord(BaseModel):
    id: str
    start: int
    end: int
    text: str
    critic_prob: float
    rejections_used: int
    fell_back: bool
    f1: float
    em: int
    first_start: int
    first_end: int
    first_f1: float


class MetricsReport(BaseModel):
    """QA metrics; f1 and em are percentages."""

    f1: float
    em: float
    n_examples: int
    rejection_rate: float
    rejected_then_improved_rate: float
    with_critic: bool
    threshold: Optional[float] = None
    records: List[PredictionRecord] = Field(default_factory=list, exclude=True)


class HistogramReport(BaseModel):
    """Per-class counts of p(genuine) over equal-width bins on [0, 1]."""

    bin_edges: List[float]
    genuine: List[int]
    adversarial: List[int]
    n_genuine: int
    n_adversarial: int


def _record_for(example: QAExample, prediction: SpanPrediction) -> PredictionRecord:
    text = span_text(example.passage, prediction.start, prediction.end)
    f1, em = f1_em(text, example.gold_answers)
    first_text = span_text(example.passage, prediction.first_start, prediction.first_end)
    first_f1, _ = f1_em(first_text, example.gold_answers)
    return PredictionRecord(
        id=example.id,
        start=prediction.start,
        end=prediction.end,
        text=text,
        critic_prob=prediction.critic_prob,
        rejections_used=prediction.rejections_used,
        fell_back=prediction.fell_back,
        f1=f1,
        em=em,
        first_start=prediction.first_start,
        first_end=prediction.first_end,
        first_f1=first_f1,
    )


def evaluate_qa(
    actor: SpanScorer,
    critic: Optional[PairScorer],
    dataset: Union[Dataset, Sequence[QAExample]],
    infer_cfg: InferenceConfig,
    workers: int = 1,
) -> MetricsReport:
    """Score predictions against gold answers; baseline when ``critic`` is None."""
    examples = list(dataset.examples if isinstance(dataset, Dataset) else dataset)
    if not examples:
        raise DataError("evaluate_qa: no examples")
    predictions = predict_many(actor, critic, examples, infer_cfg, workers=workers)
    records = [_record_for(ex, pred) for ex, pred in zip(examples, predictions)]

    n = len(records)
    rejected = [r for r in records if r.rejections_used > 0]
    improved = sum(1 for r in rejected if r.f1 > r.first_f1)
    report = MetricsReport(
        f1=100.0 * math.fsum(r.f1 for r in records) / n,
        em=100.0 * math.fsum(r.em for r in records) / n,
        n_examples=n,
        rejection_rate=len(rejected) / n,
        rejected_then_improved_rate=(improved / len(rejected)) if rejected else 0.0,
        with_critic=critic is not None,
        threshold=infer_cfg.threshold if critic is not None else None,
        records=records,
    )
    logger.info(
        "evaluated %d examples: f1=%.2f em=%.2f rejection_rate=%.3f",
        n, report.f1, report.em, report.rejection_rate,
    )
    return report


def critic_probabilities(critic: PairScorer, corpus: CriticDataset, workers: int = 1) -> List[float]:
    """p(genuine) for every pair, in corpus order."""

    def _score(pair) -> float:
        return critic.probability(pair.query, pair.span)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_score, corpus.pairs))
    return [_score(p) for p in corpus.pairs]


def probability_histogram(
    probabilities: Iterable[float], labels: Iterable[int], n_bins: int
) -> HistogramReport:
    if n_bins < 2:
        raise ConfigError(f"n_bins must be >= 2, got {n_bins}")
    probs = np.asarray(list(probabilities), dtype=np.float64)
    labs = np.asarray(list(labels), dtype=np.int64)
    if probs.shape != labs.shape:
        raise DataError(f"{probs.size} probabilities for {labs.size} labels")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    clipped = np.clip(probs, 0.0, 1.0)
    genuine, _ = np.histogram(clipped[labs == int(Label.GENUINE)], bins=edges)
    adversarial, _ = np.histogram(clipped[labs == int(Label.ADVERSARIAL)], bins=edges)
    return HistogramReport(
        bin_edges=edges.tolist(),
        genuine=genuine.tolist(),
        adversarial=adversarial.tolist(),
        n_genuine=int(np.sum(labs == int(Label.GENUINE))),
        n_adversarial=int(np.sum(labs == int(Label.ADVERSARIAL))),
    )


def critic_probability_histogram(
    critic: PairScorer, corpus: CriticDataset, n_bins: int = 10, workers: int = 1
) -> HistogramReport:
    probs = critic_probabilities(critic, corpus, workers=workers)
    return probability_histogram(probs, [int(p.label) for p in corpus.pairs], n_bins)


def records_path_for(report_path: Union[str, Path]) -> Path:
    return Path(report_path).with_suffix(".records.jsonl")


def write_report(path: Union[str, Path], report: Union[MetricsReport, HistogramReport]) -> List[Path]:
    """Pretty JSON report; metric reports also get per-example JSON Lines beside them."""
    path = Path(path)
    written = [atomic_write_text(path, json.dumps(report.model_dump(), indent=2) + "\n")]
    if isinstance(report, MetricsReport):
        lines = [json.dumps(r.model_dump(), ensure_ascii=False) for r in report.records]
        written.append(atomic_write_lines(records_path_for(path), lines))
    return written


def render_metrics(report: MetricsReport) -> Table:
    table = Table(title="QA metrics")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", justify="right")
    table.add_row("examples", str(report.n_examples))
    table.add_row("F1", f"{report.f1:.2f}")
    table.add_row("EM", f"{report.em:.2f}")
    if report.with_critic:
        table.add_row("threshold", f"{report.threshold:.2f}")
        table.add_row("rejection rate", f"{report.rejection_rate:.3f}")
        table.add_row("improved after rejection", f"{report.rejected_then_improved_rate:.3f}")
    return table
