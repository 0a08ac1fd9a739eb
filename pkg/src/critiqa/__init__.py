"""
critiqa - critic-gated extractive question answering

Generates adversarial answer spans, trains an encoder-decoder critic to tell
them from genuine ones, trains a span-predicting actor with the frozen critic
attached, and lets the critic reject low-confidence proposals at inference.
Everything runs on a small numpy reverse-mode autodiff engine.
"""

__version__ = "0.1.0"
__license__ = "Apache-2.0"

from .config import AppConfig, load_config, merge_config, save_config
from .core.advgen import (
    CriticDataset,
    CriticPair,
    GenConfig,
    Scope,
    build_critic_dataset,
    build_critic_pairs,
    generate_negative_span,
)
from .core.evaluation import (
    HistogramReport,
    MetricsReport,
    critic_probability_histogram,
    evaluate_qa,
    f1_em,
    normalize_answer,
)
from .core.inference import (
    InferenceConfig,
    RejectionMode,
    SpanPrediction,
    predict_baseline,
    predict_with_critic,
    select_span,
)
from .core.models import ActorConfig, ActorModel, CriticConfig, CriticModel
from .core.textio import Dataset, QAExample, Vocabulary, load_squad, tokenize
from .core.training import LossMode, TrainConfig, combined_loss, train_actor, train_critic
from .errors import CritiqaError

__all__ = [
    # Version info
    "__version__",
    "__license__",
    # Configuration
    "AppConfig",
    "load_config",
    "merge_config",
    "save_config",
    # Data
    "Dataset",
    "QAExample",
    "Vocabulary",
    "load_squad",
    "tokenize",
    # Adversarial generation
    "CriticDataset",
    "CriticPair",
    "GenConfig",
    "Scope",
    "build_critic_dataset",
    "build_critic_pairs",
    "generate_negative_span",
    # Models and training
    "ActorConfig",
    "ActorModel",
    "CriticConfig",
    "CriticModel",
    "LossMode",
    "TrainConfig",
    "combined_loss",
    "train_actor",
    "train_critic",
    # Inference and evaluation
    "InferenceConfig",
    "RejectionMode",
    "SpanPrediction",
    "predict_baseline",
    "predict_with_critic",
    "select_span",
    "HistogramReport",
    "MetricsReport",
    "critic_probability_histogram",
    "evaluate_qa",
    "f1_em",
    "normalize_answer",
    # Errors
    "CritiqaError",
]
