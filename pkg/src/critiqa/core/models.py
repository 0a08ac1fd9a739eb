"""
Actor and critic networks for critiqa

The actor encodes question and passage with bidirectional LSTMs, mean-pools the
question into a summary vector and scores every passage position bilinearly
against it to produce start and end logits.

The critic reads a (query, span) pair: an encoder LSTM over the query seeds a
decoder LSTM over the span, decoder states attend over encoder states (Luong
general scoring), the attended states are mean-pooled and a three-layer dense
head emits the probability that the span genuinely continues the query.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from typing_extensions import Protocol, runtime_checkable

from ..errors import CheckpointError, ConfigError, DataLoadError, ShapeError
from . import ndmath as nd
from .checkpoint import load_checkpoint, save_checkpoint
from .ndmath import ParamStore, Tensor, make_rng, uniform_init
from .textio import QAExample, Vocabulary

logger = logging.getLogger("critiqa.models")


@dataclass
class ActorConfig:
    embed_dim: int = 64
    hidden_dim: int = 64
    init_scale: float = 0.08

    def __post_init__(self):
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("actor embed_dim and hidden_dim must be >= 1")
        if self.init_scale <= 0:
            raise ConfigError(f"init_scale must be > 0, got {self.init_scale}")


@dataclass
class CriticConfig:
    embed_dim: int = 64
    hidden_dim: int = 64
    head_dims: Tuple[int, ...] = (128, 64)
    init_scale: float = 0.08
    query_window: int = 64

    def __post_init__(self):
        self.head_dims = tuple(int(d) for d in self.head_dims)
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("critic embed_dim and hidden_dim must be >= 1")
        if len(self.head_dims) != 2 or min(self.head_dims) < 1:
            raise ConfigError(f"head_dims must be two positive widths, got {self.head_dims}")
        if self.init_scale <= 0:
            raise ConfigError(f"init_scale must be > 0, got {self.init_scale}")
        if self.query_window < 1:
            raise ConfigError(f"query_window must be >= 1, got {self.query_window}")


@dataclass
class ActorOutput:
    """Per-position start and end logits (graph nodes)."""

    start_logits: Tensor
    end_logits: Tensor

    def __post_init__(self):
        if self.start_logits.shape != self.end_logits.shape:
            raise ShapeError(
                f"start/end logits differ: {self.start_logits.shape} and {self.end_logits.shape}"
            )


@runtime_checkable
class SpanScorer(Protocol):
    """Anything that scores passage positions as answer starts and ends."""

    def logits(self, example: QAExample) -> Tuple[np.ndarray, np.ndarray]: ...


@runtime_checkable
class PairScorer(Protocol):
    """Anything that returns p(genuine) for a (query, span) token pair."""

    def probability(self, query_tokens: Sequence[str], span_tokens: Sequence[str]) -> float: ...


# Layers


def _lstm_shapes(prefix: str, input_dim: int, hidden_dim: int) -> Dict[str, Tuple[int, ...]]:
    return {
        f"{prefix}.W_x": (input_dim, 4 * hidden_dim),
        f"{prefix}.W_h": (hidden_dim, 4 * hidden_dim),
        f"{prefix}.b": (4 * hidden_dim,),
    }


def lstm_encode(
    params: ParamStore,
    prefix: str,
    inputs: Tensor,
    initial_state: Optional[Tuple[Tensor, Tensor]] = None,
    reverse: bool = False,
) -> Tuple[Tensor, Tuple[Tensor, Tensor]]:
    """Run one LSTM over a T x d input matrix.

    Gates are laid out [input, forget, output | candidate] in the 4h columns.
    Returns the T x h state matrix (in input order, also when ``reverse``) and
    the final (h, c).
    """
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ShapeError(f"lstm_encode({prefix}): expected a non-empty T x d input, got {inputs.shape}")
    W_x, W_h, b = params[f"{prefix}.W_x"], params[f"{prefix}.W_h"], params[f"{prefix}.b"]
    hidden = W_h.shape[0]
    steps = inputs.shape[0]

    projected = inputs @ W_x + b
    if initial_state is None:
        h = Tensor(np.zeros(hidden))
        c = Tensor(np.zeros(hidden))
    else:
        h, c = initial_state
        if h.shape != (hidden,) or c.shape != (hidden,):
            raise ShapeError(
                f"lstm_encode({prefix}): initial state {h.shape}/{c.shape} for hidden size {hidden}"
            )

    states: List[Optional[Tensor]] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        z = projected[t] + h @ W_h
        i = nd.sigmoid(z[:hidden])
        f = nd.sigmoid(z[hidden : 2 * hidden])
        o = nd.sigmoid(z[2 * hidden : 3 * hidden])
        g = nd.tanh(z[3 * hidden :])
        c = f * c + i * g
        h = o * nd.tanh(c)
        states[t] = h
    return nd.stack(states, axis=0), (h, c)


def bilstm_encode(params: ParamStore, prefix: str, inputs: Tensor) -> Tensor:
    """Forward and backward states concatenated per position (T x 2h)."""
    forward, _ = lstm_encode(params, f"{prefix}_fwd", inputs)
    backward, _ = lstm_encode(params, f"{prefix}_bwd", inputs, reverse=True)
    return nd.concat([forward, backward], axis=1)


def luong_attention(
    decoder_states: Tensor, encoder_states: Tensor, W_a: Tensor, W_c: Tensor
) -> Tuple[Tensor, Tensor]:
    """General-score attention. Returns (attended T x h, weights T x S).

    score(t, s) = d_t W_a e_s; attended_t = tanh([c_t ; d_t] W_c) with W_c
    stored as 2h x h.
    """
    if decoder_states.shape[0] == 0 or encoder_states.shape[0] == 0:
        raise ShapeError(
            f"luong_attention: empty states {decoder_states.shape} / {encoder_states.shape}"
        )
    scores = decoder_states @ W_a @ nd.transpose(encoder_states)
    weights = nd.softmax(scores, axis=1)
    context = weights @ encoder_states
    attended = nd.tanh(nd.concat([context, decoder_states], axis=1) @ W_c)
    return attended, weights


def _init_params(shapes: Dict[str, Tuple[int, ...]], seed: int, scale: float, zero: Sequence[str]) -> ParamStore:
    rng = make_rng(seed)
    store = ParamStore()
    for name, shape in shapes.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b") or name in zero:
            store.add(name, np.zeros(shape, dtype=np.float32))
        else:
            store.add(name, uniform_init(rng, shape, scale))
    return store


def _check_layout(kind: str, store: ParamStore, expected: Dict[str, Tuple[int, ...]]) -> None:
    actual = {name: tuple(t.shape) for name, t in store.items()}
    if list(actual) != list(expected):
        raise CheckpointError(f"{kind} checkpoint has parameters {list(actual)}, expected {list(expected)}")
    for name, shape in expected.items():
        if actual[name] != tuple(shape):
            raise CheckpointError(f"{kind} parameter {name}: shape {actual[name]} != {shape}")


def _load_model_parts(path: Union[str, Path], kind: str, config_cls):
    loaded = load_checkpoint(path, expected_kind=kind)
    try:
        config = config_cls(**loaded.manifest.hyperparameters)
    except (TypeError, ConfigError) as e:
        raise CheckpointError(f"{path}: bad {kind} hyperparameters: {e}") from e
    try:
        vocab = Vocabulary.from_list(loaded.manifest.vocab)
    except DataLoadError as e:
        raise CheckpointError(f"{path}: {e}") from e
    store = ParamStore()
    for name, array in loaded.arrays.items():
        store.add(name, array)
    return config, vocab, store


# Actor


def actor_shapes(config: ActorConfig, vocab_size: int) -> Dict[str, Tuple[int, ...]]:
    d, h = config.embed_dim, config.hidden_dim
    shapes: Dict[str, Tuple[int, ...]] = OrderedDict()
    shapes["embed"] = (vocab_size, d)
    for prefix in ("question_fwd", "question_bwd", "passage_fwd", "passage_bwd"):
        shapes.update(_lstm_shapes(prefix, d, h))
    shapes["start.W"] = (2 * h, 2 * h)
    shapes["start.b"] = (1,)
    shapes["end.W"] = (2 * h, 2 * h)
    shapes["end.b"] = (1,)
    return shapes


class ActorModel:
    """Bilinear start/end span predictor."""

    kind = "actor"

    def __init__(self, config: ActorConfig, vocab: Vocabulary, params: ParamStore):
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def create(cls, config: ActorConfig, vocab: Vocabulary, seed: int = 0) -> "ActorModel":
        shapes = actor_shapes(config, len(vocab))
        return cls(config, vocab, _init_params(shapes, seed, config.init_scale, zero=()))

    def forward(self, question_ids: Sequence[int], passage_ids: Sequence[int]) -> ActorOutput:
        return actor_forward(self, question_ids, passage_ids)

    def encode(self, example: QAExample) -> Tuple[List[int], List[int]]:
        return self.vocab.encode(example.question.tokens), self.vocab.encode(example.passage.tokens)

    def logits(self, example: QAExample) -> Tuple[np.ndarray, np.ndarray]:
        question_ids, passage_ids = self.encode(example)
        with nd.no_grad():
            out = self.forward(question_ids, passage_ids)
        return out.start_logits.numpy(), out.end_logits.numpy()

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(path, self.kind, asdict(self.config), self.vocab.to_list(), self.params)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ActorModel":
        config, vocab, store = _load_model_parts(path, cls.kind, ActorConfig)
        _check_layout(cls.kind, store, actor_shapes(config, len(vocab)))
        return cls(config, vocab, store)


def actor_forward(actor: ActorModel, question_ids: Sequence[int], passage_ids: Sequence[int]) -> ActorOutput:
    if len(question_ids) == 0 or len(passage_ids) == 0:
        raise ShapeError(
            f"actor_forward: empty input (question {len(question_ids)}, passage {len(passage_ids)})"
        )
    p = actor.params
    table = p["embed"]
    question_states = bilstm_encode(p, "question", nd.embedding_lookup(table, question_ids))
    summary = nd.mean(question_states, axis=0)
    passage_states = bilstm_encode(p, "passage", nd.embedding_lookup(table, passage_ids))
    start = passage_states @ (p["start.W"] @ summary) + p["start.b"]
    end = passage_states @ (p["end.W"] @ summary) + p["end.b"]
    return ActorOutput(start_logits=start, end_logits=end)


# Critic


def critic_shapes(config: CriticConfig, vocab_size: int) -> Dict[str, Tuple[int, ...]]:
    d, h = config.embed_dim, config.hidden_dim
    first, second = config.head_dims
    shapes: Dict[str, Tuple[int, ...]] = OrderedDict()
    shapes["embed"] = (vocab_size, d)
    shapes.update(_lstm_shapes("encoder", d, h))
    shapes.update(_lstm_shapes("decoder", d, h))
    shapes["attention.W_a"] = (h, h)
    shapes["attention.W_c"] = (2 * h, h)
    shapes["head.0.W"] = (h, first)
    shapes["head.0.b"] = (first,)
    shapes["head.1.W"] = (first, second)
    shapes["head.1.b"] = (second,)
    shapes["head.2.W"] = (second,)
    shapes["head.2.b"] = ()
    return shapes


class CriticModel:
    """Encoder-decoder LSTM pair classifier with attention and a dense head."""

    kind = "critic"

    def __init__(self, config: CriticConfig, vocab: Vocabulary, params: ParamStore):
        self.config = config
        self.vocab = vocab
        self.params = params

    @classmethod
    def create(cls, config: CriticConfig, vocab: Vocabulary, seed: int = 0) -> "CriticModel":
        shapes = critic_shapes(config, len(vocab))
        # untrained critic emits exactly 0.5
        params = _init_params(shapes, seed, config.init_scale, zero=("head.2.W",))
        return cls(config, vocab, params)

    def forward(self, query_ids: Sequence[int], span_ids: Sequence[int]) -> Tensor:
        return critic_forward(self, query_ids, span_ids)

    def probability(self, query_tokens: Sequence[str], span_tokens: Sequence[str]) -> float:
        with nd.no_grad():
            p = self.forward(self.vocab.encode(query_tokens), self.vocab.encode(span_tokens))
        return p.item()

    def freeze(self) -> None:
        self.params.freeze()

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(path, self.kind, asdict(self.config), self.vocab.to_list(), self.params)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CriticModel":
        config, vocab, store = _load_model_parts(path, cls.kind, CriticConfig)
        _check_layout(cls.kind, store, critic_shapes(config, len(vocab)))
        return cls(config, vocab, store)


def critic_forward(critic: CriticModel, query_ids: Sequence[int], span_ids: Sequence[int]) -> Tensor:
    """Scalar p(genuine), clamped into [eps, 1 - eps]."""
    if len(span_ids) == 0:
        raise ShapeError("critic_forward: empty span")
    if len(query_ids) == 0:
        raise ShapeError("critic_forward: empty query (expected at least BOS)")
    p = critic.params
    table = p["embed"]
    encoder_states, final_state = lstm_encode(p, "encoder", nd.embedding_lookup(table, query_ids))
    decoder_states, _ = lstm_encode(
        p, "decoder", nd.embedding_lookup(table, span_ids), initial_state=final_state
    )
    attended, _ = luong_attention(
        decoder_states, encoder_states, p["attention.W_a"], p["attention.W_c"]
    )
    pooled = nd.mean(attended, axis=0)
    x = nd.tanh(pooled @ p["head.0.W"] + p["head.0.b"])
    x = nd.tanh(x @ p["head.1.W"] + p["head.1.b"])
    prob = nd.sigmoid(x @ p["head.2.W"] + p["head.2.b"])
    return nd.clip(prob, nd.BCE_EPSILON, 1.0 - nd.BCE_EPSILON)


# Gradient-check networks


@dataclass
class GradCheckTrial:
    seed: int
    network: str
    num_parameters: int
    max_relative_error: float


def _randomize(store: ParamStore, rng: np.random.Generator, scale: float) -> None:
    for _, t in store.items():
        t.data = uniform_init(rng, t.shape, scale)


def _mlp_case(rng: np.random.Generator):
    store = ParamStore()
    store.add("W1", uniform_init(rng, (4, 6), 0.5))
    store.add("b1", uniform_init(rng, (6,), 0.5))
    store.add("W2", uniform_init(rng, (6, 3), 0.5))
    store.add("b2", uniform_init(rng, (3,), 0.5))
    x = rng.normal(size=4)
    target = int(rng.integers(0, 3))

    def build_loss() -> Tensor:
        hidden = nd.tanh(Tensor(x) @ store["W1"] + store["b1"])
        return nd.cross_entropy(hidden @ store["W2"] + store["b2"], target)

    return "mlp", store, build_loss


def _attention_case(rng: np.random.Generator):
    d, h = 3, 4
    store = ParamStore()
    for prefix in ("encoder", "decoder"):
        for name, shape in _lstm_shapes(prefix, d, h).items():
            store.add(name, uniform_init(rng, shape, 0.5))
    store.add("W_a", uniform_init(rng, (h, h), 0.5))
    store.add("W_c", uniform_init(rng, (2 * h, h), 0.5))
    source = rng.normal(size=(4, d))
    target = rng.normal(size=(3, d))
    weights = rng.normal(size=(3, h))

    def build_loss() -> Tensor:
        enc, state = lstm_encode(store, "encoder", Tensor(source))
        dec, _ = lstm_encode(store, "decoder", Tensor(target), initial_state=state)
        attended, _ = luong_attention(dec, enc, store["W_a"], store["W_c"])
        return nd.sum(attended * Tensor(weights))

    return "lstm_attention", store, build_loss


def _critic_case(rng: np.random.Generator):
    vocab = Vocabulary([f"w{i}" for i in range(8)])
    config = CriticConfig(embed_dim=4, hidden_dim=4, head_dims=(6, 4))
    critic = CriticModel.create(config, vocab, seed=int(rng.integers(0, 2**31)))
    _randomize(critic.params, rng, 0.5)
    query = [Vocabulary.BOS_ID] + rng.integers(3, len(vocab), size=3).tolist()
    span = rng.integers(3, len(vocab), size=2).tolist()
    label = int(rng.integers(0, 2))

    def build_loss() -> Tensor:
        return nd.binary_cross_entropy(critic_forward(critic, query, span), label)

    return "critic", critic.params, build_loss


def grad_check_suite(seed: int = 0, trials: int = 10, eps: float = 1e-4) -> List[GradCheckTrial]:
    """Finite-difference checks on small random networks, three per trial.

    The checker works in float64; the smallest allowed step keeps truncation
    error well under the tolerance for near-zero gradient entries.
    """
    results: List[GradCheckTrial] = []
    for trial in range(trials):
        trial_seed = seed + trial
        rng = make_rng(trial_seed)
        for case in (_mlp_case, _attention_case, _critic_case):
            name, store, build_loss = case(rng)
            error = nd.grad_check(build_loss, store, eps=eps)
            results.append(GradCheckTrial(trial_seed, name, store.num_parameters(), error))
            logger.debug("grad-check seed=%d %s params=%d error=%.3e", trial_seed, name, store.num_parameters(), error)
    return results
