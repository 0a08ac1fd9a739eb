"""Unit tests for the actor and critic networks."""

import numpy as np
import pytest

from critiqa.core.models import (
    ActorConfig,
    ActorModel,
    CriticConfig,
    CriticModel,
    PairScorer,
    SpanScorer,
    actor_shapes,
    critic_forward,
    critic_shapes,
    grad_check_suite,
    lstm_encode,
    luong_attention,
)
from critiqa.core import ndmath as nd
from critiqa.core.ndmath import ParamStore, Tensor, make_rng
from critiqa.errors import CheckpointError, ConfigError, ShapeError


def lstm_store(d=3, h=4, seed=0, zero=False):
    rng = make_rng(seed)
    store = ParamStore()
    for name, shape in (("l.W_x", (d, 4 * h)), ("l.W_h", (h, 4 * h)), ("l.b", (4 * h,))):
        store.add(name, np.zeros(shape) if zero else rng.uniform(-0.5, 0.5, size=shape))
    return store


class TestLstm:
    """Test the LSTM layer."""

    def test_zero_weights_give_zero_state(self):
        """With all-zero weights the candidate is 0, so h stays 0."""
        states, (h, c) = lstm_encode(lstm_store(zero=True), "l", Tensor(np.ones((2, 3))))
        np.testing.assert_array_equal(states.numpy(), np.zeros((2, 4)))
        np.testing.assert_array_equal(c.numpy(), np.zeros(4))

    def test_length_one(self):
        """A single step returns one state equal to the final h."""
        states, (h, _) = lstm_encode(lstm_store(), "l", Tensor(np.ones((1, 3))))
        assert states.shape == (1, 4)
        np.testing.assert_array_equal(states.numpy()[0], h.numpy())

    def test_reverse_matches_reversed_input(self):
        """Reverse reading equals forward reading of the flipped sequence, flipped back."""
        store = lstm_store(seed=3)
        x = make_rng(4).normal(size=(5, 3))
        reverse_states, _ = lstm_encode(store, "l", Tensor(x), reverse=True)
        forward_states, _ = lstm_encode(store, "l", Tensor(x[::-1].copy()))
        np.testing.assert_allclose(reverse_states.numpy(), forward_states.numpy()[::-1], rtol=1e-6)

    def test_empty_input(self):
        """Zero-length sequences are shape errors."""
        with pytest.raises(ShapeError):
            lstm_encode(lstm_store(), "l", Tensor(np.zeros((0, 3))))

    def test_bad_initial_state(self):
        """Initial states must match the hidden size."""
        with pytest.raises(ShapeError):
            lstm_encode(lstm_store(), "l", Tensor(np.ones((1, 3))), initial_state=(Tensor(np.zeros(2)), Tensor(np.zeros(2))))


class TestAttention:
    """Test Luong general attention."""

    def test_single_encoder_state(self):
        """One source state takes all the weight."""
        rng = make_rng(0)
        dec, enc = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(1, 4)))
        _, weights = luong_attention(dec, enc, Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=(8, 4))))
        np.testing.assert_allclose(weights.numpy(), np.ones((3, 1)))

    def test_zero_score_matrix_is_uniform(self):
        """W_a = 0 spreads attention evenly."""
        rng = make_rng(1)
        dec, enc = Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(5, 4)))
        attended, weights = luong_attention(dec, enc, Tensor(np.zeros((4, 4))), Tensor(rng.normal(size=(8, 4))))
        np.testing.assert_allclose(weights.numpy(), np.full((2, 5), 0.2), rtol=1e-6)
        assert attended.shape == (2, 4)

    def test_weights_are_distributions(self):
        """Each decoder row sums to one."""
        rng = make_rng(2)
        dec, enc = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(6, 4)))
        _, weights = luong_attention(dec, enc, Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=(8, 4))))
        np.testing.assert_allclose(weights.numpy().sum(axis=1), np.ones(3), rtol=1e-5)


class TestActor:
    """Test the span predictor."""

    def test_logit_length(self, squad_dataset, tiny_actor_config):
        """One start and one end logit per passage token."""
        actor = ActorModel.create(tiny_actor_config, squad_dataset.vocab, seed=0)
        example = squad_dataset.examples[0]
        start, end = actor.logits(example)
        assert start.shape == end.shape == (len(example.passage.tokens),)

    def test_logits_are_pure(self, squad_dataset, tiny_actor_config):
        """Repeated calls give identical logits."""
        actor = ActorModel.create(tiny_actor_config, squad_dataset.vocab, seed=0)
        example = squad_dataset.examples[1]
        first = actor.logits(example)
        second = actor.logits(example)
        np.testing.assert_array_equal(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])

    def test_same_seed_same_weights(self, squad_dataset, tiny_actor_config):
        """Initialisation is seeded."""
        a = ActorModel.create(tiny_actor_config, squad_dataset.vocab, seed=7)
        b = ActorModel.create(tiny_actor_config, squad_dataset.vocab, seed=7)
        assert a.params.digest() == b.params.digest()

    def test_layout(self, tiny_actor_config):
        """Parameter shapes follow the configuration."""
        shapes = actor_shapes(tiny_actor_config, 10)
        assert shapes["embed"] == (10, 8)
        assert shapes["passage_fwd.W_x"] == (8, 32)
        assert shapes["start.W"] == (16, 16)

    def test_save_load_bitwise(self, tmp_path, squad_dataset, tiny_actor_config):
        """A reloaded actor reproduces its logits exactly."""
        actor = ActorModel.create(tiny_actor_config, squad_dataset.vocab, seed=1)
        path = actor.save(tmp_path / "actor")
        loaded = ActorModel.load(path)
        example = squad_dataset.examples[0]
        np.testing.assert_array_equal(actor.logits(example)[0], loaded.logits(example)[0])
        np.testing.assert_array_equal(actor.logits(example)[1], loaded.logits(example)[1])
        assert loaded.vocab == actor.vocab

    def test_actor_checkpoint_is_not_a_critic(self, tmp_path, squad_dataset, tiny_actor_config):
        """Loading with the wrong class fails."""
        path = ActorModel.create(tiny_actor_config, squad_dataset.vocab).save(tmp_path / "actor")
        with pytest.raises(CheckpointError):
            CriticModel.load(path)

    def test_protocol(self, squad_dataset, tiny_actor_config):
        """ActorModel satisfies SpanScorer."""
        assert isinstance(ActorModel.create(tiny_actor_config, squad_dataset.vocab), SpanScorer)

    def test_empty_question(self, squad_dataset, tiny_actor_config):
        """An empty question cannot be encoded."""
        actor = ActorModel.create(tiny_actor_config, squad_dataset.vocab)
        with pytest.raises(ShapeError):
            actor.forward([], [3, 4])


class TestCritic:
    """Test the pair classifier."""

    def test_untrained_is_half(self, squad_dataset, tiny_critic_config):
        """A freshly created critic is undecided."""
        critic = CriticModel.create(tiny_critic_config, squad_dataset.vocab, seed=0)
        assert critic.probability(["<bos>", "the"], ["grotto"]) == 0.5

    def test_probability_in_open_interval(self, squad_dataset, tiny_critic_config):
        """Outputs stay inside [eps, 1 - eps] with random weights."""
        critic = CriticModel.create(tiny_critic_config, squad_dataset.vocab, seed=0)
        rng = make_rng(3)
        for _, t in critic.params.items():
            t.data = rng.uniform(-2.0, 2.0, size=t.shape).astype(np.float32)
        p = critic.probability(["<bos>", "is", "the"], ["grotto", "at", "lourdes"])
        assert 0.0 < p < 1.0

    def test_unknown_tokens_use_unk(self, squad_dataset, tiny_critic_config):
        """Out-of-vocabulary tokens still score."""
        critic = CriticModel.create(tiny_critic_config, squad_dataset.vocab)
        assert critic.probability(["<bos>"], ["zzzz"]) == 0.5

    def test_empty_span(self, squad_dataset, tiny_critic_config):
        """An empty span is a shape error."""
        critic = CriticModel.create(tiny_critic_config, squad_dataset.vocab)
        with pytest.raises(ShapeError):
            critic.probability(["<bos>"], [])

    def test_forward_graph(self, squad_dataset, tiny_critic_config):
        """The graph value matches probability() and backprop reaches the head."""
        critic = CriticModel.create(tiny_critic_config, squad_dataset.vocab, seed=0)
        query, span = ["<bos>", "the"], ["grotto"]
        p = critic_forward(critic, critic.vocab.encode(query), critic.vocab.encode(span))
        assert p.item() == critic.probability(query, span)
        nd.backward(p)
        assert np.any(critic.params["head.2.W"].grad != 0)

    def test_empty_query(self, squad_dataset, tiny_critic_config):
        critic = CriticModel.create(tiny_critic_config, squad_dataset.vocab)
        with pytest.raises(ShapeError):
            critic_forward(critic, [], critic.vocab.encode(["grotto"]))

    def test_layout(self, tiny_critic_config):
        """Head widths and attention matrices follow the configuration."""
        shapes = critic_shapes(tiny_critic_config, 12)
        assert shapes["attention.W_c"] == (16, 8)
        assert shapes["head.0.W"] == (8, 8)
        assert shapes["head.1.W"] == (8, 4)
        assert shapes["head.2.W"] == (4,)

    def test_freeze(self, squad_dataset, tiny_critic_config):
        """Freezing stops gradient tracking on every parameter."""
        critic = CriticModel.create(tiny_critic_config, squad_dataset.vocab)
        critic.freeze()
        assert critic.params.frozen
        assert not critic.forward([1], [3]).requires_grad

    def test_save_load_bitwise(self, tmp_path, squad_dataset, tiny_critic_config):
        """A reloaded critic reproduces probabilities exactly."""
        critic = CriticModel.create(tiny_critic_config, squad_dataset.vocab, seed=2)
        critic.params["head.2.W"].data[:] = 0.3
        loaded = CriticModel.load(critic.save(tmp_path / "critic"))
        pair = (["<bos>", "immediately"], ["behind", "the"])
        assert loaded.probability(*pair) == critic.probability(*pair)
        assert loaded.config == critic.config
        assert loaded.params["head.2.b"].shape == ()

    def test_protocol(self, squad_dataset, tiny_critic_config):
        """CriticModel satisfies PairScorer."""
        assert isinstance(CriticModel.create(tiny_critic_config, squad_dataset.vocab), PairScorer)

    def test_config_validation(self):
        """The dense head has exactly two hidden widths."""
        with pytest.raises(ConfigError):
            CriticConfig(head_dims=(8,))
        with pytest.raises(ConfigError):
            ActorConfig(hidden_dim=0)


class TestGradCheckSuite:
    """Test the finite-difference suite over small networks."""

    def test_step_outside_range(self):
        with pytest.raises(ConfigError):
            grad_check_suite(trials=1, eps=1e-5)

    @pytest.mark.slow
    def test_single_trial_passes(self):
        """Every network checks below 1e-3 relative error."""
        trials = grad_check_suite(seed=0, trials=1)
        assert [t.network for t in trials] == ["mlp", "lstm_attention", "critic"]
        assert max(t.max_relative_error for t in trials) < 1e-3

    @pytest.mark.slow
    def test_trial_seeds(self):
        """Trial k runs its three networks with seed + k."""
        trials = grad_check_suite(seed=5, trials=2)
        assert [t.seed for t in trials] == [5, 5, 5, 6, 6, 6]
        assert all(t.num_parameters > 0 for t in trials)
