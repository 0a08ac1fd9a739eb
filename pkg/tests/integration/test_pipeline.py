"""End-to-end tests: synthetic corpus through generation, training and evaluation."""

import json
import statistics

import pytest

from critiqa.cli import main
from critiqa.core.advgen import GenConfig, build_critic_dataset, read_critic_pairs
from critiqa.core.evaluation import critic_probability_histogram, evaluate_qa
from critiqa.core.inference import InferenceConfig
from critiqa.core.models import ActorConfig, ActorModel, CriticConfig, CriticModel
from critiqa.core.synthetic import SyntheticConfig, make_synthetic_squad
from critiqa.core.textio import load_squad, parse_squad
from critiqa.core.training import TrainConfig, train_actor, train_critic

pytestmark = [pytest.mark.integration, pytest.mark.slow]

TINY = {
    "actor": {"embed_dim": 8, "hidden_dim": 8},
    "critic": {"embed_dim": 8, "hidden_dim": 8, "head_dims": [8, 4], "query_window": 8},
    "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.01},
}

# synthetic answers sit right after "<topic words> <cue>", well inside this window
QUERY_WINDOW = 8
SMALL_ACTOR = ActorConfig(embed_dim=16, hidden_dim=16)
SMALL_CRITIC = CriticConfig(embed_dim=16, hidden_dim=16, head_dims=(16, 8), query_window=QUERY_WINDOW)


def run_pipeline(root):
    """Run every stage through the CLI and return the artifact paths."""
    root.mkdir(parents=True, exist_ok=True)
    config = root / "critiqa.json"
    config.write_text(json.dumps(TINY), encoding="utf-8")
    squad = root / "train.json"
    pairs = root / "pairs.jsonl"
    critic = root / "critic"
    actor = root / "actor"
    report = root / "report.json"
    base = ["--config", str(config), "--log-level", "WARNING"]

    assert main(base + ["make-synthetic", "--out", str(squad), "--examples", "24", "--seed", "1"]) == 0
    assert main(base + ["gen-adversarial", "--input", str(squad), "--out", str(pairs), "--seed", "2"]) == 0
    assert main(base + ["train-critic", "--pairs", str(pairs), "--out", str(critic), "--log", str(root / "critic.log.jsonl")]) == 0
    assert main(base + ["train-actor", "--squad", str(squad), "--critic", str(critic), "--out", str(actor)]) == 0
    assert main(base + ["eval", "--squad", str(squad), "--actor", str(actor), "--critic", str(critic), "--report", str(report)]) == 0
    return {"squad": squad, "pairs": pairs, "critic": critic, "actor": actor, "report": report}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("pipeline"))


class TestPipeline:
    """Test the full command sequence."""

    def test_artifacts_and_manifests(self, pipeline):
        """Every stage leaves its artifact and a run manifest."""
        for key in ("squad", "pairs", "critic", "actor", "report"):
            assert pipeline[key].exists()
            assert pipeline[key].with_name(pipeline[key].name + ".run.json").exists()

    def test_training_log(self, pipeline):
        """The critic log has one record per epoch."""
        log = pipeline["critic"].with_name("critic.log.jsonl")
        lines = [json.loads(line) for line in log.read_text(encoding="utf-8").splitlines()]
        assert [line["epoch"] for line in lines] == [1, 2]

    def test_report_shape(self, pipeline):
        report = json.loads(pipeline["report"].read_text(encoding="utf-8"))
        assert report["n_examples"] == 24
        assert report["with_critic"] is True
        assert 0.0 <= report["f1"] <= 100.0
        assert report["em"] <= report["f1"] + 1e-9

    def test_checkpoint_hyperparameters(self, pipeline):
        """Configured sizes are stored in and restored from checkpoints."""
        critic = CriticModel.load(pipeline["critic"])
        assert critic.config.head_dims == (8, 4)
        assert critic.config.query_window == 8
        assert ActorModel.load(pipeline["actor"]).config.hidden_dim == 8

    def test_deterministic(self, pipeline, tmp_path):
        """A second run reproduces reports and checkpoints byte for byte."""
        again = run_pipeline(tmp_path / "again")
        assert again["pairs"].read_bytes() == pipeline["pairs"].read_bytes()
        for name in ("manifest.json", "params.bin"):
            assert (again["critic"] / name).read_bytes() == (pipeline["critic"] / name).read_bytes()
            assert (again["actor"] / name).read_bytes() == (pipeline["actor"] / name).read_bytes()
        assert again["report"].read_bytes() == pipeline["report"].read_bytes()

    def test_threshold_monotonicity(self, pipeline):
        """Raising the threshold never lowers the rejection rate."""
        dataset = load_squad(pipeline["squad"])
        actor = ActorModel.load(pipeline["actor"])
        critic = CriticModel.load(pipeline["critic"])
        rates = [
            evaluate_qa(actor, critic, dataset, InferenceConfig(threshold=t)).rejection_rate
            for t in [k / 10 for k in range(10)] + [1.0]
        ]
        assert rates == sorted(rates)
        assert rates[0] == 0.0

    def test_histogram_conservation(self, pipeline):
        """Histogram counts equal the pair corpus class counts."""
        corpus = read_critic_pairs(pipeline["pairs"])
        report = critic_probability_histogram(CriticModel.load(pipeline["critic"]), corpus, n_bins=10)
        assert sum(report.genuine) == corpus.n_genuine
        assert sum(report.adversarial) == corpus.n_adversarial


class TestCriticLearning:
    """Test that the critic picks up a separable signal."""

    @pytest.fixture(scope="class")
    def separability(self):
        """Critics trained for 20 epochs on 2,000-pair corpora at p=0.9 and p=0.75."""
        dataset = parse_squad(make_synthetic_squad(SyntheticConfig(n_examples=1000, seed=5)))
        runs = {}
        for p in (0.9, 0.75):
            corpus = build_critic_dataset(dataset, GenConfig(replacement_prob=p, query_window=QUERY_WINDOW, seed=5))
            critic = CriticModel.create(SMALL_CRITIC, corpus.vocabulary(), seed=0)
            cfg = TrainConfig(epochs=20, batch_size=16, learning_rate=0.005, holdout_fraction=0.1, seed=0)
            runs[p] = (corpus, critic, train_critic(critic, corpus, cfg))
        return runs

    def test_corpus_size(self, separability):
        """At least 2,000 pairs over a vocabulary of about 200 words."""
        corpus = separability[0.9][0]
        assert len(corpus) >= 2000
        assert 150 <= len(corpus.vocabulary()) <= 250

    def test_heldout_accuracy(self, separability):
        """The p=0.9 critic reaches 0.90 held-out accuracy within 20 epochs."""
        trace = separability[0.9][2].trace
        assert len(trace) == 20
        assert trace[-1].heldout_accuracy >= 0.90

    def test_heavier_replacement_is_not_harder(self, separability):
        """Accuracy at p=0.9 is at least accuracy at p=0.75 minus 0.02."""
        high = separability[0.9][2].trace[-1].heldout_accuracy
        low = separability[0.75][2].trace[-1].heldout_accuracy
        assert high >= low - 0.02

    @pytest.mark.parametrize("n_bins", [2, 10, 100])
    def test_histogram_conservation(self, separability, n_bins):
        """Per-class bin sums equal the class counts."""
        corpus, critic, _ = separability[0.9]
        report = critic_probability_histogram(critic, corpus, n_bins=n_bins)
        assert len(report.bin_edges) == n_bins + 1
        assert sum(report.genuine) == corpus.n_genuine
        assert sum(report.adversarial) == corpus.n_adversarial

    def test_bce_falls_on_full_replacement(self):
        """With every span token replaced, the critic's loss drops during training."""
        dataset = parse_squad(make_synthetic_squad(SyntheticConfig(n_examples=32, seed=6)))
        corpus = build_critic_dataset(dataset, GenConfig(replacement_prob=1.0, seed=6))
        critic = CriticModel.create(CriticConfig(embed_dim=16, hidden_dim=16, head_dims=(16, 8)), corpus.vocabulary(), seed=0)
        result = train_critic(critic, corpus, TrainConfig(epochs=10, batch_size=8, learning_rate=0.02, holdout_fraction=0.25))
        assert result.trace[-1].bce < result.trace[0].bce


class TestDistractorCorpus:
    """Test critic rejection against passages with a question-mimicking distractor."""

    # answers are two tokens; a short cap keeps proposals inside one sentence
    MAX_SPAN_LEN = 4

    @pytest.fixture(scope="class")
    def runs(self):
        """Baseline and gated reports for three actor seeds sharing one critic."""
        train = parse_squad(make_synthetic_squad(SyntheticConfig(n_examples=200, seed=21)))
        test = parse_squad(make_synthetic_squad(SyntheticConfig(n_examples=100, seed=22, distractor=True)))
        corpus = build_critic_dataset(train, GenConfig(replacement_prob=0.9, query_window=QUERY_WINDOW, seed=21))
        critic = CriticModel.create(SMALL_CRITIC, corpus.vocabulary(), seed=0)
        train_critic(critic, corpus, TrainConfig(epochs=15, batch_size=16, learning_rate=0.005, seed=0))

        baseline_cfg = InferenceConfig(max_span_len=self.MAX_SPAN_LEN)
        gated_cfg = InferenceConfig(threshold=0.3, reject_budget=1, max_span_len=self.MAX_SPAN_LEN)
        reports = []
        for seed in (0, 1, 2):
            actor = ActorModel.create(SMALL_ACTOR, train.vocab, seed=seed)
            cfg = TrainConfig(epochs=25, batch_size=8, learning_rate=0.01, max_span_len=self.MAX_SPAN_LEN, seed=seed)
            train_actor(actor, critic, train, cfg)
            reports.append((evaluate_qa(actor, None, test, baseline_cfg), evaluate_qa(actor, critic, test, gated_cfg)))
        return reports

    def test_median_f1_not_below_baseline(self, runs):
        """Over three seeds the gated median F1 is at least the baseline median."""
        baseline = statistics.median(b.f1 for b, _ in runs)
        gated = statistics.median(g.f1 for _, g in runs)
        assert gated >= baseline

    def test_critic_rejects_something(self, runs):
        assert statistics.median(g.rejection_rate for _, g in runs) > 0.0

    def test_reports_carry_em(self, runs):
        """EM is reported for inspection; it is not required to improve."""
        for baseline, gated in runs:
            assert 0.0 <= gated.em <= gated.f1 + 1e-9
            assert baseline.with_critic is False
            assert gated.with_critic is True
