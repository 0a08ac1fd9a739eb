"""
critiqa CLI - entry point for the critiqa command

Wires configuration, corpora, checkpoints and reports into the pipeline stages:
adversarial pair generation, critic training, actor training, evaluation,
critic probability histograms, gradient checking and synthetic corpora.
"""

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from rich.console import Console

from . import __version__
from .config import AppConfig, merge_config, read_config_file
from .core.advgen import build_critic_dataset, read_critic_pairs, write_critic_pairs
from .core.checkpoint import checkpoint_digest
from .core.evaluation import critic_probability_histogram, evaluate_qa, render_metrics, write_report
from .core.models import ActorModel, CriticModel, grad_check_suite
from .core.run_logger import LOG_LEVEL_ENV, LogFormat, MetricsLogger, setup_logging
from .core.run_manifest import RunTracker, atomic_write_text, tool_identity
from .core.synthetic import SyntheticConfig, make_synthetic_squad
from .core.textio import load_squad
from .core.training import train_actor, train_critic
from .errors import CritiqaError, FrozenCriticError, GradientError

GRAD_CHECK_TOLERANCE = 1e-3


@dataclass
class CliState:
    """Global options carried from the group to each subcommand."""

    file_data: Dict[str, Any] = field(default_factory=dict)
    overrides: Dict[str, Any] = field(default_factory=dict)

    def resolve(self, overrides: Dict[str, Any]) -> AppConfig:
        return merge_config(None, self.file_data, {**self.overrides, **overrides})


def _require(value: Optional[str], flag: str) -> str:
    if value is None:
        raise click.UsageError(f"missing option {flag} (and no default in the config file)")
    return value


def _tracker(command: str, cfg: AppConfig, seed: Optional[int], inputs: List[str]) -> RunTracker:
    return RunTracker(command, cfg.to_dict(), seed, inputs, tool_identity())


@click.group()
@click.version_option(version=__version__, prog_name="critiqa")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON config file mirroring all flags")
@click.option("--log-level", default=None, help="Log level (default: $CRITIQA_LOG_LEVEL or INFO)")
@click.option("--log-format", type=click.Choice([f.value for f in LogFormat]), default=None)
@click.option("--workers", type=int, default=None, help="Worker threads for generation and evaluation")
@click.pass_context
def cli(ctx, config_path, log_level, log_format, workers):
    """critiqa - critic-gated extractive question answering"""
    state = CliState(
        file_data=read_config_file(config_path),
        overrides={"log_level": log_level, "log_format": log_format, "workers": workers},
    )
    cfg = state.resolve({})
    level = log_level or os.environ.get(LOG_LEVEL_ENV) or cfg.log_level
    setup_logging(level, cfg.log_format)
    ctx.obj = state


@cli.command("gen-adversarial")
@click.option("--input", "input_path", default=None, help="SQuAD v1.1 JSON file")
@click.option("--out", default=None, help="Critic pair corpus (JSON Lines)")
@click.option("--replacement-prob", type=float, default=None)
@click.option("--scope", type=click.Choice(["all", "nonstop", "all_words", "non_stop_words"]), default=None)
@click.option("--query-window", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_obj
def gen_adversarial(state: CliState, input_path, out, replacement_prob, scope, query_window, seed):
    """Generate genuine/adversarial critic pairs from a SQuAD file"""
    cfg = state.resolve({
        "gen.replacement_prob": replacement_prob,
        "gen.scope": scope,
        "gen.query_window": query_window,
        "gen.seed": seed,
        "paths.squad": input_path,
        "paths.pairs": out,
    })
    source = _require(cfg.paths.squad, "--input")
    target = _require(cfg.paths.pairs, "--out")

    with _tracker("gen-adversarial", cfg, cfg.gen.seed, [source]) as tracker:
        dataset = load_squad(source)
        corpus = build_critic_dataset(dataset, cfg.gen, workers=cfg.workers)
        write_critic_pairs(target, corpus)
    tracker.write(target)

    counts = corpus.class_counts()
    click.echo(f"✅ Wrote {len(corpus)} pairs to {target}")
    click.echo(f"   genuine={counts['genuine']} adversarial={counts['adversarial']} skipped={dataset.skipped}")


@cli.command("train-critic")
@click.option("--pairs", default=None, help="Critic pair corpus (JSON Lines)")
@click.option("--out", default=None, help="Critic checkpoint directory")
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--holdout-fraction", type=float, default=None)
@click.option("--query-window", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--log", "log_path", default=None, help="Per-epoch JSON Lines training log")
@click.pass_obj
def train_critic_cmd(state: CliState, pairs, out, epochs, lr, batch_size, holdout_fraction, query_window, seed, log_path):
    """Train the critic on a pair corpus"""
    cfg = state.resolve({
        "train.epochs": epochs,
        "train.learning_rate": lr,
        "train.batch_size": batch_size,
        "train.holdout_fraction": holdout_fraction,
        "train.seed": seed,
        "critic.query_window": query_window,
        "paths.pairs": pairs,
        "paths.critic": out,
        "paths.log": log_path,
    })
    source = _require(cfg.paths.pairs, "--pairs")
    target = _require(cfg.paths.critic, "--out")

    with _tracker("train-critic", cfg, cfg.train.seed, [source]) as tracker:
        corpus = read_critic_pairs(source)
        critic = CriticModel.create(cfg.critic, corpus.vocabulary(), seed=cfg.train.seed)
        metrics = MetricsLogger("critiqa.training", log_file=cfg.paths.log)
        result = train_critic(critic, corpus, cfg.train, metrics=metrics)
        critic.save(target)
    tracker.write(*[p for p in (target, cfg.paths.log) if p])

    final = result.trace[-1]
    click.echo(f"✅ Saved critic to {target}")
    click.echo(f"   held-out accuracy={final.heldout_accuracy:.3f} train accuracy={final.train_accuracy:.3f}")


@cli.command("train-actor")
@click.option("--squad", default=None, help="SQuAD v1.1 training file")
@click.option("--critic", "critic_path", default=None, help="Frozen critic checkpoint")
@click.option("--out", default=None, help="Actor checkpoint directory")
@click.option("--loss-mode", type=click.Choice(["additive", "reweight"]), default=None)
@click.option("--bce-cap", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--max-span-len", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--log", "log_path", default=None, help="Per-epoch JSON Lines training log")
@click.pass_obj
def train_actor_cmd(state: CliState, squad, critic_path, out, loss_mode, bce_cap, epochs, lr,
                    batch_size, max_span_len, seed, log_path):
    """Train the actor with the frozen critic attached"""
    cfg = state.resolve({
        "train.loss_mode": loss_mode,
        "train.bce_cap": bce_cap,
        "train.epochs": epochs,
        "train.learning_rate": lr,
        "train.batch_size": batch_size,
        "train.max_span_len": max_span_len,
        "train.seed": seed,
        "paths.squad": squad,
        "paths.critic": critic_path,
        "paths.actor": out,
        "paths.log": log_path,
    })
    source = _require(cfg.paths.squad, "--squad")
    critic_dir = _require(cfg.paths.critic, "--critic")
    target = _require(cfg.paths.actor, "--out")

    with _tracker("train-actor", cfg, cfg.train.seed, [source, critic_dir]) as tracker:
        dataset = load_squad(source)
        critic_bytes = checkpoint_digest(critic_dir)
        critic = CriticModel.load(critic_dir)
        actor = ActorModel.create(cfg.actor, dataset.vocab, seed=cfg.train.seed)
        metrics = MetricsLogger("critiqa.training", log_file=cfg.paths.log)
        result = train_actor(actor, critic, dataset, cfg.train, metrics=metrics)
        if checkpoint_digest(critic_dir) != critic_bytes:
            raise FrozenCriticError(f"critic checkpoint {critic_dir} changed during actor training")
        actor.save(target)
    tracker.write(*[p for p in (target, cfg.paths.log) if p])

    final = result.trace[-1]
    click.echo(f"✅ Saved actor to {target}")
    click.echo(f"   ce_span={final.ce_span:.4f} f1={final.f1:.2f} em={final.em:.2f}")


@cli.command("eval")
@click.option("--squad", default=None, help="SQuAD v1.1 evaluation file")
@click.option("--actor", "actor_path", default=None, help="Actor checkpoint")
@click.option("--critic", "critic_path", default=None, help="Critic checkpoint (omit for the baseline)")
@click.option("--threshold", type=float, default=None)
@click.option("--rejection-mode", type=click.Choice(["endpoints", "span"]), default=None)
@click.option("--reject-budget", type=int, default=None)
@click.option("--max-span-len", type=int, default=None)
@click.option("--report", "report_path", default=None, help="Metrics report (JSON)")
@click.pass_obj
def eval_cmd(state: CliState, squad, actor_path, critic_path, threshold, rejection_mode,
             reject_budget, max_span_len, report_path):
    """Score the actor, optionally gated by the critic"""
    cfg = state.resolve({
        "infer.threshold": threshold,
        "infer.rejection_mode": rejection_mode,
        "infer.reject_budget": reject_budget,
        "infer.max_span_len": max_span_len,
        "paths.squad": squad,
        "paths.actor": actor_path,
        "paths.critic": critic_path,
        "paths.report": report_path,
    })
    source = _require(cfg.paths.squad, "--squad")
    actor_dir = _require(cfg.paths.actor, "--actor")
    target = _require(cfg.paths.report, "--report")
    critic_dir = cfg.paths.critic
    inputs = [source, actor_dir] + ([critic_dir] if critic_dir else [])

    with _tracker("eval", cfg, None, inputs) as tracker:
        dataset = load_squad(source)
        actor = ActorModel.load(actor_dir)
        critic = CriticModel.load(critic_dir) if critic_dir else None
        report = evaluate_qa(actor, critic, dataset, cfg.infer, workers=cfg.workers)
        written = write_report(target, report)
    tracker.write(*written)

    Console().print(render_metrics(report))
    click.echo(f"📄 Report written to {target}")


@cli.command("histogram")
@click.option("--critic", "critic_path", default=None, help="Critic checkpoint")
@click.option("--pairs", default=None, help="Critic pair corpus (JSON Lines)")
@click.option("--bins", type=int, default=10, show_default=True)
@click.option("--out", required=True, help="Histogram report (JSON)")
@click.pass_obj
def histogram_cmd(state: CliState, critic_path, pairs, bins, out):
    """Bin critic probabilities by class"""
    cfg = state.resolve({"paths.critic": critic_path, "paths.pairs": pairs})
    critic_dir = _require(cfg.paths.critic, "--critic")
    source = _require(cfg.paths.pairs, "--pairs")

    with _tracker("histogram", cfg, None, [critic_dir, source]) as tracker:
        critic = CriticModel.load(critic_dir)
        corpus = read_critic_pairs(source)
        report = critic_probability_histogram(critic, corpus, n_bins=bins, workers=cfg.workers)
        write_report(out, report)
    tracker.write(out)

    click.echo(f"📊 {bins} bins, genuine={report.n_genuine} adversarial={report.n_adversarial} -> {out}")


@cli.command("grad-check")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trials", type=int, default=10, show_default=True)
def grad_check_cmd(seed, trials):
    """Compare backprop gradients with finite differences"""
    results = grad_check_suite(seed=seed, trials=trials)
    for trial in results:
        click.echo(
            f"  seed={trial.seed:<4} {trial.network:<15} params={trial.num_parameters:<5} "
            f"error={trial.max_relative_error:.3e}"
        )
    worst = max(t.max_relative_error for t in results)
    verdict = "PASS" if worst < GRAD_CHECK_TOLERANCE else "FAIL"
    click.echo(f"max relative error: {worst:.3e}")
    click.echo(verdict)
    if verdict == "FAIL":
        raise GradientError(f"max relative error {worst:.3e} >= {GRAD_CHECK_TOLERANCE}")


@cli.command("make-synthetic")
@click.option("--out", required=True, help="SQuAD v1.1 JSON output")
@click.option("--examples", "n_examples", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--distractor", is_flag=True, help="Append a question-mimicking distractor sentence")
@click.pass_obj
def make_synthetic_cmd(state: CliState, out, n_examples, seed, distractor):
    """Write a synthetic SQuAD-schema corpus"""
    cfg = state.resolve({})
    synthetic = SyntheticConfig(n_examples=n_examples, seed=seed, distractor=distractor)
    with _tracker("make-synthetic", cfg, seed, []) as tracker:
        payload = make_synthetic_squad(synthetic)
        atomic_write_text(out, json.dumps(payload, indent=1) + "\n")
    tracker.write(out)
    click.echo(f"✅ Wrote {n_examples} synthetic examples to {out}")


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and return its exit code: 0 ok, 1 usage error, 2 data/model error."""
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        click.echo(cli.get_help(click.Context(cli, info_name="critiqa")), err=True)
        return 1
    try:
        rv = cli.main(args=args, prog_name="critiqa", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 1
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except CritiqaError as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except click.ClickException as e:
        e.show()
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
