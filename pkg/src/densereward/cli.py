"""Command-line entry point.

Exit status: 0 on success, 1 for usage or validation problems (bad flags,
bad config, rejected inputs), 2 when a stage fails at run time.
"""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .bench import metrics
from .bench.config import ExperimentConfig
from .bench.pipeline import (
    SUMMARY_FILE,
    Pipeline,
    curve_name,
    load_benchmark,
    log_name,
    run_single,
    write_benchmark,
)
from .errors import ConfigError, ContractError, ValidationError
from .sacrl import SOURCES, write_log

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
U64 = click.IntRange(0, 2**64 - 1)


def _common(f):
    f = click.option("--seed", type=U64, default=None, help="Global seed (overrides the config).")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None, help="Artifact directory.")(f)
    f = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="TOML experiment config.")(f)
    return f


def load_config(config_path, out, seed, **sections) -> ExperimentConfig:
    cfg = ExperimentConfig.load(config_path) if config_path else ExperimentConfig()
    top = {}
    if out is not None:
        top["out"] = str(out)
    if seed is not None:
        top["seed"] = seed
    for name, overrides in sections.items():
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if overrides:
            top[name] = replace(getattr(cfg, name), **overrides)
    return replace(cfg, **top) if top else cfg


def _progress(stage, state):
    click.echo(f"[{stage}] {state}", err=True)


def _run(cfg: ExperimentConfig, until: str, workers=None, force=False) -> Path:
    out = Pipeline(cfg, workers=workers).run(until, force=force, progress=_progress)
    click.echo(str(out))
    return out


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", is_flag=True, help="Log progress at INFO level.")
def cli(verbose):
    """Dense task-progress rewards: demos, sampling, representation training and SAC benchmarks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@_common
@click.option("--env", type=click.Choice(["block-insertion", "latch-door"]), default=None)
@click.option("--demo-seed", type=U64, default=None, help="Seed of the demonstration's start state.")
@click.option("--horizon", type=click.IntRange(1), default=None)
@click.option("--force", is_flag=True, help="Re-run even when the stage is up to date.")
def demo(config_path, out, seed, env, demo_seed, horizon, force):
    """Record the scripted demonstration.

    Here --seed seeds the demonstration itself; it is the only seed this stage uses.
    """
    dseed = demo_seed if demo_seed is not None else seed
    cfg = load_config(config_path, out, None, demo={"env": env, "seed": dseed, "horizon": horizon})
    _run(cfg, "demo", force=force)


@cli.command()
@_common
@click.option("--interval", type=click.IntRange(1), default=None, help="Seed-state spacing I.")
@click.option("--branches", type=click.IntRange(1), default=None, help="Branches per seed N.")
@click.option("--steps", type=click.IntRange(1), default=None, help="Steps per branch K.")
@click.option("--workers", type=click.IntRange(1), default=None)
@click.option("--force", is_flag=True)
def sample(config_path, out, seed, interval, branches, steps, workers, force):
    """Forward-sample the pair dataset around the demonstration."""
    cfg = load_config(config_path, out, seed,
                      sampling={"interval": interval, "branches": branches, "steps": steps})
    _run(cfg, "sample", workers=workers, force=force)


@cli.command("train-repr")
@_common
@click.option("--iterations", type=click.IntRange(0), default=None)
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=None)
@click.option("--batch-size", type=click.IntRange(1), default=None)
@click.option("--force", is_flag=True)
def train_repr(config_path, out, seed, iterations, lr, batch_size, force):
    """Train the static/dynamic representation on the pair dataset."""
    cfg = load_config(config_path, out, seed,
                      train={"iterations": iterations, "lr": lr, "batch_size": batch_size})
    _run(cfg, "train", force=force)


@cli.command("bundle-reward")
@_common
@click.option("--force", is_flag=True)
def bundle_reward(config_path, out, seed, force):
    """Freeze the trained model and reference embeddings into a reward bundle."""
    _run(load_config(config_path, out, seed), "bundle", force=force)


@cli.command("eval-reward")
@_common
@click.option("--heldout-seed", type=U64, default=None)
@click.option("--force", is_flag=True)
def eval_reward(config_path, out, seed, heldout_seed, force):
    """Write per-step reward CSVs for the demo, a held-out demo and a move-away run."""
    cfg = load_config(config_path, out, seed, eval={"heldout_seed": heldout_seed})
    path = _run(cfg, "eval", force=force)
    click.echo((path / "eval.json").read_text().rstrip())


@cli.command("train-rl")
@_common
@click.option("--source", type=click.Choice(SOURCES), required=True)
@click.option("--rl-seed", type=click.IntRange(0), default=0, show_default=True, help="Seed index of the run.")
@click.option("--episodes", type=click.IntRange(1), default=None)
def train_rl(config_path, out, seed, source, rl_seed, episodes):
    """Train one SAC agent and write its episode log."""
    cfg = load_config(config_path, out, seed, bench={"episodes": episodes})
    blob = None
    if source == "dense":
        pipe = Pipeline(cfg)
        pipe.run("bundle", progress=_progress)
        _, blob = pipe.load_bundle()
    records = run_single(cfg, source, rl_seed, blob)
    path = Path(cfg.out) / log_name(source, rl_seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    write_log(tmp, records)
    os.replace(tmp, path)
    s = metrics.RunSummary.from_records(source, rl_seed, records)
    click.echo(f"{path}  first_success={s.first_success}  final_rate={s.final_rate:.3f}  auc={s.auc:.3f}")


@cli.command()
@_common
@click.option("--workers", type=click.IntRange(1), default=None, help="Parallel SAC runs.")
@click.option("--episodes", type=click.IntRange(1), default=None)
@click.option("--force", is_flag=True)
def bench(config_path, out, seed, workers, episodes, force):
    """Run the whole pipeline through the SAC benchmark (resuming finished stages)."""
    cfg = load_config(config_path, out, seed, bench={"episodes": episodes})
    path = _run(cfg, "bench", workers=workers, force=force)
    _print_summary(metrics.read_summary(path / SUMMARY_FILE))


@cli.command()
@_common
@click.option("--check", is_flag=True, help="Fail when stored aggregates differ from the recomputed ones.")
def export(config_path, out, seed, check):
    """Recompute metrics and success curves from the run logs."""
    cfg = load_config(config_path, out, seed)
    root = Path(cfg.out)
    result = load_benchmark(root)
    if check:
        stored = (root / SUMMARY_FILE).read_bytes() if (root / SUMMARY_FILE).exists() else None
        fresh = root / ".metrics-check.csv"
        metrics.write_summary(fresh, result.summaries())
        same = stored == fresh.read_bytes()
        fresh.unlink()
        if not same:
            raise ContractError(f"{root / SUMMARY_FILE} does not match the aggregates recomputed from the logs")
    written = write_benchmark(root, result)
    for rel in written:
        if rel == SUMMARY_FILE or rel in {curve_name(s) for s in result.sources()}:
            click.echo(str(root / rel))
    _print_summary(result.summaries())


def _print_summary(summaries):
    for s in summaries:
        first = "-" if s.first_success is None else s.first_success
        click.echo(f"{s.source:12s} seed {s.seed}  first_success {first!s:>4}  "
                   f"final20 {s.final_rate:.3f}  auc {s.auc:.3f}  {s.status}", err=True)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="densereward", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except click.ClickException as exc:  # unknown flag or subcommand, bad value
        exc.show()
        return EXIT_INVALID
    except (ConfigError, ValidationError, ContractError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except Exception as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
