"""``uno3d`` command line: gen-geology, simulate, train, predict, evaluate, info.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 partial failure
(some samples failed).
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .config import ConfigError, load_config
from .container import ContainerError, Dataset, read_header

__all__ = ["main", "cli", "EXIT_OK", "EXIT_USAGE", "EXIT_RUNTIME", "EXIT_PARTIAL"]

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("uno3d")


class UsageFailure(Exception):
    pass


def _config(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        raise UsageFailure(str(exc)) from exc


def _finish(result: pipeline.CommandResult, what: str) -> int:
    click.echo(f"{what}: {result.n_ok} ok -> {result.out}")
    if result.failures:
        for index, reason in result.failures:
            click.echo(f"  failed sample {index}: {reason}", err=True)
        click.echo(f"{len(result.failures)} sample(s) failed", err=True)
        return EXIT_PARTIAL
    return EXIT_OK


_config_opt = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                           help="YAML run configuration (desk preset when omitted).")
_out_opt = click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
_workers_opt = click.option("--workers", type=click.IntRange(min=1), default=None,
                            help="Worker processes (default: run.workers of the config).")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Surface ground-motion surrogate: data generation, training and evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command("gen-geology")
@_config_opt
@click.option("--count", type=click.IntRange(min=0), default=None, help="Number of geologies.")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Root seed (u64).")
@_workers_opt
@_out_opt
def gen_geology_cmd(config_path, count, seed, workers, out):
    """Draw random layered velocity volumes."""
    cfg = _config(config_path)
    res = pipeline.gen_geology(cfg, out, count, seed, workers or cfg.run.workers)
    return _finish(res, "gen-geology")


@cli.command("simulate")
@_config_opt
@click.option("--geology", "geology_dir", required=True, type=click.Path(file_okay=False),
              help="Geology dataset directory.")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
              help="Ignored (simulations are deterministic); accepted for uniformity.")
@_workers_opt
@_out_opt
def simulate_cmd(config_path, geology_dir, seed, workers, out):
    """Run the wave solver on every geology."""
    cfg = _config(config_path)
    res = pipeline.simulate(cfg, geology_dir, out, workers or cfg.run.workers)
    return _finish(res, "simulate")


@cli.command("train")
@_config_opt
@click.option("--data", "records_dir", required=True, type=click.Path(file_okay=False),
              help="Records dataset directory.")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
              help="Seed for initialization, split and shuffling.")
@_workers_opt
@_out_opt
def train_cmd(config_path, records_dir, seed, workers, out):
    """Fit the operator and write checkpoints and the loss curve."""
    cfg = _config(config_path)
    res = pipeline.train_model(cfg, records_dir, out, seed)
    if res.failures:
        click.echo(f"training aborted: {res.failures[0][1]}", err=True)
        return EXIT_RUNTIME
    click.echo(f"train: best epoch {res.extra.get('best_epoch')} -> {res.out}")
    return EXIT_OK


@cli.command("predict")
@_config_opt
@click.option("--model", "model_dir", required=True, type=click.Path(file_okay=False), help="Model checkpoint.")
@click.option("--data", "records_dir", required=True, type=click.Path(file_okay=False),
              help="Records dataset directory.")
@click.option("--samples", default=None, help="Comma-separated sample indices (default: all).")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Unused; accepted for uniformity.")
@_workers_opt
@_out_opt
def predict_cmd(config_path, model_dir, records_dir, samples, seed, workers, out):
    """Predict surface movies for the chosen samples."""
    ids = None
    if samples:
        try:
            ids = [int(s) for s in samples.split(",") if s.strip()]
        except ValueError as exc:
            raise UsageFailure(f"--samples expects comma-separated integers, got {samples!r}") from exc
    res = pipeline.predict(model_dir, records_dir, out, ids)
    return _finish(res, "predict")


@cli.command("evaluate")
@_config_opt
@click.option("--pred", "pred_dir", required=True, type=click.Path(file_okay=False),
              help="Predictions dataset directory.")
@click.option("--data", "records_dir", required=True, type=click.Path(file_okay=False),
              help="Records dataset directory.")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Unused; accepted for uniformity.")
@_workers_opt
@_out_opt
def evaluate_cmd(config_path, pred_dir, records_dir, seed, workers, out):
    """Write MAE, trace, GOF and spectra reports."""
    cfg = _config(config_path)
    res = pipeline.evaluate(cfg, pred_dir, records_dir, out)
    click.echo(json.dumps(res.extra["mae_mean"]))
    return _finish(res, "evaluate")


@cli.command("info")
@click.argument("path", type=click.Path(exists=True))
def info_cmd(path):
    """Describe a tensor file or a dataset directory."""
    p = Path(path)
    if p.is_dir():
        ds = Dataset(p)
        man = ds.manifest
        click.echo(f"kind: {ds.kind}")
        click.echo(f"format: {man['format']} v{man['format_version']}")
        click.echo(f"samples: {len(ds)}  failures: {len(man.get('failures', []))}")
        click.echo(f"root_seed: {man.get('root_seed')}")
        if ds.kind == "model":
            click.echo(f"parameters: {man.get('n_parameters')}")
        elif len(ds):
            for key, entry in ds.samples[0]["files"].items():
                click.echo(f"  {key}: {entry['dtype']} {entry['shape']}")
    else:
        click.echo(json.dumps(read_header(p)))
    return EXIT_OK


def main(argv=None) -> int:
    """Entry point; returns the process exit code instead of raising."""
    try:
        rv = cli.main(args=argv, prog_name="uno3d", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except click.exceptions.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except UsageFailure as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except (ContainerError, FileNotFoundError, OSError, ValueError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    if rv is None or not isinstance(rv, int):
        return EXIT_OK
    return rv


if __name__ == "__main__":
    sys.exit(main())
