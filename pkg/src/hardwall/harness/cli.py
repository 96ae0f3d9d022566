"""Command-line entry point: ``hardwall tables | run | report``."""
from __future__ import annotations

import sys
import time

import click

from .. import tail_grid as tg
from ..errors import HardWallError
from .config import CACHE_ENV, EXPERIMENTS, ExperimentConfig, _parse_alpha, default_cache_dir, load_config
from .experiments import Context, run_experiment
from .output import read_summaries, write_outputs

__all__ = ["main"]

EXIT_FAILED_CHECKS = 1
EXIT_ERROR = 2


@click.group()
def main():
    """Conditioned branching random walk experiments."""


@main.command()
@click.option("--nref", "n_ref", type=int, default=tg.N_REF, show_default=True, help="table depth")
@click.option("--dx", type=float, default=0.01, show_default=True)
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None,
              help=f"table cache (default: ${CACHE_ENV} or ~/.cache/hardwall)")
@click.option("--rebuild", is_flag=True, help="ignore any cached table")
def tables(n_ref, dx, cache_dir, rebuild):
    """Build or verify the cached survival table."""
    cache_dir = default_cache_dir() if cache_dir is None else cache_dir
    spec = tg.default_grid_spec(n_ref, dx)
    path = tg.cache_path(cache_dir, n_ref, spec)
    t0 = time.perf_counter()
    try:
        if rebuild and path.exists():
            path.unlink()
        tab, rebuilt = tg.load_or_build(n_ref, dx, cache_dir)
    except HardWallError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    secs = time.perf_counter() - t0
    click.echo(f"{'built' if rebuilt else 'loaded'} N={tab.N} dx={tab.dx} points={tab.spec.length} "
               f"in {secs:.1f}s -> {path}")
    click.echo(f"proxy gap sup|p_{n_ref // 2} - p_{n_ref}| on [-5,5]: {tg.cauchy_gap(tab, n_ref // 2, n_ref):.3e}")


@main.command()
@click.argument("experiment", type=click.Choice(EXPERIMENTS))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n", type=int, default=None)
@click.option("--replicas", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--dx", type=float, default=None)
@click.option("--nref", "n_ref", type=int, default=None)
@click.option("--k", "k_plus_delta", type=int, default=None, help="depth of the limiting-law construction")
@click.option("--alpha", "alpha", multiple=True, help="exponent(s), e.g. 0.5*c0")
@click.option("--out", "output_dir", type=click.Path(file_okay=False), default=None)
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None)
@click.option("--threads", type=int, default=None)
@click.option("--budget", "budget_seconds", type=float, default=None, help="wall-clock cap in seconds")
def run(experiment, config_path, alpha, **opts):
    """Run one named experiment and write CSV and JSON outputs."""
    alphas = tuple(v for a in alpha for v in _parse_alpha(a)) or None
    overrides = dict(opts, experiment=experiment, alphas=alphas)
    try:
        if config_path is not None:
            cfg = load_config(config_path, **overrides)
        else:
            cfg = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
        cfg = cfg.resolved()
        t0 = time.perf_counter()
        ctx = Context(cfg.dx, cfg.n_ref, cfg.cache_dir, cfg.threads, cfg.budget_seconds)
        res = run_experiment(ctx, cfg)
        wall = time.perf_counter() - t0
        summary = write_outputs(res, cfg.echo(), wall, cfg.output_dir)
    except HardWallError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    for r in res.reports:
        click.echo(r.line())
    click.echo(f"wrote {', '.join(summary['files'])} in {wall:.1f}s")
    if not summary["all_passed"]:
        sys.exit(EXIT_FAILED_CHECKS)


@main.command()
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False))
def report(out_dir):
    """Print the checks recorded in an output directory."""
    summaries = read_summaries(out_dir)
    if not summaries:
        click.echo("no summaries found", err=True)
        sys.exit(EXIT_ERROR)
    failed = False
    for s in summaries:
        click.echo(f"{s['experiment']} ({s['wall_seconds']:.1f}s)")
        for r in s["reports"]:
            mark = "PASS" if r["passed"] else "FAIL"
            failed |= not r["passed"]
            click.echo(f"  [{mark}] {r['name']}: {r['statistic']:.6g} <= {r['threshold']:.6g}")
        for k, v in sorted(s["certificates"].items()):
            click.echo(f"  {k} = {v}")
    if failed:
        sys.exit(EXIT_FAILED_CHECKS)
