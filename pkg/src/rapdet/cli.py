"""Command-line front end: one subcommand per pipeline stage.

Every subcommand takes the same flags. --config points at a scenario JSON
file (all defaults when omitted); --seed, --out, and --backend override the
corresponding config fields; --workers parallelizes trace-level work without
changing any output byte. Failures print a one-line diagnostic to stderr and
exit non-zero; a failed stage removes whatever it had written.
"""

from __future__ import annotations

import sys

import click

from .scenario import (
    load_scenario,
    stage_detect,
    stage_evaluate,
    stage_gen_scene,
    stage_inject,
    stage_reproduce,
)


def _common_options(fn):
    for option in reversed(
        [
            click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                         help="Scenario JSON file (defaults apply when omitted)."),
            click.option("--out", type=click.Path(file_okay=False), default=None,
                         help="Output directory (overrides the config's out_dir)."),
            click.option("--seed", type=int, default=None,
                         help="Master seed; rederives every component seed."),
            click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True,
                         help="Worker processes; never affects outputs."),
            click.option("--backend", type=click.Choice(["fingerprint", "distance"]), default=None,
                         help="Positioning backend (overrides the config)."),
        ]
    ):
        fn = option(fn)
    return fn


def _run(stage, config_path, out, seed, workers, backend) -> None:
    try:
        config = load_scenario(config_path, seed=seed, out=out, backend=backend)
        created = stage(config, workers=workers)
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for path in created:
        click.echo(str(path))


@click.group()
@click.version_option(package_name="rapdet")
def main() -> None:
    """Rogue access point detection pipeline."""


@main.command("gen-scene")
@_common_options
def gen_scene(config_path, out, seed, workers, backend) -> None:
    """Generate the AP registry, fingerprint grid, and benign trace."""
    _run(stage_gen_scene, config_path, out, seed, workers, backend)


@main.command("inject")
@_common_options
def inject_cmd(config_path, out, seed, workers, backend) -> None:
    """Write attacked traces with per-timestamp labels."""
    _run(stage_inject, config_path, out, seed, workers, backend)


@main.command("detect")
@_common_options
def detect_cmd(config_path, out, seed, workers, backend) -> None:
    """Calibrate each detector and write per-case verdict streams."""
    _run(stage_detect, config_path, out, seed, workers, backend)


@main.command("evaluate")
@_common_options
def evaluate_cmd(config_path, out, seed, workers, backend) -> None:
    """Write roc.csv, recovery.csv, and sampling.csv."""
    _run(stage_evaluate, config_path, out, seed, workers, backend)


@main.command("reproduce")
@_common_options
def reproduce_cmd(config_path, out, seed, workers, backend) -> None:
    """Run every stage in order from a single config."""
    _run(stage_reproduce, config_path, out, seed, workers, backend)


if __name__ == "__main__":
    main()
