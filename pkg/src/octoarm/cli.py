"""Command-line interface: reach, grasp, sweep, simulate, validate."""

import json
import sys

import click

from .errors import OctoarmError
from .harness import config_defaults, load_config, run, sweep, validate_config


def _load(config_path):
    if config_path is None:
        return validate_config({})
    return load_config(config_path)


def _fail(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if hasattr(exc, "field"):
        payload["field"] = exc.field
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


@click.group()
def main():
    """Muscular-arm reaching/grasping design and dynamic validation."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON experiment config.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--target", nargs=3, type=float, default=None,
              help="Override the reach target (meters).")
@click.option("--dynamics", is_flag=True, help="Follow up with a time-domain run.")
def reach(config_path, out_dir, target, dynamics):
    """Design activations that reach a target tip pose."""
    try:
        cfg = _load(config_path)
        cfg["task"]["type"] = "reach"
        if target is not None:
            cfg["task"]["target_m"] = list(target)
        report = run(cfg, out_dir=out_dir, dynamics=dynamics)
    except (OctoarmError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--out", "out_dir", default=None)
@click.option("--radius", type=float, default=None,
              help="Override the cylinder radius (meters).")
@click.option("--dynamics", is_flag=True)
def grasp(config_path, out_dir, radius, dynamics):
    """Design activations that wrap the arm around a cylinder."""
    try:
        cfg = _load(config_path)
        cfg["task"]["type"] = "grasp"
        if radius is not None:
            cfg["task"]["cylinder_radius_m"] = radius
        report = run(cfg, out_dir=out_dir, dynamics=dynamics)
    except (OctoarmError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps(report, indent=2))


@main.command(name="sweep")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--out", "out_dir", default=None)
@click.option("--threads", type=int, default=1)
@click.option("--axis", type=click.Choice(["reach-grid", "grasp-radius",
                                           "grasp-rotation-e1",
                                           "grasp-rotation-e2"]),
              required=True)
@click.option("--iterations", type=int, default=20000,
              help="Per-case iteration cap.")
def sweep_cmd(config_path, out_dir, threads, axis, iterations):
    """Run a family of related cases and merge the error table."""
    try:
        cfg = _load(config_path)
        cfg["solver"]["max_iterations"] = iterations
        variation = {"axis": axis.replace("-", "_")}
        if axis.startswith("grasp"):
            cfg["task"]["type"] = "grasp"
        results = sweep(cfg, variation, out_dir=out_dir, threads=threads)
    except (OctoarmError, OSError) as exc:
        _fail(exc)
    done = sum(1 for r in results.values() if r is not None)
    click.echo(json.dumps({"cases": len(results), "completed": done}))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--out", "out_dir", default=None)
def simulate(config_path, out_dir):
    """Design activations, then validate them in a dynamic simulation."""
    try:
        cfg = _load(config_path)
        report = run(cfg, out_dir=out_dir, dynamics=True)
    except (OctoarmError, OSError) as exc:
        _fail(exc)
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.option("--seed", type=int, default=0, help="Seed for the random draws.")
@click.option("--quick", is_flag=True, help="Smaller draw counts.")
def validate(seed, quick):
    """Run the oracle checks: gradients, costate equivalence, path independence."""
    from .checks import run_all

    results = run_all(seed=seed, quick=quick)
    failed = 0
    for res in results:
        status = "PASS" if res["passed"] else "FAIL"
        click.echo(f"[{status}] {res['name']}: {res['detail']}")
        failed += 0 if res["passed"] else 1
    sys.exit(1 if failed else 0)


@main.command(name="print-config")
def print_config():
    """Print the default configuration."""
    click.echo(json.dumps(config_defaults(), indent=2))


if __name__ == "__main__":
    main()
