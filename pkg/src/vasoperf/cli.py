"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numeric/geometric failure.
Seed fan-out concurrency is capped by the VASOPERF_THREADS environment
variable (default 1, sequential).
"""

import functools
import json
import os
import sys

import click
import numpy as np

from vasoperf import pipeline as pl
from vasoperf.config import ExperimentConfig, load_config
from vasoperf.errors import ConfigError, VasoperfError
from vasoperf.network import load_network, partition_by_flow, \
    save_network, save_partition


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kw):
        try:
            return fn(*args, **kw)
        except ConfigError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(2)
        except VasoperfError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(3)
    return wrapper


def _config(path):
    return load_config(path) if path else ExperimentConfig({})


@click.group()
def main():
    """Perfusion models: fully-resolved and hybrid, with comparison tools."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="TOML experiment configuration")
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
@_guarded
def generate(config_path, seed, out):
    """Generate a synthetic vascular network and write it as CSV."""
    cfg = _config(config_path)
    network, meta, box = pl.build_network(cfg, seed)
    save_network(network, out)
    click.echo(f"wrote {network.n_nodes} nodes / {network.n_segments} "
               f"segments to {out}")


@main.command("solve-full")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--network", "network_dir", type=click.Path(exists=True),
              default=None, help="network CSV directory (default: generate)")
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
@_guarded
def solve_full_cmd(config_path, network_dir, seed, out):
    """Assign boundary conditions and solve the fully-resolved model."""
    cfg = _config(config_path)
    if network_dir:
        cfg.data["network"] = {"kind": "import", "path": network_dir}
    os.makedirs(out, exist_ok=True)
    metrics = pl.run_seed(_no_calibration(cfg), seed, out)
    click.echo(json.dumps({k: v for k, v in metrics.items()
                           if isinstance(v, (int, float))}, indent=2,
                          sort_keys=True))


def _no_calibration(cfg: ExperimentConfig) -> ExperimentConfig:
    data = json.loads(json.dumps(cfg.data))
    data["calibration"]["enabled"] = False
    return ExperimentConfig(data)


@main.command()
@click.option("--network", "network_dir", required=True,
              type=click.Path(exists=True))
@click.option("--flows", required=True, type=click.Path(exists=True),
              help="flows.csv from a full-model solve")
@click.option("--keep-fraction", type=float, default=0.10)
@click.option("--min-component-length", type=float, default=250.0)
@click.option("--out", required=True, type=click.Path())
@_guarded
def partition(network_dir, flows, keep_fraction, min_component_length, out):
    """Partition a solved network into large and small vessels."""
    network = load_network(network_dir)
    q = np.zeros(network.n_segments)
    with open(flows, encoding="utf-8") as f:
        next(f)
        for line in f:
            sid, qv, _ = line.split(",")
            q[int(sid)] = float(qv)
    pnet = partition_by_flow(network, q, keep_fraction, min_component_length)
    save_partition(pnet, out)
    n_large = int((pnet.partition == "large").sum())
    click.echo(f"{n_large} large / {pnet.n_segments - n_large} small -> {out}")


@main.command("solve-hybrid")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--penalty", default="auto")
@click.option("--out", required=True, type=click.Path())
@_guarded
def solve_hybrid_cmd(config_path, seed, penalty, out):
    """Run the pipeline through the hybrid solve and comparison."""
    cfg = _config(config_path)
    if penalty != "auto":
        cfg.data["hybrid"]["penalty"] = float(penalty)
    metrics = pl.run_seed(_no_calibration(cfg), seed, out)
    click.echo(json.dumps({k: v for k, v in metrics.items()
                           if isinstance(v, (int, float))}, indent=2,
                          sort_keys=True))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
@_guarded
def compare(config_path, seed, out):
    """Solve both models and write the comparison metrics."""
    cfg = _config(config_path)
    pl.run_seed(_no_calibration(cfg), seed, out)
    with open(os.path.join(out, "comparison.json"), encoding="utf-8") as f:
        click.echo(f.read())


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
@_guarded
def rev(config_path, seed, out):
    """Grow probe cubes, select the REV size and write REV statistics."""
    cfg = _config(config_path)
    cfg.data["calibration"]["enabled"] = False
    pl.run_seed(cfg, seed, out)
    click.echo(open(os.path.join(out, "rev_stats.csv"), encoding="utf-8").read())


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--mode", type=click.Choice(["scalar", "vf-linear"]),
              default="scalar")
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
@_guarded
def calibrate(config_path, mode, seed, out):
    """Calibrate the hybrid model against the fully-resolved reference."""
    cfg = _config(config_path)
    cfg.data["calibration"]["enabled"] = True
    cfg.data["calibration"]["mode"] = mode
    pl.run_seed(cfg, seed, out)
    with open(os.path.join(out, "result.json"), encoding="utf-8") as f:
        click.echo(f.read())


@main.command("pipeline")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def pipeline_cmd(config_path, out):
    """Run every seed end to end and aggregate the metrics."""
    cfg = _config(config_path)
    outdir = pl.run_pipeline(cfg, out)
    click.echo(f"experiment written to {outdir}")


@main.command()
@click.argument("experiment_dir", type=click.Path(exists=True))
@_guarded
def report(experiment_dir):
    """Summarize a finished experiment directory."""
    click.echo(pl.write_report(experiment_dir))


if __name__ == "__main__":
    main()
