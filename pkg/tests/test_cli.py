"""CLI subcommands, the experiment pipeline, artifact formats and
reproducibility."""

import json

import pytest
from click.testing import CliRunner

from vasoperf.cli import main
from vasoperf.config import ExperimentConfig
from vasoperf.errors import ConfigError

SMALL_CONFIG = """
[network]
kind = "two_scale"
box = [300.0, 300.0, 300.0]
pitch = 60.0
radius = 6.0
backbone_every = 3
backbone_radius = 32.0
n_stubs = 60
max_segment_length = 60.0

[mesh]
resolution = 7
enlargement = 2.0
grading = 1.5

[rev]
l_rev = 150.0

[calibration]
enabled = false

[run]
seeds = [0]
out = "exp"
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    cfg = path / "small.toml"
    cfg.write_text(SMALL_CONFIG)
    return path, str(cfg)


def test_config_defaults_and_validation():
    cfg = ExperimentConfig({})
    assert cfg["partition"]["keep_fraction"] == 0.10
    assert cfg["physics"]["pi_blood"] == 2666.4
    assert len(cfg.hash()) == 16
    with pytest.raises(ConfigError):
        ExperimentConfig({"partition": {"keep_fraction": 1.5}})
    with pytest.raises(ConfigError):
        ExperimentConfig({"run": {"seeds": []}})
    with pytest.raises(ConfigError):
        ExperimentConfig({"calibration": {"mode": "bayes"}})
    with pytest.raises(ConfigError):
        ExperimentConfig({"bc": {"unknown_key": 1.0}})


def test_config_hash_stable_and_sensitive():
    a = ExperimentConfig({})
    b = ExperimentConfig({})
    c = ExperimentConfig({"partition": {"keep_fraction": 0.15}})
    assert a.hash() == b.hash()
    assert a.hash() != c.hash()


def test_invalid_keep_fraction_exit_code(workspace):
    path, _ = workspace
    bad = path / "bad.toml"
    bad.write_text("[partition]\nkeep_fraction = 1.5\n")
    runner = CliRunner()
    result = runner.invoke(main, ["pipeline", "--config", str(bad)])
    assert result.exit_code == 2


def test_generate_and_partition_roundtrip(workspace):
    path, cfg = workspace
    runner = CliRunner()
    net_dir = path / "net"
    result = runner.invoke(main, ["generate", "--config", cfg, "--seed", "0",
                                  "--out", str(net_dir)])
    assert result.exit_code == 0, result.output
    assert (net_dir / "nodes.csv").exists()
    assert (net_dir / "segments.csv").exists()


def test_full_pipeline_artifacts(workspace):
    path, cfg = workspace
    runner = CliRunner()
    out = path / "exp"
    result = runner.invoke(main, ["pipeline", "--config", cfg,
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    seed_dir = out / "seed_0"
    for name in ["comparison.json", "summary.json", "flows.csv",
                 "partition.csv", "rev_stats.csv", "rev_errors.csv",
                 "growth_curves.csv", "radial_profile.csv",
                 "scatter_large_pressure.csv", "scatter_if_pressure.csv",
                 "scatter_small_pressure.csv", "full_p_if.vtk",
                 "hybrid_fields.vtk", "hybrid_network.vtk", "timing.json"]:
        assert (seed_dir / name).exists(), name
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["n_seeds"] == 1 and not agg["failures"]
    comp = json.loads((seed_dir / "comparison.json").read_text())
    assert set(comp) >= {"r2_large", "r2_small", "r2_if", "r2_flow_small",
                         "r2_total", "config_hash"}
    # composition identity straight from the emitted file
    tot = (comp["r2_large"] + comp["r2_small"] + comp["r2_if"]
           + comp["r2_flow_small"]) / 4.0
    assert comp["r2_total"] == pytest.approx(tot, abs=1e-12)
    # growth-curve rows: one per (center, size) sample
    rows = (seed_dir / "growth_curves.csv").read_text().strip().split("\n")[1:]
    centers = {int(r.split(",")[0]) for r in rows}
    assert centers == set(range(10))


def test_rerun_metric_files_byte_identical(workspace):
    path, cfg = workspace
    runner = CliRunner()
    out1 = path / "exp"          # produced by the previous test
    out2 = path / "exp_rerun"
    result = runner.invoke(main, ["pipeline", "--config", cfg,
                                  "--out", str(out2)])
    assert result.exit_code == 0, result.output
    for rel in ["seed_0/comparison.json", "seed_0/rev_stats.csv",
                "seed_0/flows.csv", "aggregate.json"]:
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel


def test_report_idempotent(workspace):
    path, _ = workspace
    runner = CliRunner()
    out = path / "exp"
    r1 = runner.invoke(main, ["report", str(out)])
    r2 = runner.invoke(main, ["report", str(out)])
    assert r1.exit_code == 0 and r2.exit_code == 0
    assert r1.output == r2.output
    assert "r2_total" in r1.output


def test_vtk_outputs_wellformed(workspace):
    path, _ = workspace
    vtk = (path / "exp" / "seed_0" / "full_p_if.vtk").read_text().split("\n")
    assert vtk[0].startswith("# vtk DataFile")
    assert "DATASET UNSTRUCTURED_GRID" in vtk[3]
    n_points = int(vtk[4].split()[1])
    assert n_points > 0
    # POINT_DATA section carries the pressure field
    assert any(line.startswith("POINT_DATA") for line in vtk)
    assert any("p_if" in line for line in vtk)
    poly = (path / "exp" / "seed_0" / "hybrid_network.vtk").read_text()
    assert "DATASET POLYDATA" in poly and "lambda" in poly
