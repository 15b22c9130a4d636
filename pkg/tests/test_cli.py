import json
import subprocess
import sys

import numpy as np
import pytest

from fracdesign import artifacts, cli
from fracdesign import penalty as pen
from fracdesign.mesh import build_extension_grid

SMALL_CONFIG = {
    "problem": {"n": 1, "L": 2.0, "Y": 1.5, "nx": 129, "ny": 17,
                "alpha": 0.6, "grading": 2.0, "omega": 0.5,
                "D": {"kind": "interval", "bounds": [-0.25, 0.25]},
                "phi": {"kind": "constant", "value": 1.0}},
    "schedule": {"eps0": 1.0, "ratio": 0.5, "max_steps": 4},
    "solver": {"tol": 1e-10, "max_outer": 60},
    "seed": 7,
}


def run_cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "fracdesign.cli", *args],
                          cwd=cwd, capture_output=True, text=True)


def write_config(tmp_path, extra=None):
    cfg = json.loads(json.dumps(SMALL_CONFIG))
    if extra:
        for key, val in extra.items():
            node = cfg
            parts = key.split(".")
            for pc in parts[:-1]:
                node = node.setdefault(pc, {})
            node[parts[-1]] = val
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_invalid_alpha_names_field(tmp_path):
    path = write_config(tmp_path, {"problem.alpha": 1.5})
    res = run_cli(["solve", "-c", str(path)], tmp_path)
    assert res.returncode == cli.EXIT_CONFIG
    assert "problem.alpha" in res.stderr


def test_invalid_ratio_names_field(tmp_path):
    path = write_config(tmp_path, {"schedule.ratio": 2.0})
    res = run_cli(["solve", "-c", str(path)], tmp_path)
    assert res.returncode == cli.EXIT_CONFIG
    assert "schedule.ratio" in res.stderr


def test_validate_config_ranges():
    with pytest.raises(cli.ConfigError, match="problem.nx"):
        cli.validate_config({"problem": {"nx": 4}})
    with pytest.raises(cli.ConfigError, match="problem.D.kind"):
        cli.validate_config({"problem": {"D": {"kind": "blob"}}})
    with pytest.raises(cli.ConfigError, match="seed"):
        cli.validate_config({"seed": "abc"})
    cfg = cli.validate_config({})
    assert cfg["problem"]["alpha"] == 0.6


def test_set_overrides_config(tmp_path):
    path = write_config(tmp_path)
    res = run_cli(["solve", "-c", str(path), "--set", "problem.alpha=2.0"],
                  tmp_path)
    assert res.returncode == cli.EXIT_CONFIG
    assert "problem.alpha" in res.stderr


# ---------------------------------------------------------------------------
# artifact round trips
# ---------------------------------------------------------------------------

def test_field_container_roundtrip_bitexact(tmp_path):
    grid = build_extension_grid(1, 1.0, 1.0, 33, 9, 0.4, grading=2.0)
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=grid.field_shape),
              "b": rng.normal(size=grid.trace_shape)}
    path = tmp_path / "f.field"
    artifacts.write_field_container(path, grid, arrays, {"eps": 0.25})
    grid2, arrays2, header = artifacts.read_field_container(path)
    assert grid2.alpha == grid.alpha and grid2.nx == grid.nx
    for k in arrays:
        assert arrays2[k].tobytes() == arrays[k].tobytes()
    assert header["eps"] == 0.25
    # writing again produces identical bytes
    path2 = tmp_path / "g.field"
    artifacts.write_field_container(path2, grid, arrays, {"eps": 0.25})
    assert path.read_bytes() == path2.read_bytes()


def test_configuration_roundtrip(tmp_path, small_minimizer):
    cfg, p = small_minimizer
    path = tmp_path / "m.field"
    artifacts.save_configuration(path, cfg, meta={"eps": p.eps,
                                                  "omega": p.omega})
    loaded, header = artifacts.load_configuration(path)
    assert np.array_equal(loaded.extension.values, cfg.extension.values)
    assert np.array_equal(loaded.positivity_mask, cfg.positivity_mask)
    assert header["omega"] == p.omega
    assert pen.energy_I_eps(loaded, p) == pen.energy_I_eps(cfg, p)


def test_truncated_artifact_rejected(tmp_path, small_minimizer):
    cfg, _ = small_minimizer
    path = tmp_path / "m.field"
    artifacts.save_configuration(path, cfg)
    raw = path.read_bytes()
    bad = tmp_path / "bad.field"
    bad.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(artifacts.ArtifactFormatError, match="truncated"):
        artifacts.read_field_container(bad)
    bad2 = tmp_path / "bad2.field"
    bad2.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(artifacts.ArtifactFormatError, match="magic"):
        artifacts.read_field_container(bad2)


def test_trace_csv_roundtrip(tmp_path, small_minimizer):
    cfg, _ = small_minimizer
    path = tmp_path / "trace.csv"
    artifacts.write_trace_csv(path, cfg.trace_values)
    back = artifacts.read_trace_csv(path, cfg.grid)
    assert np.array_equal(back.values, cfg.trace_values.values)


# ---------------------------------------------------------------------------
# subcommands end to end
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("solve")
    path = tmp / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    res = run_cli(["solve", "-c", str(path), "--set",
                   f"output.dir={tmp / 'out'}"], tmp)
    assert res.returncode == 0, res.stderr
    return tmp / "out"


def test_solve_writes_artifacts(solved_dir):
    assert (solved_dir / "sweep.csv").exists()
    assert (solved_dir / "report.json").exists()
    assert (solved_dir / "minimizer.field").exists()
    assert (solved_dir / "trace.csv").exists()
    header = (solved_dir / "sweep.csv").read_text().splitlines()[0]
    assert header == "eps,volume,energy,lambda_est,fb_points"
    report = json.loads((solved_dir / "report.json").read_text())
    assert report["status"] == "ok"
    assert report["attained"] is True
    assert abs(report["terminal_volume"] - 0.5) <= 4.0 / 128


def test_diagnose_artifact(solved_dir, tmp_path):
    res = run_cli(["diagnose", "--set", f"output.dir={tmp_path / 'd'}",
                   str(solved_dir / "minimizer.field")], tmp_path)
    assert res.returncode == 0, res.stderr
    report = json.loads((tmp_path / "d" / "report.json").read_text())
    assert report["status"] == "ok"
    assert "passes" in report


def test_diagnose_rejects_malformed(solved_dir, tmp_path):
    bad = tmp_path / "bad.field"
    raw = (solved_dir / "minimizer.field").read_bytes()
    bad.write_bytes(raw[:40])
    res = run_cli(["diagnose", str(bad)], tmp_path)
    assert res.returncode == cli.EXIT_ARTIFACT
    assert "artifact error" in res.stderr


def test_oracle_1d(tmp_path):
    path = write_config(tmp_path, {"problem.nx": 65, "problem.ny": 9,
                                   "problem.L": 1.0,
                                   "schedule.max_steps": 1})
    res = run_cli(["oracle-1d", "-c", str(path), "--eps", "0.25",
                   "--set", f"output.dir={tmp_path / 'o'}"], tmp_path)
    assert res.returncode == 0, res.stderr
    out = json.loads(res.stdout.strip().splitlines()[-1])
    assert out["volume"] >= 0.0
    assert (tmp_path / "o" / "oracle.json").exists()


def test_validate_operators_degraded_mode(tmp_path):
    res = run_cli(["validate-operators", "--nx", "64", "--ny", "17",
                   "--out", str(tmp_path / "v.json")], tmp_path)
    assert res.returncode == 0, res.stderr
    assert "degraded" in res.stdout
    rep = json.loads((tmp_path / "v.json").read_text())
    assert rep["degraded_mode"] is True


def test_solver_failure_exit_code(tmp_path):
    path = write_config(tmp_path, {"solver.max_outer": 1,
                                   "schedule.max_steps": 2,
                                   "schedule.eps0": 8.0})
    res = run_cli(["solve", "-c", str(path), "--set",
                   f"output.dir={tmp_path / 'f'}"], tmp_path)
    assert res.returncode == cli.EXIT_SOLVER


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_determinism_across_runs_and_threads(tmp_path):
    outs = []
    for tag, threads in (("r1", None), ("r2", None), ("t1", 1), ("t4", 4)):
        path = write_config(tmp_path)
        args = ["solve", "-c", str(path), "--set",
                f"output.dir={tmp_path / tag}"]
        if threads is not None:
            args = ["--threads", str(threads)] + args
        res = run_cli(args, tmp_path)
        assert res.returncode == 0, res.stderr
        outs.append((
            (tmp_path / tag / "sweep.csv").read_bytes(),
            (tmp_path / tag / "report.json").read_bytes(),
        ))
    assert all(o == outs[0] for o in outs[1:])


def test_validate_operators_full_mode(tmp_path):
    res = run_cli(["validate-operators", "--nx", "512", "--ny", "65",
                   "--out", str(tmp_path / "v.json")], tmp_path)
    assert res.returncode == 0, res.stderr
    rep = json.loads((tmp_path / "v.json").read_text())
    assert rep["degraded_mode"] is False
    assert rep["all_pass"] is True
