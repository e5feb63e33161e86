"""End-to-end CLI: exit codes, artifacts, caching, and byte determinism."""

import hashlib
import json
from pathlib import Path

import pytest

from fpflow.cli import main


def write_config(path: Path, **overrides) -> Path:
    cfg = {
        "schema_version": 1,
        "family": {"id": "linear-ou", "params": {}},
        "grid": {"dim": 1, "half_width": 6.0, "cells_per_axis": 32},
        "solver": {"lam": 0.05, "eps_schedule": [1e-2, 1e-4, 1e-6]},
        "initial": {"kind": "gaussian", "mean": [0.5], "sigma": 1.0},
        "evolution": {"T": 0.4, "h": 0.05, "snapshots": 8, "eta": 10.0},
        "ergodic": {
            "window_fraction": 0.9,
            "t_values": [0.1, 0.2, 0.4],
            "observables": [{"label": "x2", "kind": "moment", "axis": 0, "power": 2}],
        },
        "particles": {"count": 3000, "dt": 0.01, "T": 0.4, "refresh_every": 1, "snapshots": 8},
        "hypotheses": {"run": ["h1", "h3", "uniqueness"]},
        "compare": {
            "tolerances": {"l1_marginal": 0.5, "observable_se_multiple": 6.0, "occupation": 0.2},
            "occupation_box": {"lo": [0.0], "hi": [6.0]},
        },
    }
    for key, value in overrides.items():
        if value is None:
            cfg.pop(key, None)
        else:
            cfg[key] = value
    path.write_text(json.dumps(cfg, indent=1))
    return path


def dir_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestCheck:
    def test_passing_family_exits_zero(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        rc = main(["check", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert rc == 0
        summary = json.loads((tmp_path / "out" / "check_summary.json").read_text())
        assert summary["passed"]
        assert summary["config_hash"]
        assert summary["tool_version"]

    def test_failing_inequality_exits_one(self, tmp_path):
        # porous-medium upper growth bound breaks beyond r = mu2
        cfg = write_config(
            tmp_path / "c.json",
            family={"id": "porous-medium", "params": {}},
            hypotheses={"run": ["h1"], "r_min": -5.0, "r_max": 5.0},
        )
        rc = main(["check", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert rc == 1
        report = json.loads((tmp_path / "out" / "h1.json").read_text())
        assert not report["passed"]
        assert report["margins"]["upper_growth"] < 0

    def test_malformed_config_exits_two(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["check", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        missing_family = write_config(tmp_path / "c2.json", family=None)
        assert main(["check", "--config", str(missing_family), "--out", str(tmp_path / "o")]) == 2
        wrong_version = write_config(tmp_path / "c3.json", schema_version=99)
        assert main(["check", "--config", str(wrong_version), "--out", str(tmp_path / "o")]) == 2


class TestEvolve:
    def test_writes_artifacts_and_is_deterministic(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["evolve", "--config", str(cfg), "--out", str(out1), "--seed", "7"]) == 0
        assert main(["evolve", "--config", str(cfg), "--out", str(out2), "--seed", "7"]) == 0
        manifest = json.loads((out1 / "manifest.json").read_text())
        assert manifest["complete"]
        assert manifest["times"][0] == 0.0
        assert len(manifest["snapshot_files"]) == len(manifest["times"])
        assert (out1 / "diagnostics.jsonl").exists()
        assert dir_digest(out1) == dir_digest(out2)

    def test_incomplete_run_exits_one(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            family={"id": "porous-medium", "params": {}},
            solver={"lam": 0.05, "newton_tol": 1e-18, "max_newton_iters": 1, "polish_iters": 0},
        )
        rc = main(["evolve", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert rc == 1
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert not manifest["complete"]


class TestErgodic:
    def test_reuses_trajectory_without_recompute(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        traj_dir = tmp_path / "traj"
        assert main(["evolve", "--config", str(cfg), "--out", str(traj_dir), "--seed", "3"]) == 0
        before = dir_digest(traj_dir)
        out = tmp_path / "erg"
        rc = main([
            "ergodic", "--config", str(cfg), "--out", str(out), "--seed", "3",
            "--traj", str(traj_dir),
        ])
        assert rc == 0
        assert dir_digest(traj_dir) == before  # untouched: no recompute
        csv = (out / "cesaro.csv").read_text()
        assert csv.startswith("T,observable_label,cesaro_value,config_hash,tool_version")
        omega = json.loads((out / "omega.json").read_text())
        assert omega["cluster_count"] >= 1
        assert (out / "omega_rep_000.bin").exists()

    def test_mismatched_trajectory_is_usage_error(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        traj_dir = tmp_path / "traj"
        assert main(["evolve", "--config", str(cfg), "--out", str(traj_dir), "--seed", "3"]) == 0
        rc = main([
            "ergodic", "--config", str(cfg), "--out", str(tmp_path / "erg"), "--seed", "4",
            "--traj", str(traj_dir),
        ])
        assert rc == 2

    def test_computes_trajectory_when_not_given(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        out = tmp_path / "erg"
        assert main(["ergodic", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "cesaro.csv").exists()
        assert (out / "manifest.json").exists()  # trajectory cached for reuse


class TestParticles:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        out1, out2 = tmp_path / "p1", tmp_path / "p2"
        assert main(["particles", "--config", str(cfg), "--out", str(out1), "--seed", "11"]) == 0
        assert main(["particles", "--config", str(cfg), "--out", str(out2), "--seed", "11"]) == 0
        assert dir_digest(out1) == dir_digest(out2)
        summary = (out1 / "summary.csv").read_text()
        assert summary.startswith("t,mean_x1,second_moment,reflections,config_hash,tool_version")
        assert (out1 / "ergodic_averages.csv").exists()
        assert (out1 / "estimate_000000.bin").exists()

    def test_different_seed_changes_outputs(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        out1, out2 = tmp_path / "p1", tmp_path / "p2"
        main(["particles", "--config", str(cfg), "--out", str(out1), "--seed", "11"])
        main(["particles", "--config", str(cfg), "--out", str(out2), "--seed", "12"])
        a = (out1 / "summary.csv").read_text()
        b = (out2 / "summary.csv").read_text()
        assert a != b


class TestCompare:
    def test_cross_validation_passes_with_config_tolerances(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        out = tmp_path / "cmp"
        rc = main(["compare", "--config", str(cfg), "--out", str(out), "--seed", "2"])
        assert rc == 0
        summary = json.loads((out / "compare_summary.json").read_text())
        assert summary["passed"]
        assert "l1_marginal" in summary["checks"]
        assert "occupation" in summary["checks"]
        assert (out / "comparison.csv").exists()
        assert (out / "observable_gaps.csv").exists()

    def test_unreachable_tolerance_exits_one(self, tmp_path):
        cfg = write_config(
            tmp_path / "c.json",
            compare={
                "tolerances": {"l1_marginal": 1e-9, "observable_se_multiple": 6.0, "occupation": 0.2},
            },
        )
        rc = main(["compare", "--config", str(cfg), "--out", str(tmp_path / "cmp"), "--seed", "2"])
        assert rc == 1


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "fpflow" in capsys.readouterr().out

    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
