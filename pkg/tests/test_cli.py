import io
import subprocess
import sys

import numpy as np
import pytest

from ckmpm.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main, snapshot_name
from ckmpm.io import read_diagnostics, read_snapshot


def test_run_minimal(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "minimal", "--out", str(out), "--quiet"]) == EXIT_OK
    snaps = sorted(out.glob("frame_*.txt"))
    assert [s.name for s in snaps] == [snapshot_name(i) for i in (1, 2, 3)]
    diag = read_diagnostics(out / "diagnostics.csv")
    # one row per substep; the lone particle falls freely
    assert len(diag["step"]) == diag["step"][-1]
    assert diag["time"][-1] == pytest.approx(3 / 24, abs=1e-15)
    s = read_snapshot(snaps[-1])
    assert s.count == 1 and s.time == pytest.approx(3 / 24)
    assert s.v[0, 1] == pytest.approx(-9.8 * 3 / 24, rel=1e-12)


def test_run_binary_and_overrides(tmp_path):
    out = tmp_path / "o"
    rc = main(["run", "minimal", "--out", str(out), "--quiet", "--binary", "--frames", "1",
               "--kernel", "quadratic", "--transfer", "mls"])
    assert rc == EXIT_OK
    assert [p.name for p in out.glob("frame_*")] == ["frame_00001.bin"]


def test_run_no_snapshots(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "minimal", "--out", str(out), "--quiet", "--no-snapshots"]) == EXIT_OK
    assert not list(out.glob("frame_*")) and (out / "diagnostics.csv").exists()


def test_bad_poisson_ratio(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    from ckmpm.config import CONFIG_DIR
    cfg.write_text((CONFIG_DIR / "minimal.toml").read_text().replace("nu = 0.3", "nu = 0.6"))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "materials.blob.nu" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["run", str(tmp_path / "none.toml")]) == EXIT_IO


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "minimal", "--out", str(blocker / "sub"), "--quiet"]) == EXIT_IO


def test_numerical_failure_exit(tmp_path, capsys):
    from ckmpm.config import CONFIG_DIR
    cfg = tmp_path / "fast.toml"
    text = (CONFIG_DIR / "minimal.toml").read_text() + "velocity = [0.0, 0.0, 400.0]\n"
    cfg.write_text(text)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_NUMERICAL
    assert "at step" in capsys.readouterr().err


def test_validate_passes(capsys):
    assert main(["validate"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "8/8 suites passed" in out


def test_validate_fast_sine_breaks_momentum(capsys):
    assert main(["validate", "--fast-sine"]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert any(l.startswith("linear momentum") and "FAIL" in l for l in lines)


def test_validate_single_grid_breaks_reconstruction(capsys):
    assert main(["validate", "--single-grid"]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert any(l.startswith("position reconstruction") and "FAIL" in l for l in lines)


def test_bench_reports_visits(capsys):
    assert main(["bench", "minimal", "--steps", "2", "--warmup", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "compact 16, quadratic 27" in out
    assert "transfer speedup" in out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ckmpm", "run", "minimal", "--out", str(tmp_path),
                        "--frames", "1", "--quiet"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "1 particles" in r.stdout
