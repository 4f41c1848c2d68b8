import subprocess
import sys

import pytest

from pmechaos.cli import main


def test_verify_kernels_exit_zero(tmp_path, capsys):
    assert main(["verify-kernels", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "A1 mass of W and V" in out and "pass" in out
    assert (tmp_path / "manifest.json").exists()


def test_dry_run_prints_config(tmp_path, capsys):
    assert main(["sweep-n", "--dry-run", "--seed", "7", "--out", str(tmp_path / "r")]) == 0
    out = capsys.readouterr().out
    assert "master_seed = 7" in out
    assert "N=16000" in out
    assert not (tmp_path / "r").exists()


def test_config_study_mismatch(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text('study = "lln_study"\n')
    assert main(["sweep-n", "--config", str(p)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_invalid_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('study = "chaos_n_sweep"\nreplicas = 1\n')
    assert main(["sweep-n", "--config", str(p)]) == 2


def test_failing_band_exit_one(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('study = "pde_eta_sweep"\neta_list = [0.8, 0.4, 0.2]\npoints_per_axis = 256\nt_end = 0.1\n'
                 'sensitivity_t = []\n[bands]\nl1_slope_lo = 10.0\n')
    assert main(["sweep-eta", "--config", str(p), "--out", str(tmp_path / "r")]) == 1
    # report re-derives the same status
    assert main(["report", str(tmp_path / "r")]) == 1


def test_solve_pde(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text('study = "pde_eta_sweep"\neta_list = [0.4]\npoints_per_axis = 256\nt_end = 0.1\n')
    assert main(["solve-pde", "--config", str(p), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "rho_vpme.npy").exists()
    assert (tmp_path / "r" / "rho_eta0.4.npy").exists()


def test_report_missing_run(tmp_path, capsys):
    assert main(["report", str(tmp_path / "none")]) == 3
    assert "integrity error" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pmechaos", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "verify-kernels" in proc.stdout


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
