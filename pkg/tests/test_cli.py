import numpy as np
import pytest

from fddcov.cli import main
from fddcov.covariance import (
    covariance_from_aps,
    PolarizedAps,
    read_covariance,
    write_covariance_binary,
    write_covariance_text,
)
from fddcov.geometry import SPEED_OF_LIGHT, UpaGeometry, make_grid
from fddcov.metrics import normalized_frobenius_se

CFG = """
n_vertical = 4
n_horizontal = 2
grid = 48x60
n_snapshots = 50
n_trials = 2
n_clusters = 3
n_subpaths = 10
eapm_max_iterations = 10
"""


@pytest.fixture()
def cfg_path(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(CFG)
    return str(path)


def write_test_covariance(path, equal_freq_cfg=True, binary=False):
    geom = UpaGeometry(4, 2, SPEED_OF_LIGHT / 1.8e9 / 2)
    grid = make_grid(48, 60)
    rng = np.random.default_rng(3)
    aps = PolarizedAps(rng.uniform(0, 1, grid.size), rng.uniform(0, 1, grid.size), grid)
    r = covariance_from_aps(aps, geom, 1.8e9, grid)
    if binary:
        write_covariance_binary(path, r)
    else:
        write_covariance_text(path, r)
    return r


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key = 1\n")
    rc = main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_missing_input_exit_code(cfg_path, tmp_path):
    rc = main(["convert", "--config", cfg_path,
               str(tmp_path / "missing.cov"), str(tmp_path / "out.cov")])
    assert rc == 2


def test_cli_numerical_failure_exit_code(cfg_path, tmp_path):
    # a covariance of the wrong dimension cannot enter the pipeline
    bad = tmp_path / "wrong.cov"
    write_covariance_text(bad, np.eye(6, dtype=complex))
    rc = main(["convert", "--config", cfg_path, str(bad), str(tmp_path / "out.cov")])
    assert rc == 3


def test_cli_convert_equal_frequencies_roundtrip(tmp_path):
    cfg = tmp_path / "eq.cfg"
    cfg.write_text(CFG + "dl_hz = 1.8e9\n")
    src = tmp_path / "in.cov"
    r = write_test_covariance(src)
    out = tmp_path / "out.cov"
    rc = main(["convert", "--config", str(cfg), str(src), str(out)])
    assert rc == 0
    back = read_covariance(out)
    assert normalized_frobenius_se(r, back) <= 1e-8


def test_cli_convert_binary_format_preserved(cfg_path, tmp_path):
    src = tmp_path / "in.bin"
    write_test_covariance(src, binary=True)
    out = tmp_path / "out.bin"
    rc = main(["convert", "--config", cfg_path, str(src), str(out)])
    assert rc == 0
    with open(out, "rb") as f:
        assert f.read(5) == b"FCOV1"


def test_cli_kernel_build_then_convert_matches_in_memory(cfg_path, tmp_path, capsys):
    op_path = tmp_path / "op.fcnv"
    rc = main(["kernel", "build", "--config", cfg_path, "--operator-out", str(op_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "structured" in out and str(op_path) in out

    src = tmp_path / "in.cov"
    write_test_covariance(src)
    out_a = tmp_path / "a.cov"
    out_b = tmp_path / "b.cov"
    assert main(["convert", "--config", cfg_path, "--operator", str(op_path),
                 str(src), str(out_a)]) == 0
    assert main(["convert", "--config", cfg_path, str(src), str(out_b)]) == 0
    a = read_covariance(out_a)
    b = read_covariance(out_b)
    assert np.linalg.norm(a - b, "fro") <= 1e-10 * np.linalg.norm(b, "fro")


def test_cli_metrics(cfg_path, tmp_path, capsys):
    src = tmp_path / "r.cov"
    r = write_test_covariance(src)
    est = tmp_path / "e.cov"
    write_covariance_text(est, 0.5 * r)
    rc = main(["metrics", str(src), str(est)])
    assert rc == 0
    out = capsys.readouterr().out
    lines = dict(ln.split() for ln in out.strip().splitlines())
    assert float(lines["frobenius_se"]) == pytest.approx(0.25, rel=1e-10)
    assert float(lines["grassmann_se"]) == pytest.approx(0.0, abs=1e-10)


def test_cli_simulate_writes_outputs(cfg_path, tmp_path, capsys):
    out_dir = tmp_path / "sim"
    rc = main(["simulate", "--config", cfg_path, "--trials", "1", "--seed", "3",
               "--method", "alg1", "--out", str(out_dir)])
    assert rc == 0
    assert (out_dir / "trials.csv").exists()
    assert (out_dir / "summary.csv").exists()
    printed = capsys.readouterr().out
    assert "alg1" in printed
