import json
import subprocess
import sys

import numpy as np
import pytest

from rbc_koopman import experiments as ex
from rbc_koopman.cli import EXIT_ERROR, EXIT_OK, EXIT_PARTIAL, main
from rbc_koopman.dataset import Episode, write_episode
from rbc_koopman.fields import Grid

GRID = Grid(nx=12, ny=8)


@pytest.fixture
def data_dir(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    rng = np.random.default_rng(0)
    X, Y = GRID.mesh()
    t = np.arange(190)[:, None, None]
    data = np.sin(X - 0.2 * t) * np.cos(np.pi * Y / 2) + 1e-3 * rng.normal(size=(190, *GRID.shape))
    write_episode(Episode(1e5, 0.7, 0, data, grid=GRID), ex.episode_path(d, 1e5, 0))
    return d


def test_simulate(tmp_path, capsys):
    code = main(["simulate", "--ra", "1e5", "--episodes", "1", "--seed", "2", "--nx", "16", "--ny", "8",
                 "--cook-time", "1", "--length", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / "ra100000_ep0.rbce").exists()
    assert "ok" in capsys.readouterr().out


def test_sweep_kdmd(data_dir, tmp_path):
    out = tmp_path / "k.csv"
    assert main(["sweep", "kdmd", "--ra", "1e5", "--data", str(data_dir), "--out", str(out),
                 "--train-end", "160"]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 33


def test_sweep_partial_failure(data_dir, tmp_path):
    out = tmp_path / "k.csv"
    assert main(["sweep", "kdmd", "--ra", "1e5", "--data", str(data_dir), "--out", str(out),
                 "--train-end", "50"]) == EXIT_PARTIAL
    assert len(out.read_text().splitlines()) == 33


def test_sweep_lran(data_dir, tmp_path):
    out = tmp_path / "l.csv"
    assert main(["sweep", "lran", "--ra", "1e5", "--data", str(data_dir), "--runs", "2", "--max-epochs", "1",
                 "--out", str(out), "--train-end", "160"]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 3


def test_compare_and_render(data_dir, tmp_path):
    k, lr = tmp_path / "k.json", tmp_path / "l.json"
    k.write_text(json.dumps({"sigma": 2, "snapshot_size": 40}))
    lr.write_text(json.dumps({"latent_dim": 8, "sequence_length": 3, "max_epochs": 1, "widths": [2, 2, 2, 2]}))
    out = tmp_path / "cmp"
    assert main(["compare", "--ra", "1e5", "--data", str(data_dir), "--kdmd-config", str(k),
                 "--lran-config", str(lr), "--out", str(out), "--train-end", "160"]) == EXIT_OK
    assert len((out / "nsse_ra100000.csv").read_text().splitlines()) == 31
    pgm = tmp_path / "x.pgm"
    assert main(["render", "--episode", str(ex.episode_path(data_dir, 1e5, 0)), "--index", "3",
                 "--out", str(pgm)]) == EXIT_OK
    assert pgm.read_bytes().startswith(b"P5\n12 8\n255\n")


def test_hard_errors(tmp_path, capsys):
    assert main(["sweep", "kdmd", "--ra", "1e5", "--data", str(tmp_path), "--out", str(tmp_path / "x.csv")]) == EXIT_ERROR
    assert "no episodes" in capsys.readouterr().err
    bad = tmp_path / "bad.rbce"
    bad.write_bytes(b"junk")
    assert main(["render", "--episode", str(bad), "--index", "0", "--out", str(tmp_path / "y.pgm")]) == EXIT_ERROR


def test_missing_default_config_is_hard_error(tmp_path, data_dir):
    d = tmp_path / "odd"
    d.mkdir()
    (ex.episode_path(data_dir, 1e5, 0)).rename(ex.episode_path(d, 3e5, 0))
    assert main(["compare", "--ra", "3e5", "--data", str(d), "--out", str(tmp_path / "o")]) == EXIT_ERROR


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "rbc_koopman.cli", "bogus"], capture_output=True)
    assert proc.returncode == EXIT_ERROR
