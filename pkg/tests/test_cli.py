import csv
import json

import numpy as np
import pytest

import tvtomo.cli
from tvtomo import io as tio
from tvtomo.cli import main
from tvtomo.lattice import difference_operator
from tvtomo.qut import lambda_zero

from conftest import _original_fit_tv

SMALL = ["--profile", "lake", "--n0", "60", "--T", "96", "--n", "40", "--N", "6", "--t", "4",
         "--N0", "12", "--seed", "3"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim") / "ds"
    assert main(["simulate", *SMALL, "--out", str(d)]) == 0
    return d


def read_values(path):
    with open(path, newline="") as fh:
        return np.array([float(r["value"]) for r in csv.DictReader(fh)])


def test_simulate_writes_dataset(data_dir):
    ds = tio.read_dataset(data_dir)
    assert ds.X.shape == (40, 36)
    meta = tio.read_json(data_dir / "dataset.json")
    assert set(meta["provenance"]) == {"config_hash", "seed", "version"}
    assert meta["config"]["N"] == 6
    assert read_values(data_dir / "truth.csv").shape == (144,)


def test_fit_above_lambda0_is_constant(data_dir, tmp_path):
    ds = tio.read_dataset(data_dir)
    lam0 = lambda_zero(ds.X, ds.y, difference_operator(ds.lattice)).lambda0
    out = tmp_path / "m.csv"
    assert main(["fit", "--data", str(data_dir), "--lam", str(1.001 * lam0),
                 "--out", str(out)]) == 0
    assert np.ptp(read_values(out)) <= 1e-5
    assert main(["fit", "--data", str(data_dir), "--lam", "1e6", "--out", str(out)]) == 0
    assert np.ptp(read_values(out)) <= 1e-5


def test_fit_below_lambda0_varies(data_dir, tmp_path):
    ds = tio.read_dataset(data_dir)
    lam0 = lambda_zero(ds.X, ds.y, difference_operator(ds.lattice)).lambda0
    out = tmp_path / "m.csv"
    assert main(["fit", "--data", str(data_dir), "--lam", str(0.3 * lam0), "--out", str(out),
                 "--pgm", str(tmp_path / "m.pgm")]) == 0
    assert np.ptp(read_values(out)) > 1e-4
    assert (tmp_path / "m.pgm").read_text().startswith("P2\n")


@pytest.mark.parametrize("method", ["TV", "empirical", "GPR"])
def test_fit_methods_and_evaluate(data_dir, tmp_path, method):
    out = tmp_path / "m.csv"
    assert main(["fit", "--data", str(data_dir), "--method", method, "--m", "50",
                 "--out", str(out)]) == 0
    assert read_values(out).shape == (36,)
    met = tmp_path / "e.csv"
    assert main(["evaluate", "--map", str(out), "--profile", "lake", "--N0", "12",
                 "--method", method, "--out", str(met)]) == 0
    row = next(csv.DictReader(open(met)))
    assert 0.0 <= float(row["mse"]) <= 1.0 and row["method"] == method


def test_qut_and_test(data_dir, tmp_path):
    q = tmp_path / "q.json"
    assert main(["qut", "--data", str(data_dir), "--m", "50", "--seed", "1", "--out", str(q)]) == 0
    res = json.loads(q.read_text())
    samples = np.loadtxt(tmp_path / "q.samples.csv", skiprows=1)
    assert res["m"] == 50 and samples.shape == (50,)
    # samples are stored with ten significant digits
    assert res["lambda_qut"] == pytest.approx(np.sort(samples)[47], rel=1e-9)
    for method in ("TV", "LRT_exact", "LRT_chi2"):
        r = tmp_path / f"{method}.json"
        assert main(["test", "--data", str(data_dir), "--method", method, "--m", "50",
                     "--out", str(r)]) == 0
        rep = json.loads(r.read_text())
        assert rep["reject"] == (rep["statistic"] >= rep["threshold"])


def test_bootstrap_command(data_dir, tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bootstrap", "--data", str(data_dir), "--method", "empirical", "--n-boot", "30",
                 "--n-locations", "36", "--runs", "3", "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 36 and set(rows[0]) == {"cell", "lower", "estimate_bc", "upper",
                                                "estimate"}
    side = json.loads((tmp_path / "b.json").read_text())
    assert side["replicates"] == 3 and "provenance" in side


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["fit", "--data", "x"]) == 2
    assert main(["simulate", "--N", "0", "--out", str(tmp_path)]) == 2
    # N larger than N0 is a configuration error
    assert main(["simulate", "--N", "60", "--N0", "50", "--out", str(tmp_path / "s")]) == 2
    assert "tvtomo" in capsys.readouterr().err


def test_data_errors(tmp_path, capsys):
    assert main(["fit", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "m.csv")]) == 3
    err = capsys.readouterr().err
    assert "tvtomo" in err and "TrackError" in err
    assert not (tmp_path / "m.csv").exists()


def test_numerical_failure(data_dir, tmp_path, capsys, monkeypatch):
    # a truncated solve has no valid certificate, so bypass the recorder
    monkeypatch.setattr(tvtomo.cli, "fit_tv", _original_fit_tv)
    ds = tio.read_dataset(data_dir)
    lam0 = lambda_zero(ds.X, ds.y, difference_operator(ds.lattice)).lambda0
    code = main(["fit", "--data", str(data_dir), "--lam", str(0.2 * lam0), "--max-iter", "1",
                 "--out", str(tmp_path / "m.csv")])
    assert code == 4
    assert "converge" in capsys.readouterr().err
    assert not (tmp_path / "m.csv").exists()


def test_degenerate_outcomes_are_data_errors(data_dir, tmp_path):
    ds = tio.read_dataset(data_dir)
    ds.y[:] = 0
    tio.write_dataset(tmp_path / "d", ds)
    assert main(["test", "--data", str(tmp_path / "d"), "--m", "50",
                 "--out", str(tmp_path / "r.json")]) == 3


def test_repeat_runs_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["simulate", *SMALL, "--out", str(d / "ds")]) == 0
        assert main(["fit", "--data", str(d / "ds"), "--m", "50", "--out", str(d / "m.csv")]) == 0
        outs.append([(d / "ds" / "X.csv").read_bytes(), (d / "ds" / "y.csv").read_bytes(),
                     (d / "m.csv").read_bytes()])
    assert outs[0] == outs[1]
