import json
import math

import numpy as np
import pytest

from efmsig.app import main, render_table
from efmsig.core.expectation import (expected_signature_stationary,
                                     expected_signature_transient, predict)
from efmsig.core.persistence import load_path, load_tensor
from efmsig.core.rates import Rates
from efmsig.core.signature import PiecewisePath, signature_of_path
from efmsig.core.tensor import TensorSeq
from efmsig.handler.commands import Commands
from shared.flags import EXIT_BLOWUP, EXIT_IO, EXIT_OK, EXIT_USAGE
from shared.protocol import write_path_csv


def read_json(directory, name="report.json"):
    with open(directory / name, encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture
def path_csv(tmp_path, rng):
    times = np.linspace(0.0, 2.0, 21)
    values = np.cumsum(rng.normal(scale=0.3, size=(21, 1)), axis=0)
    target = tmp_path / "path.csv"
    write_path_csv(str(target), times, values)
    return target, PiecewisePath(times, values, time_augmented=True)


@pytest.fixture
def ell_csv(tmp_path):
    target = tmp_path / "ell.csv"
    target.write_text("word,value\n1,1\n")
    return target


def test_expected_stationary(tmp_path):
    out = tmp_path / "expected"
    code = main(["expected", "--lambda", "1,2", "--dim", "1", "--order", "3", "--stationary", "--out", str(out)])
    assert code == EXIT_OK

    written = load_tensor(str(out / "expected.csv"), 2, 3)
    assert written.allclose(expected_signature_stationary(Rates([1.0, 2.0]), 1, 3).value, atol=0.0)
    assert read_json(out)["horizon"] == "inf"

    manifest = read_json(out, "manifest.json")
    assert manifest["command"] == "expected"
    assert "numpy" in manifest["versions"]


def test_expected_transient(tmp_path):
    out = tmp_path / "expected"
    assert main(["expected", "--lambda", "1,1", "--dim", "1", "--order", "2", "--horizon", "0.5",
                 "--out", str(out)]) == EXIT_OK
    written = load_tensor(str(out / "expected.csv"), 2, 2)
    assert written.allclose(expected_signature_transient(Rates([1.0, 1.0]), 1, 2, 0.5).value, atol=1e-16)


def test_usage_errors_exit_with_2(tmp_path, capsys):
    assert main(["expected", "--lambda", "1,1", "--dim", "1", "--order", "2", "--bogus"]) == EXIT_USAGE
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "UsageError"

    out = str(tmp_path / "negative")
    assert main(["expected", "--lambda=1,-1", "--dim", "1", "--order", "2", "--stationary", "--out", out]) == EXIT_USAGE
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "DomainError"

    # horizon and stationary exclude each other
    assert main(["expected", "--lambda", "1,1", "--dim", "1", "--order", "2", "--horizon", "1",
                 "--stationary"]) == EXIT_USAGE


def test_missing_input_exits_with_1(tmp_path, capsys):
    code = main(["sig", "--input", str(tmp_path / "missing.csv"), "--lambda", "1,1", "--order", "2",
                 "--out", str(tmp_path / "sig")])
    assert code == EXIT_IO
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "FileNotFoundError"


def test_sig_writes_the_signature(tmp_path, path_csv):
    source, piecewise = path_csv
    out = tmp_path / "sig"
    code = main(["sig", "--input", str(source), "--lambda", "1,2", "--order", "3", "--time-augment",
                 "--bv-check", "--out", str(out)])
    assert code == EXIT_OK

    expected = signature_of_path(Rates([1.0, 2.0]), piecewise, 3).sig
    assert load_tensor(str(out / "signature.csv"), 2, 3).allclose(expected, atol=0.0)

    meta = read_json(out, "signature.json")
    assert meta == {"lambda": [1.0, 2.0], "order": 3, "t_final": 2.0}
    assert read_json(out)["bv"]["passed"] is True


def test_sig_checks_the_rate_count(tmp_path, path_csv):
    source, _ = path_csv
    code = main(["sig", "--input", str(source), "--lambda", "1", "--order", "2", "--time-augment",
                 "--out", str(tmp_path / "sig")])
    assert code == EXIT_USAGE


def test_predict_matches_the_library(tmp_path, path_csv, ell_csv):
    source, piecewise = path_csv
    out = tmp_path / "predict"
    code = main(["predict", "--input", str(source), "--ell", str(ell_csv), "--lambda", "1,1", "--order", "2",
                 "--horizon", "0.5", "--time-augment", "--out", str(out)])
    assert code == EXIT_OK

    r = Rates([1.0, 1.0])
    state = signature_of_path(r, piecewise, 2, "flat_past")
    mean, variance = predict(r, TensorSeq.from_words(2, 1, {(1,): 1.0}), state, 0.5)
    report = read_json(out)
    assert report["mean"] == pytest.approx(float(mean), abs=1e-15)
    assert report["variance"] == pytest.approx(float(variance), abs=1e-15)


def test_charfunc_of_a_gaussian_functional(tmp_path, ell_csv):
    out = tmp_path / "charfunc"
    trajectory = tmp_path / "phi.csv"
    code = main(["charfunc", "--ell", str(ell_csv), "--lambda", "1,1", "--order", "2", "--T", "2",
                 "--trajectory", str(trajectory), "--out", str(out)])
    assert code == EXIT_OK

    report = read_json(out)
    variance = -math.expm1(-4.0) / 2.0
    assert report["phi_re"] == pytest.approx(math.exp(-0.5 * variance), abs=1e-6)
    assert report["phi_im"] == pytest.approx(0.0, abs=1e-12)

    table = np.loadtxt(trajectory, delimiter=",", skiprows=1)
    assert table[0].tolist() == [0.0, 1.0, 0.0]


def test_simulation_is_reproducible(tmp_path):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["simulate", "bm", "--seed", "5", "--dt", "0.01", "--t1", "0.5", "--out", str(out)]) == EXIT_OK
        outputs.append(out)

    for name in ("path.csv", "report.json"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
    assert load_path(str(outputs[0] / "path.csv")).times.size == 51


def test_simulation_writes_one_file_per_path(tmp_path):
    out = tmp_path / "ou"
    assert main(["simulate", "ou", "--paths", "3", "--mu", "2", "--dt", "0.01", "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.glob("path_*.csv")) == ["path_00000.csv", "path_00001.csv", "path_00002.csv"]
    assert read_json(out)["paths"] == 3


def test_unstable_langevin_exits_with_3(tmp_path, capsys):
    code = main(["simulate", "langevin", "--dt", "1", "--t1", "50", "--mu", "10", "--seed", "2",
                 "--out", str(tmp_path / "langevin")])
    assert code == EXIT_BLOWUP
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "BlowUpError"


def test_lab_identity(tmp_path):
    out = tmp_path / "identity"
    code = main(["lab", "identity", "--lambda", "1,2", "--k", "1,2", "--dt", "0.001", "--burn-in", "0",
                 "--out", str(out)])
    assert code == EXIT_OK
    report = read_json(out)
    assert report["kind"] == "identity"
    assert report["max_residual"] < 1e-3
    assert len(report["results"]) == 2


def test_lab_stationarity_needs_its_times(tmp_path):
    code = main(["lab", "stationarity", "--lambda", "1,1", "--paths", "10", "--out", str(tmp_path / "lab")])
    assert code == EXIT_USAGE


def test_render_table_flattens_reports():
    table = render_table({"kind": "sig", "bv": {"passed": True, "norms": [1.0, 0.5]}, "x": 0.123456789})
    assert table.splitlines() == [
        f"{'kind':<32}sig",
        f"{'bv.passed':<32}True",
        f"{'bv.norms':<32}1.0, 0.5",
        f"{'x':<32}0.123457",
    ]


def test_unexpected_errors_exit_with_1(tmp_path, capsys, monkeypatch):
    def broken(self, args, out, manager):
        raise RuntimeError("worker died")

    monkeypatch.setattr(Commands, "handle", broken)
    code = main(["expected", "--lambda", "1,1", "--dim", "1", "--order", "2", "--stationary",
                 "--out", str(tmp_path / "expected")])
    assert code == EXIT_IO
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error == {"error": "RuntimeError", "message": "worker died"}
