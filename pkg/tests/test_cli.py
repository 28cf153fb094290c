import json
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml

from quarks.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from quarks.io import load_model, read_batch_csv, save_model
from quarks.als import QuarksModel


def run(*args):
    return main([str(a) for a in args])


def report(path):
    return json.loads(path.read_text())


@pytest.fixture
def quarks_data(tmp_path):
    out = tmp_path / "g"
    assert run("generate", "--kind", "quarks", "--N", 4, "--Nt", 400, "--Nv", 200, "--p", 2, "--r", 1,
               "--snr-db", "none", "--seed", 3, "--out-dir", out) == EXIT_OK
    return out


def test_generate_default_turbulence_config(tmp_path):
    out = tmp_path / "ao"
    assert run("generate", "--Nt", 50, "--Nv", 20, "--out-dir", out) == EXIT_OK
    header = (out / "ident.csv").read_text().splitlines()[0]
    assert header == "# quarks-batch v1 N=10 channels=200 Nt=50"
    assert read_batch_csv(out / "valid.csv").Nt == 20
    cfg = report(out / "generate_report.json")["config"]
    assert cfg["layers"] == [{"r0": 0.2, "L0": 10.0, "speed": 1}, {"r0": 0.4, "L0": 10.0, "speed": 2}]
    assert cfg["snr_db"] == 15.0


def test_generate_is_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--N", 4, "--Nt", 30, "--Nv", 10, "--seed", 9, "--out-dir", tmp_path / name) == 0
    for f in ("ident.csv", "valid.csv", "ident_clean.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_generate_rejects_single_node(tmp_path, capsys):
    assert run("generate", "--N", 1, "--out-dir", tmp_path) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "config"


def test_fit_noiseless_roundtrip(quarks_data, tmp_path):
    rep = tmp_path / "fit.json"
    assert run("fit", "--train", quarks_data / "ident.csv", "--inputs", quarks_data / "ident_inputs.csv",
               "--valid", quarks_data / "valid.csv", "--valid-inputs", quarks_data / "valid_inputs.csv",
               "--p", 2, "--r", 1, "--tol", 1e-12, "--model-out", tmp_path / "m.qrk", "--report-out", rep) == EXIT_OK
    res = report(rep)["result"]
    assert res["als"]["termination"] == "converged"
    assert res["als"]["final_cost"] < 1e-8 * res["als"]["initial_cost"]
    assert res["validation_vaf"] == pytest.approx(100.0)
    truth = load_model(quarks_data / "truth.qrk")
    np.testing.assert_allclose(load_model(tmp_path / "m.qrk").coefficient_matrices(), truth.coefficient_matrices(),
                               atol=1e-6)


def test_validate_self_and_zero(quarks_data, tmp_path):
    assert run("fit", "--train", quarks_data / "ident.csv", "--inputs", quarks_data / "ident_inputs.csv",
               "--p", 2, "--r", 1, "--model-out", tmp_path / "m.qrk", "--report-out", tmp_path / "f.json") == 0
    out = tmp_path / "v.json"
    assert run("validate", "--model", tmp_path / "m.qrk", "--batch", quarks_data / "ident.csv",
               "--inputs", quarks_data / "ident_inputs.csv", "--residuals-out", tmp_path / "res.csv",
               "--report-out", out) == 0
    assert report(out)["result"]["vaf"] == pytest.approx(100.0, abs=1e-6)
    lines = (tmp_path / "res.csv").read_text().splitlines()
    assert lines[0] == "k,residual_energy,signal_energy" and len(lines) == 1 + 398
    save_model(tmp_path / "z.qrk", QuarksModel.zeros(2, 1, 4))
    assert run("validate", "--model", tmp_path / "z.qrk", "--batch", quarks_data / "valid.csv",
               "--inputs", quarks_data / "valid_inputs.csv", "--report-out", out) == 0
    assert report(out)["result"]["vaf"] == 0.0


def test_fit_with_mask_routes_to_missing_data(tmp_path):
    g = tmp_path / "g"
    assert run("generate", "--kind", "var", "--N", 4, "--Nt", 300, "--Nv", 100, "--p", 1, "--r", 1,
               "--out-dir", g) == 0
    (tmp_path / "mask.csv").write_text("2,9\n")
    rep = tmp_path / "f.json"
    assert run("fit", "--train", g / "ident.csv", "--mask", tmp_path / "mask.csv", "--p", 1, "--r", 1,
               "--beta", 0.1, "--max-iters", 5, "--model-out", tmp_path / "m.qrk", "--report-out", rep,
               "--completed-out", tmp_path / "c.csv") == 0
    res = report(rep)["result"]
    assert res["routed_to"] == "fit_with_missing"
    assert res["als"]["missing_ratio"] == pytest.approx(2 / 16)
    assert read_batch_csv(tmp_path / "c.csv").Nt == 300


def test_impute_command(tmp_path):
    g = tmp_path / "g"
    assert run("generate", "--kind", "var", "--N", 3, "--Nt", 100, "--Nv", 10, "--p", 1, "--r", 1,
               "--out-dir", g) == 0
    (tmp_path / "mask.csv").write_text("4\n")
    assert run("impute", "--batch", g / "ident.csv", "--mask", tmp_path / "mask.csv", "--model", g / "truth.qrk",
               "--beta", 0.01, "--out", tmp_path / "done.csv", "--report-out", tmp_path / "i.json") == 0
    assert report(tmp_path / "i.json")["result"]["routed_to"] == "impute_given_model"
    assert np.all(np.isfinite(read_batch_csv(tmp_path / "done.csv").frames))


def test_dense_and_sparse_methods_report_vaf(tmp_path):
    g = tmp_path / "g"
    assert run("generate", "--N", 4, "--Nt", 600, "--Nv", 300, "--out-dir", g) == 0
    for method in ("dense", "sparse"):
        rep = tmp_path / f"{method}.json"
        assert run("fit", "--train", g / "ident.csv", "--valid", g / "valid.csv", "--method", method,
                   "--p", 2, "--tau", 10.0, "--model-out", tmp_path / f"{method}.qrk", "--report-out", rep) == 0
        assert 0 < report(rep)["result"]["validation_vaf"] <= 100


def test_config_file_precedence_and_echo(tmp_path, quarks_data):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"fit": {"p": 3, "r": 1, "max_iters": 7, "train": str(quarks_data / "ident.csv"),
                                           "inputs": str(quarks_data / "ident_inputs.csv")}}))
    rep = tmp_path / "f.json"
    assert run("fit", "--config", cfg, "--p", 2, "--model-out", tmp_path / "m.qrk", "--report-out", rep) == 0
    echoed = report(rep)["config"]
    assert echoed["p"] == 2 and echoed["max_iters"] == 7 and echoed["r"] == 1
    assert report(rep)["schema"] == "quarks-report/1"
    bad = tmp_path / "bad.yaml"
    bad.write_text("fit:\n  nonsense: 1\n")
    assert run("fit", "--config", bad) == EXIT_CONFIG
    (tmp_path / "broken.yaml").write_text("fit: [unclosed\n")
    assert run("fit", "--config", tmp_path / "broken.yaml") == EXIT_CONFIG


def test_error_categories(tmp_path, quarks_data, monkeypatch):
    assert run("validate", "--model", tmp_path / "missing.qrk", "--batch", quarks_data / "valid.csv") == EXIT_IO
    assert run("fit", "--max-iters", 3) == EXIT_CONFIG  # no training file
    constant = tmp_path / "const.csv"
    constant.write_text("# quarks-batch v1 N=2 channels=4 Nt=20\n" + "1,1,1,1\n" * 20)
    assert run("fit", "--train", constant, "--p", 1, "--r", 1, "--model-out", tmp_path / "m.qrk",
               "--report-out", tmp_path / "r.json") == EXIT_NUMERICAL
    monkeypatch.setenv("QUARKS_NUM_THREADS", "many")
    assert run("spectrum", "--N", 3, "--out", tmp_path / "s.csv") == EXIT_CONFIG


def test_bench_schema_and_usage_errors(tmp_path):
    assert run("bench", "--N-quarks", "", "--out", tmp_path / "x.csv") == EXIT_CONFIG
    headers = []
    for reps in (1, 3):
        out = tmp_path / f"b{reps}.csv"
        assert run("bench", "--methods", "quarks,dense", "--N-quarks", "3,4", "--N-dense", "3,4", "--p", 1, "--r", 1,
                   "--iterations", 1, "--repetitions", reps, "--out", out,
                   "--report-out", tmp_path / f"b{reps}.json") == 0
        lines = out.read_text().splitlines()
        headers.append(lines[0])
        assert sum(l.startswith("# fit") for l in lines) == 2
    assert headers[0] == headers[1]


def test_spectrum_command(tmp_path):
    out = tmp_path / "s.csv"
    assert run("spectrum", "--N", 4, "--seeds", "0,1", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "seed,index,singular_value,relative"
    assert len(lines) == 1 + 2 * 16


def test_console_script_help_and_exit_code(tmp_path):
    res = subprocess.run([sys.executable, "-m", "quarks.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("generate", "fit", "validate", "impute", "bench", "spectrum"):
        assert cmd in res.stdout
    res = subprocess.run([sys.executable, "-m", "quarks.cli", "generate", "--N", "1", "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 2


def test_pipeline_desk_scale_side_by_side(tmp_path):
    """generate -> fit (QUARKS and dense) -> validate at N = 10 in under five minutes."""
    start = time.perf_counter()
    g = tmp_path / "g"
    assert run("generate", "--N", 10, "--Nt", 5000, "--Nv", 5000, "--out-dir", g) == 0
    vafs = {}
    for method in ("quarks", "dense"):
        assert run("fit", "--train", g / "ident.csv", "--method", method, "--p", 2, "--r", 2,
                   "--model-out", tmp_path / f"{method}.qrk", "--report-out", tmp_path / f"{method}.json") == 0
        assert run("validate", "--model", tmp_path / f"{method}.qrk", "--batch", g / "valid.csv",
                   "--report-out", tmp_path / f"v{method}.json") == 0
        vafs[method] = report(tmp_path / f"v{method}.json")["result"]["vaf"]
    assert time.perf_counter() - start < 300
    assert abs(vafs["quarks"] - vafs["dense"]) < 5
