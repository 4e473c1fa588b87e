import argparse
import json

import numpy as np
import pytest

from app.commands import rates
from app.main import main
from app.storage.models import load_certificate, load_model

SOLVER = {
    "lambda": 0.001,
    "outer_iters": 5,
    "multistarts": 6,
    "ascent_iters": 60,
    "corrective_iters": 300,
    "sliding_iters": 20,
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "experiment.json"
    payload = {"space": {"d": 2, "k": 2}, "solver": SOLVER, "seed": 1234, "output_dir": str(tmp_path / "run")}
    path.write_text(json.dumps(payload))
    return path


def run(config_path, *args):
    return main(["--config", str(config_path), *args])


def test_pipeline_is_deterministic(config_path, tmp_path):
    out = tmp_path / "run"
    assert run(config_path, "gen", "--atoms", "2", "--separation", "0.3") == 0
    assert run(config_path, "dataset", "--model", str(out / "truth.json"), "--m", "30", "--epsilon", "0.05") == 0
    assert run(config_path, "train", "--dataset", str(out / "dataset.csv")) == 0
    names = ["truth.json", "dataset.csv", "dataset.json", "trained.json", "train_report.json"]
    first = {name: (out / name).read_bytes() for name in names}

    assert run(config_path, "gen", "--atoms", "2", "--separation", "0.3") == 0
    assert run(config_path, "dataset", "--model", str(out / "truth.json"), "--m", "30", "--epsilon", "0.05") == 0
    assert run(config_path, "--threads", "3", "train", "--dataset", str(out / "dataset.csv")) == 0
    assert {name: (out / name).read_bytes() for name in names} == first

    report = json.loads(first["train_report.json"])
    assert report["metadata"]["seed"] == 1234
    assert len(report["metadata"]["config_hash"]) == 64
    assert "tool_version" in report["metadata"]


def test_seed_override_changes_outputs(config_path, tmp_path):
    out = tmp_path / "run"
    assert run(config_path, "gen", "--atoms", "3") == 0
    base = (out / "truth.json").read_bytes()
    assert run(config_path, "--seed", "99", "gen", "--atoms", "3") == 0
    assert (out / "truth.json").read_bytes() != base


def test_train_eval_certify_debias(config_path, tmp_path):
    out = tmp_path / "run"
    assert run(config_path, "gen", "--atoms", "1") == 0
    assert run(config_path, "dataset", "--model", str(out / "truth.json"), "--m", "25", "--epsilon", "0.02") == 0
    assert run(config_path, "train", "--dataset", str(out / "dataset.csv")) == 0
    assert (out / "trained_certificate.json").exists()

    assert run(
        config_path,
        "eval",
        "--model",
        str(out / "trained.json"),
        "--dataset",
        str(out / "dataset.csv"),
        "--reference",
        str(out / "truth.json"),
        "--probes",
        "64",
    ) == 0
    evaluation = json.loads((out / "eval_report.json").read_text())
    assert evaluation["lipschitz_bound"] == evaluation["radon_norm"]
    assert evaluation["sup_dstar_error"] >= 0.0

    assert run(config_path, "certify", "--model", str(out / "truth.json"), "--samples", "50", "--grid", "50") == 0
    assert "source_condition" in json.loads((out / "certify_report.json").read_text())

    assert run(
        config_path,
        "debias",
        "--model",
        str(out / "trained.json"),
        "--certificate",
        str(out / "trained_certificate.json"),
        "--dataset",
        str(out / "dataset.csv"),
    ) == 0
    debiased = json.loads((out / "debias_report.json").read_text())
    assert debiased["atoms_after"] <= debiased["atoms_before"]
    assert debiased["fidelity_after"] <= debiased["fidelity_before"] + 1e-12


def test_gen_certifies_single_atom(config_path, tmp_path):
    out = tmp_path / "run"
    assert run(config_path, "gen", "--atoms", "1", "--certify", "--grid", "500") == 0
    report = json.loads((out / "gen_report.json").read_text())
    assert report["source_condition"]["feasible"], report["source_condition"]["reason"]
    certificate = (out / "truth_certificate.json").read_bytes()

    assert run(config_path, "--threads", "2", "gen", "--atoms", "1", "--certify", "--grid", "500") == 0
    assert (out / "truth_certificate.json").read_bytes() == certificate


def test_train_reports_the_raw_certificate(config_path, tmp_path):
    out = tmp_path / "run"
    assert run(config_path, "gen", "--atoms", "2", "--separation", "0.3") == 0
    assert run(config_path, "dataset", "--model", str(out / "truth.json"), "--m", "30", "--epsilon", "0.05") == 0
    assert run(config_path, "train", "--dataset", str(out / "dataset.csv")) == 0
    report = json.loads((out / "train_report.json").read_text())
    validation = report["certificate_validation"]
    assert ("invalid-certificate" in report["flags"]) == (not validation["valid"])
    assert len(validation["atom_values"]) == report["atoms"]

    trained = load_model(out / "trained.json")
    saved = load_certificate(out / "trained_certificate.json")
    values = np.atleast_1d(saved.evaluate(trained.matrices))
    np.testing.assert_allclose(values, np.sign(trained.weights), atol=1e-8)


def test_lambda_above_threshold_reports_empty_model(config_path, tmp_path):
    out = tmp_path / "run"
    assert run(config_path, "gen", "--atoms", "2") == 0
    assert run(config_path, "dataset", "--model", str(out / "truth.json"), "--m", "20") == 0
    assert run(config_path, "train", "--dataset", str(out / "dataset.csv"), "--lambda", "1000") == 0
    report = json.loads((out / "train_report.json").read_text())
    assert report["empty"] is True
    assert report["atoms"] == 0


def test_rates_approx_ignores_thread_count(config_path, tmp_path):
    out = tmp_path / "run"
    assert run(config_path, "gen", "--atoms", "4") == 0
    model = str(out / "truth.json")
    args = ["rates", "approx", "--model", model, "--n-grid", "2,4,8", "--trials", "5", "--probes", "32"]
    assert run(config_path, "--threads", "1", *args) == 0
    serial = (out / "rates_approx.csv").read_bytes()
    assert run(config_path, "--threads", "4", *args) == 0
    assert (out / "rates_approx.csv").read_bytes() == serial
    assert serial.splitlines()[0] == b"n,trials,mean_error,std_error"


def test_rates_defaults_match_the_acceptance_grid():
    parser = argparse.ArgumentParser()
    rates.register(parser.add_subparsers())
    args = parser.parse_args(["rates", "approx", "--model", "truth.json"])
    assert [int(n) for n in args.n_grid.split(",")] == [16, 64, 256, 1024, 4096]
    assert args.trials == 20
    assert args.m_cap == 100_000
    assert args.eps_grid == "0.2,0.1,0.05,0.025"


def test_degenerate_grid_exit_code(config_path, tmp_path):
    out = tmp_path / "run"
    assert run(config_path, "gen", "--atoms", "2") == 0
    model = str(out / "truth.json")
    assert run(config_path, "rates", "approx", "--model", model, "--n-grid", "16", "--trials", "5") == 2


def test_bad_inputs_exit_with_code_2(config_path, tmp_path):
    assert main(["--config", str(tmp_path / "missing.json"), "gen", "--atoms", "1"]) == 2

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"space": {"d": 2, "k": 2}, "seed": 1, "colour": "blue"}))
    assert main(["--config", str(unknown), "gen", "--atoms", "1"]) == 2

    seedless = tmp_path / "seedless.json"
    seedless.write_text(json.dumps({"space": {"d": 2, "k": 2}}))
    assert main(["--config", str(seedless), "gen", "--atoms", "1"]) == 2
    assert main(["--config", str(seedless), "--seed", "5", "--out", str(tmp_path / "o"), "gen", "--atoms", "1"]) == 0

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run(config_path, "dataset", "--model", str(broken), "--m", "5") == 2


def test_unknown_subcommand_is_rejected(config_path):
    with pytest.raises(SystemExit) as info:
        run(config_path, "frobnicate")
    assert info.value.code == 2
