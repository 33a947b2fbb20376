import csv
import json
import math

import jsonschema
import numpy as np
import pytest

from reluverify import cli
from reluverify.model import (InputRegion, Network, Specification, VerificationProperty,
                              forward_eval, random_network, save_network, save_property)


def write(tmp_path, net, x0, eps, rows=((1.0,),), consts=None, name="case"):
    m, p = tmp_path / f"{name}-model.json", tmp_path / f"{name}-prop.json"
    save_network(net, m)
    spec = Specification(np.array(rows, dtype=float), consts)
    save_property(VerificationProperty(InputRegion(x0, eps), spec), p)
    return str(m), str(p)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip().startswith("{") else out)


@pytest.fixture
def hand_files(tmp_path, hand_net):
    return write(tmp_path, hand_net, [0.0, 0.0], 1.0, name="hand")


@pytest.fixture
def robust_files(tmp_path):
    rng = np.random.default_rng(1)
    net = random_network([2, 4, 1], rng)
    x0 = rng.normal(size=2)
    net = Network(net.weights, [net.biases[0], net.biases[1] - forward_eval(net, x0) + 1.0])
    return write(tmp_path, net, x0, 0.0, name="robust")


def test_zero_radius_verified(capsys, robust_files):
    m, p = robust_files
    code, rep = run(capsys, "--model", m, "--property", p)
    assert code == cli.EXIT_VERIFIED
    assert rep["rows"][0]["status"] == "Verified"
    assert rep["rows"][0]["branches"] == 0
    jsonschema.validate(rep, cli.REPORT_SCHEMA)


def test_hand_falsified(capsys, hand_files, hand_net):
    m, p = hand_files
    code, rep = run(capsys, "--model", m, "--property", p)
    assert code == cli.EXIT_FALSIFIED
    row = rep["rows"][0]
    assert row["status"] == "Falsified"
    assert row["counterexample_in_region"] is True
    assert row["counterexample_value"] == float(forward_eval(hand_net, row["counterexample"]))
    assert row["counterexample_value"] < 0
    jsonschema.validate(rep, cli.REPORT_SCHEMA)


def test_timeout_unknown(capsys, tmp_path):
    rng = np.random.default_rng(0)
    from reluverify.checks import positive_at_center
    net = random_network([3, 8, 8, 1], rng)
    x0 = rng.normal(size=3)
    net = positive_at_center(net, x0)
    m, p = write(tmp_path, net, x0, 0.9 * 0.74462890625)
    code, rep = run(capsys, "--model", m, "--property", p, "--timeout", "0")
    assert code == cli.EXIT_UNKNOWN
    row = rep["rows"][0]
    assert row["status"] == "Unknown" and row["stop_reason"] == "timeout"
    assert isinstance(row["global_lower"], float) and isinstance(row["global_upper"], float)


def test_bound_mode_budget_zero(capsys, hand_files):
    m, p = hand_files
    code, rep = run(capsys, "--model", m, "--property", p, "--mode", "bound", "--timeout", "0")
    row = rep["rows"][0]
    assert row["branches"] == 0
    assert row["global_lower"] <= row["pgd_upper"]
    assert row["global_lower"] == pytest.approx(-2.0)
    jsonschema.validate(rep, cli.REPORT_SCHEMA)


def test_bound_mode_continues_after_counterexample(capsys, tmp_path):
    rng = np.random.default_rng(2)
    net = random_network([2, 6, 6, 1], rng)
    m, p = write(tmp_path, net, rng.normal(size=2), 1.0)
    _, rep = run(capsys, "--model", m, "--property", p, "--mode", "bound", "--timeout", "2")
    row = rep["rows"][0]
    assert row["stop_reason"] != "counterexample"
    assert row["global_lower"] <= row["pgd_upper"] + 1e-9


def test_attack_then_oracle(capsys, hand_files):
    m, p = hand_files
    code_a, att = run(capsys, "--model", m, "--property", p, "--mode", "attack")
    code_o, ora = run(capsys, "--model", m, "--property", p, "--mode", "oracle")
    assert code_a == code_o == cli.EXIT_FALSIFIED
    assert att["rows"][0]["global_upper"] >= ora["rows"][0]["global_lower"] - 1e-12
    assert ora["rows"][0]["global_lower"] == pytest.approx(-2.0)
    for rep in (att, ora):
        jsonschema.validate(rep, cli.REPORT_SCHEMA)


def test_oracle_identity_prints_minus_eps(capsys, tmp_path):
    m, p = write(tmp_path, Network([[[1.0]]], [[0.0]]), [0.0], 0.75)
    code, rep = run(capsys, "--model", m, "--property", p, "--mode", "oracle")
    assert rep["rows"][0]["global_lower"] == pytest.approx(-0.75)
    assert rep["rows"][0]["argmin"] == [-0.75]


def test_oracle_verified_has_no_counterexample(capsys, robust_files):
    m, p = robust_files
    code, rep = run(capsys, "--model", m, "--property", p, "--mode", "oracle")
    assert code == cli.EXIT_VERIFIED
    assert rep["rows"][0]["counterexample"] is None


def test_oracle_guard(capsys, tmp_path):
    net = random_network([2, 30, 1], np.random.default_rng(1))
    m, p = write(tmp_path, net, [0.0, 0.0], 5.0)
    assert cli.main(["--model", m, "--property", p, "--mode", "oracle"]) == cli.EXIT_GUARD


@pytest.mark.parametrize("content", ["{broken", '{"layers": []}', '{"layers": [{"weight": [[1, "a"]], "bias": [0]}]}'])
def test_bad_model_exit_3(tmp_path, content, hand_files):
    bad = tmp_path / "bad.json"
    bad.write_text(content)
    assert cli.main(["--model", str(bad), "--property", hand_files[1]]) == cli.EXIT_INPUT


def test_missing_file_exit_3(hand_files):
    assert cli.main(["--model", "/nonexistent.json", "--property", hand_files[1]]) == cli.EXIT_INPUT


def test_dimension_mismatch_exit_3(tmp_path, hand_net):
    m, p = write(tmp_path, hand_net, [0.0, 0.0, 0.0], 1.0)
    assert cli.main(["--model", m, "--property", p]) == cli.EXIT_INPUT


def test_non_linf_oracle_exit_3(tmp_path, hand_net):
    m = tmp_path / "m.json"
    save_network(hand_net, m)
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"x0": [0, 0], "epsilon": 1.0, "p": 2, "spec_rows": [[1.0]]}))
    assert cli.main(["--model", str(m), "--property", str(p), "--mode", "oracle"]) == cli.EXIT_INPUT


@pytest.mark.parametrize("flag", [["--batch", "0"], ["--threads", "0"], ["--timeout", "-1"],
                                  ["--eta", "0"]])
def test_bad_flags_exit_3(hand_files, flag):
    m, p = hand_files
    assert cli.main(["--model", m, "--property", p] + flag) == cli.EXIT_INPUT


def test_multi_row_exit_code_and_logs(capsys, tmp_path, hand_net):
    # row 0: f >= -2 (falsified); row 1: -f + 3 > 0 (verified, f <= 2)
    m, p = write(tmp_path, hand_net, [0.0, 0.0], 1.0, rows=[[1.0], [-1.0]], consts=[0.0, 3.0])
    log = tmp_path / "run.csv"
    code, rep = run(capsys, "--model", m, "--property", p, "--log", str(log))
    assert [r["status"] for r in rep["rows"]] == ["Falsified", "Verified"]
    assert code == cli.EXIT_FALSIFIED
    for r in range(2):
        path = tmp_path / f"run-row{r}.csv"
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert rows and list(rows[0]) == list(cli.LOG_FIELDS)
        assert rows[0]["wall_seconds"] == ""


def test_report_file_and_determinism(tmp_path, hand_files):
    m, p = hand_files
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        cli.main(["--model", m, "--property", p, "--seed", "5", "--threads", "1",
                  "--report", str(path), "--log", str(path.with_suffix(".csv"))])
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".csv").read_bytes() == b.with_suffix(".csv").read_bytes()
    rep = json.loads(a.read_text())
    assert rep["config"]["seed"] == 5 and "report" not in rep["config"]


def test_threads_from_environment(capsys, hand_files, monkeypatch):
    monkeypatch.setenv("VERIFIER_THREADS", "2")
    m, p = hand_files
    _, rep = run(capsys, "--model", m, "--property", p)
    assert rep["config"]["threads"] == 2


def test_exit_code_is_total():
    assert cli._exit_for(["Verified", "Verified"]) == 0
    assert cli._exit_for(["Verified", "Unknown"]) == 2
    assert cli._exit_for(["Unknown", "Falsified"]) == 1
    assert cli._exit_for([]) == 0


def test_num_encoding():
    assert cli._num(math.inf) == "inf" and cli._num(-math.inf) == "-inf"
    assert cli._num(None) is None and cli._num(1.5) == 1.5


def test_selftest_passes(capsys):
    assert cli.main(["--mode", "selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 11


def test_bound_mode_monotone_in_budget(capsys, tmp_path):
    rng = np.random.default_rng(0)
    from reluverify.checks import positive_at_center
    net = random_network([3, 8, 8, 1], rng)
    x0 = rng.normal(size=3)
    net = positive_at_center(net, x0)
    m, p = write(tmp_path, net, x0, 0.9 * 0.74462890625)
    lowers = []
    for budget in ("0", "0.3", "1.5"):
        _, rep = run(capsys, "--model", m, "--property", p, "--mode", "bound", "--timeout", budget)
        lowers.append(rep["rows"][0]["global_lower"])
    assert lowers == sorted(lowers)
    assert lowers[-1] > lowers[0]
