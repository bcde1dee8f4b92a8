import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from cli.commands import EXIT_INVALID, EXIT_NOT_CONVERGED, build_config, cli
from cli.emit import emit
from cli.runner import RunConfig, RunRecord, format_validation_error, read_config_file
from core.config import SCHEMA_VERSION
from core.errors import ConfigError


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.setenv("NLSPEC_THREADS", "1")


@pytest.fixture
def runner():
    return CliRunner()


def discrete_eigenvalue(n: int) -> float:
    h = 1.0 / (n + 1)
    return (4.0 / h**2) * math.sin(math.pi * h / 2.0) ** 2


def test_eig_emits_json_record(runner):
    result = runner.invoke(cli, ["eig", "--n", "32", "--F", "plaplacian:p=2", "--G", "power:q=2", "--restarts", "1"])

    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["schema"] == SCHEMA_VERSION
    assert payload["command"] == "eig"
    assert payload["required_converged"] is True
    assert payload["results"]["lambda"] == pytest.approx(discrete_eigenvalue(32), rel=1e-9)
    assert payload["config"]["n"] == 32
    assert payload["config"]["F"] == "plaplacian:p=2"


def test_eig_output_is_deterministic(runner):
    args = ["eig", "--n", "16", "--F", "plaplacian:p=3", "--G", "power:q=3", "--restarts", "2", "--seed", "7"]
    first = json.loads(runner.invoke(cli, args).output)
    second = json.loads(runner.invoke(cli, args).output)

    for payload in (first, second):
        payload.pop("timestamp")
        payload.pop("wall_seconds")
    assert first == second


@pytest.mark.parametrize(
    "args, flag",
    [
        (["verify", "--p", "1.5"], "--p: p must be >= 2 (got 1.5)"),
        (["eig", "--n", "2"], "--n:"),
        (["eig", "--dim", "3"], "--dim:"),
        (["eig", "--F", "bogus:p=2"], "--F:"),
        (["eig", "--extent", "1,-1", "--dim", "2"], "--extent:"),
        (["solve", "--lambdas", "3,1"], "--lambdas:"),
        (["solve"], "solve needs --lambda"),
        (["report"], "report needs --input"),
        (["eig", "--n", "4", "--F", "bilaplacian:p=2"], "--F: bilaplacian needs n >= 5 (got 4)"),
        (["verify", "--suite", "bilap", "--n", "4"], "--suite: suite bilap needs n >= 5 (got 4)"),
    ],
)
def test_invalid_configuration_exits_with_2(runner, args, flag):
    result = runner.invoke(cli, args)

    assert result.exit_code == EXIT_INVALID
    assert flag in result.output


def test_non_convergence_exits_with_3(runner):
    result = runner.invoke(
        cli,
        ["eig", "--n", "16", "--F", "plaplacian:p=3", "--G", "power:q=3", "--max-iter", "1", "--restarts", "1"],
    )

    assert result.exit_code == EXIT_NOT_CONVERGED


def test_csv_format(runner):
    result = runner.invoke(cli, ["eig", "--n", "16", "--restarts", "1", "--format", "csv"])

    assert result.exit_code == 0, result.output
    lines = result.output.strip().splitlines()
    assert lines[0] == "label,lambda,lambda_root,residual,stationarity,iterations,converged,restart"
    assert len(lines) == 2


def test_scan_reports_slope(runner):
    result = runner.invoke(cli, ["scan", "--n", "16", "--F", "plaplacian:p=3", "--G", "power:q=2"])

    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)["results"]
    assert payload["quotient_exponent"] == pytest.approx(1.0, abs=1e-9)
    assert payload["classification"] == "F_dominant_scaling"


def test_verify_suite_narrowed_by_p(runner):
    result = runner.invoke(cli, ["verify", "--suite", "prop1", "--p", "2", "--n", "16", "--restarts", "1"])

    assert result.exit_code == 0, result.output
    reports = json.loads(result.output)["results"]
    assert [report["name"] for report in reports] == ["prop1_part2"]
    assert reports[0]["passed"] is True


def test_solve_sweep(runner):
    result = runner.invoke(
        cli, ["solve", "--p0", "2", "--p1", "0", "--lambdas", "0,1", "--n", "16", "--rhs", "mode", "--restarts", "1"]
    )

    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)["results"]
    assert payload["theorem_consistent"] is True
    assert [row["lambda"] for row in payload["rows"]] == [0.0, 1.0]


def test_out_file_and_report_round_trip(runner, tmp_path):
    out = tmp_path / "nested" / "run.json"
    result = runner.invoke(cli, ["eig", "--n", "16", "--restarts", "1", "--out", str(out)])

    assert result.exit_code == 0, result.output
    stored = json.loads(out.read_text(encoding="utf-8"))
    assert stored["command"] == "eig"
    assert not list(out.parent.glob("*.tmp"))

    report = runner.invoke(cli, ["report", "--input", str(out), "--format", "csv"])
    assert report.exit_code == 0, report.output
    assert report.output.splitlines()[0].startswith("label,lambda")


def test_report_rejects_broken_input(runner, tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")

    result = runner.invoke(cli, ["report", "--input", str(broken)])

    assert result.exit_code == 1


def test_config_file_values_are_overridden_by_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# sweep\nn = 12\nmax-iter = 40\nlambda = 2.5\n", encoding="utf-8")

    config = build_config("solve", str(path), {"n": 20, "seed": None})

    assert config.n == 20
    assert config.max_iter == 40
    assert config.lam == 2.5


def test_config_file_syntax_error(tmp_path, runner):
    path = tmp_path / "run.cfg"
    path.write_text("n 12\n", encoding="utf-8")

    with pytest.raises(ConfigError):
        read_config_file(path)
    result = runner.invoke(cli, ["eig", "--config", str(path)])
    assert result.exit_code == EXIT_INVALID


def test_validation_error_names_every_field():
    with pytest.raises(ValidationError) as excinfo:
        RunConfig.model_validate({"command": "eig", "n": 1, "p": 1.0})

    lines = format_validation_error(excinfo.value)
    assert any(line.startswith("--n:") for line in lines)
    assert any(line.startswith("--p:") for line in lines)


def test_p0_p1_must_add_up_to_p():
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"command": "solve", "lambda": 1.0, "p": 4, "p0": 2, "p1": 1})


def test_record_round_trip_through_payload():
    record = RunRecord(command="verify", config={"n": 8}, results=[], timestamp="t", wall_seconds=0.5)

    restored = RunRecord.from_payload(json.loads(emit(record)))

    assert restored == record
    with pytest.raises(ConfigError):
        RunRecord.from_payload({"command": "eig"})


def test_emit_rejects_unknown_format():
    record = RunRecord(command="eig", config={}, results={})

    with pytest.raises(ConfigError):
        emit(record, "xml")


def test_tiny_mesh_is_fine_without_bilaplacian(runner):
    result = runner.invoke(cli, ["eig", "--n", "4", "--restarts", "1"])

    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["config"]["n"] == 4


def test_verify_all_is_reproducible(runner, tmp_path):
    payloads = []
    for name in ("first.json", "second.json"):
        out = tmp_path / name
        args = ["verify", "--suite", "all", "--seed", "7", "--n", "16", "--restarts", "1", "--out", str(out)]
        result = runner.invoke(cli, args)
        assert result.exit_code in (0, EXIT_NOT_CONVERGED), result.output
        payload = json.loads(out.read_text(encoding="utf-8"))
        payload.pop("timestamp")
        payload.pop("wall_seconds")
        payloads.append(payload)

    assert payloads[0] == payloads[1]
    assert {report["name"] for report in payloads[0]["results"]} >= {"prop1_part2", "ineq_3_3", "coercivity"}


def test_verify_with_no_matching_cases(runner):
    result = runner.invoke(cli, ["verify", "--suite", "ineq", "--p", "5"])

    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["results"] == []


def test_csv_rows_end_with_crlf():
    results = {"rows": [{"lambda": float(k), "converged": True} for k in range(3)], "metadata": {"lambda_disc": 9.8}}
    record = RunRecord(command="solve", config={}, results=results)

    lines = emit(record, "csv").decode("utf-8").split("\r\n")

    assert lines[-1] == ""
    assert len(lines[:-1]) == 4
    assert lines[0] == "lambda,converged,residual,iterations,expected_solvable,lambda_disc"
    assert all("\n" not in line for line in lines)


def test_json_reals_carry_seventeen_significant_digits():
    results = {"lambda": 0.1, "lambda_root": np.float64(2.0), "iterations": 3, "label": "power:q=2.5", "converged": True}
    record = RunRecord(command="eig", config={"n": 8}, results=results, wall_seconds=0.5)

    text = emit(record).decode("utf-8")

    assert '"lambda": 1.0000000000000001e-01' in text
    assert '"lambda_root": 2.0000000000000000e+00' in text
    assert '"wall_seconds": 5.0000000000000000e-01' in text
    assert '"iterations": 3' in text
    assert '"label": "power:q=2.5"' in text
    payload = json.loads(text)
    assert payload["results"]["lambda"] == 0.1
    assert isinstance(payload["results"]["lambda_root"], float)
