import json
import logging
from pathlib import Path

import pytest
from click.testing import CliRunner

from app.cli import cli
from app.core.models import E1_INIT_DECAY
from app.services.config import load_experiment_config
from app.services.storage import COMPARISON_COLUMNS, read_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def runner():
    return CliRunner()


def _write(tmp_path, text, name="config.json"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run_identity(runner, out):
    return runner.invoke(cli, ["--quiet", "run", "--config", str(CONFIGS / "identity_homotopy.json"), "--out", str(out)])


# ==================== run ====================

def test_run_identity_homotopy(runner, tmp_path):
    result = _run_identity(runner, tmp_path / "run")
    assert result.exit_code == 0, result.output
    rows = read_csv(str(tmp_path / "run" / "comparison.csv"))
    assert list(rows[0]) == COMPARISON_COLUMNS
    assert [r["approach"] for r in rows] == ["Benchmark", "PCM", "Naive Newton", "OP-TVO iter 1", "OP-TVO iter 2"]
    for row in rows:
        assert float(row["O_d"]) <= 1e-12
        assert float(row["constraint_violation"]) <= 1e-10
    report = json.loads((tmp_path / "run" / "optvo_report.json").read_text())
    assert report["status"] == "converged"


def test_solver_selection_override(runner, tmp_path):
    out = tmp_path / "run"
    result = runner.invoke(cli, ["--quiet", "run", "--config", str(CONFIGS / "identity_homotopy.json"),
                                 "--out", str(out), "--solvers", "benchmark,optvo"])
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in out.glob("*_report.json")) == ["benchmark_report.json", "optvo_report.json"]


def test_output_directory_from_environment(runner, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("OPTVO_OUTPUT_DIR", str(tmp_path / "from_env"))
    result = runner.invoke(cli, ["--quiet", "run", "--config", str(CONFIGS / "identity_homotopy.json")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "from_env" / "comparison.csv").exists()


def test_rerun_is_byte_identical(runner, tmp_path):
    for name in ("a", "b"):
        assert _run_identity(runner, tmp_path / name).exit_code == 0
    for artifact in ("comparison.csv", "optvo_report.json", "pcm_report.json"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


@pytest.mark.slow
def test_quadratic_config_reaches_optimum(runner, tmp_path):
    out = tmp_path / "quadratic"
    result = runner.invoke(cli, ["--quiet", "run", "--config", str(CONFIGS / "quadratic.json"), "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = {r["approach"]: r for r in read_csv(str(out / "comparison.csv"))}
    assert float(rows["PCM"]["O_d"]) <= 1e-8
    assert float(rows["Naive Newton"]["O_d"]) <= 1e-8


# ==================== configuration errors ====================

@pytest.mark.parametrize("document,field", [
    ('{"solver": {"delta_theta": -0.01}}', "solver.delta_theta"),
    ('{"solver": {"delta_thta": 0.01}}', "solver.delta_thta"),
    ('{"pcm": {"delta_theta": 0.7}}', "pcm.delta_theta"),
    ('{"problem": {"name": "rosenbrock"}}', "problem.name"),
    ('{"problem": {"name": "e1", "params": {"M": 1}}}', "problem.params.M"),
    ('{"solvers": ["benchmark", "simplex"]}', "solvers[1]"),
])
def test_config_errors_exit_with_field(runner, tmp_path, document, field):
    result = runner.invoke(cli, ["run", "--config", _write(tmp_path, document), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert f'"field": "{field}"' in result.output


def test_invalid_json_reports_position(runner, tmp_path):
    result = runner.invoke(cli, ["run", "--config", _write(tmp_path, '{\n  "seed": ,\n}')])
    assert result.exit_code == 2
    assert '"line": 2' in result.output
    assert '"error": "ConfigError"' in result.output


def test_missing_config_file(runner, tmp_path):
    result = runner.invoke(cli, ["run", "--config", str(tmp_path / "nope.json")])
    assert result.exit_code == 2


# ==================== dump-trajectory ====================

def test_dump_trajectory(runner, tmp_path):
    run_dir = tmp_path / "run"
    assert _run_identity(runner, run_dir).exit_code == 0

    empty = tmp_path / "empty.csv"
    result = runner.invoke(cli, ["dump-trajectory", str(run_dir), "--out", str(empty), "--agents", ""])
    assert result.exit_code == 0, result.output
    assert empty.read_text() == "theta\n"

    wide = tmp_path / "wide.csv"
    result = runner.invoke(cli, ["dump-trajectory", str(run_dir), "--out", str(wide),
                                 "--agents", "1,3", "--component", "2", "--iteration", "1"])
    assert result.exit_code == 0, result.output
    rows = read_csv(str(wide))
    assert list(rows[0]) == ["theta", "agent_1", "agent_3"]
    assert len(rows) == 21


def test_dump_trajectory_errors(runner, tmp_path):
    result = runner.invoke(cli, ["dump-trajectory", str(tmp_path / "missing"), "--out", str(tmp_path / "x.csv")])
    assert result.exit_code == 1
    assert "ArtifactNotFoundError" in result.output

    run_dir = tmp_path / "run"
    assert _run_identity(runner, run_dir).exit_code == 0
    result = runner.invoke(cli, ["dump-trajectory", str(run_dir), "--out", str(tmp_path / "x.csv"), "--agents", "9"])
    assert result.exit_code == 2


# ==================== compare and selftest ====================

def test_compare_merges_reports(runner, tmp_path):
    run_dir = tmp_path / "run"
    assert _run_identity(runner, run_dir).exit_code == 0
    out = tmp_path / "merged.csv"
    result = runner.invoke(cli, ["compare", str(run_dir / "pcm_report.json"), str(run_dir / "optvo_report.json"),
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert [r["approach"] for r in read_csv(str(out))] == ["PCM", "OP-TVO iter 1", "OP-TVO iter 2"]


def test_compare_rejects_missing_report(runner, tmp_path):
    result = runner.invoke(cli, ["compare", str(tmp_path / "none.json"), "--out", str(tmp_path / "m.csv")])
    assert result.exit_code == 1


@pytest.mark.parametrize("document", [
    [],
    {"solver": "pcm", "problem": "p", "status": "completed", "records": [{"iteration": 1, "bogus": 0}]},
])
def test_compare_rejects_malformed_report(runner, tmp_path, document):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    result = runner.invoke(cli, ["compare", str(path), "--out", str(tmp_path / "m.csv")])
    assert result.exit_code == 2
    assert "not a run report" in result.output
    assert '"error": "ConfigError"' in result.output


def test_selftest_fast_suite(runner):
    result = runner.invoke(cli, ["--quiet", "selftest", "--suite", "fast"])
    assert result.exit_code == 0, result.output
    assert "all 5 checks passed" in result.output


def test_shipped_erfc_configs_start_from_decaying_rates():
    for name in ("e1_small.json", "e1_full.json"):
        assert load_experiment_config(str(CONFIGS / name)).solver.init_decay == E1_INIT_DECAY
