"""
Tests for the edaflow command line.
"""

import json
from datetime import datetime, timedelta, timezone

import pytest
from click.testing import CliRunner

from edaflow.main import ExitCode, cli
from edaflow.services.orchestrator import mask_wall_time


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner(mix_stderr=False)


@pytest.fixture
def picorv32_path(fixtures_dir):
    return str(fixtures_dir / "picorv32_job.json")


def run_dirs(runs_dir):
    return sorted(p for p in runs_dir.iterdir() if p.is_dir())


def read_report(run_dir):
    return json.loads((run_dir / "report.json").read_text(encoding="utf-8"))


class TestValidate:
    def test_complete(self, runner, picorv32_path):
        result = runner.invoke(cli, ["validate", "--job", picorv32_path])
        assert result.exit_code == ExitCode.SUCCESS
        assert "design=picorv32" in result.output

    def test_missing_constraint(self, runner, fixtures_dir, tmp_path):
        doc = json.loads((fixtures_dir / "picorv32_job.json").read_text())
        del doc["constraint_path"]
        path = tmp_path / "job.json"
        path.write_text(json.dumps(doc))
        result = runner.invoke(cli, ["validate", "--job", str(path)])
        assert result.exit_code == ExitCode.INCOMPLETE
        assert "missing: constraint_path" in result.output

    def test_interactive_completion(self, runner, fixtures_dir, tmp_path):
        doc = json.loads((fixtures_dir / "picorv32_job.json").read_text())
        del doc["constraint_path"]
        path, out = tmp_path / "job.json", tmp_path / "done.json"
        path.write_text(json.dumps(doc))
        result = runner.invoke(cli, ["validate", "--job", str(path), "--interactive", "--out", str(out)],
                               input="designs/picorv32/constraint.sdc\n")
        assert result.exit_code == ExitCode.SUCCESS
        assert json.loads(out.read_text())["constraint_path"] == "designs/picorv32/constraint.sdc"

    def test_interactive_reprompts_bad_answer(self, runner, fixtures_dir, tmp_path):
        doc = json.loads((fixtures_dir / "picorv32_job.json").read_text())
        del doc["design"]["cell_count"]
        path = tmp_path / "job.json"
        path.write_text(json.dumps(doc))
        result = runner.invoke(cli, ["validate", "--job", str(path), "--interactive"], input="many\n15000\n")
        assert result.exit_code == ExitCode.SUCCESS
        assert "must be an integer" in result.stderr

    def test_missing_file_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(cli, ["validate", "--job", str(tmp_path / "absent.json")])
        assert result.exit_code == ExitCode.IO_ERROR

    def test_range_violation(self, runner, fixtures_dir, tmp_path):
        doc = json.loads((fixtures_dir / "picorv32_job.json").read_text())
        doc["options"] = {"placement_density": 2.0}
        path = tmp_path / "job.json"
        path.write_text(json.dumps(doc))
        assert runner.invoke(cli, ["validate", "--job", str(path)]).exit_code == ExitCode.INCOMPLETE


class TestRunFlow:
    def allocate(self, runner, job, runs_dir, deadline, *extra):
        return runner.invoke(cli, ["run-flow", "--job", job, "--mode", "allocate", "--deadline", str(deadline),
                                   "--runtimes", self.runtimes, "--out", str(runs_dir), *extra])

    @pytest.fixture(autouse=True)
    def measured_runtimes(self, measured_options_path):
        self.runtimes = str(measured_options_path)

    def test_allocate_480(self, runner, picorv32_path, runs_dir):
        result = self.allocate(runner, picorv32_path, runs_dir, 480)
        assert result.exit_code == ExitCode.SUCCESS, result.output
        assert "allocation: (4,8,1) 467s" in result.output
        (run_dir,) = run_dirs(runs_dir)
        report = read_report(run_dir)
        assert report["allocation"]["choices"] == [4, 8, 1]
        for name in ("jobspec.json", "tasks.json", "events.jsonl"):
            assert (run_dir / name).exists()

    def test_infeasible_400(self, runner, picorv32_path, runs_dir):
        result = self.allocate(runner, picorv32_path, runs_dir, 400)
        assert result.exit_code == ExitCode.INFEASIBLE
        assert "minimum achievable total time 455s" in result.output

    def test_deadline_required(self, runner, picorv32_path, runs_dir):
        result = runner.invoke(cli, ["run-flow", "--job", picorv32_path, "--mode", "allocate",
                                     "--out", str(runs_dir)])
        assert result.exit_code == ExitCode.INCOMPLETE

    def test_replay_is_byte_equal(self, runner, picorv32_path, runs_dir):
        self.allocate(runner, picorv32_path, runs_dir, 480, "--seed", "7")
        (first,) = run_dirs(runs_dir)
        replay = self.allocate(runner, str(first / "jobspec.json"), runs_dir, 480, "--seed", "7")
        assert replay.exit_code == ExitCode.SUCCESS
        second = next(d for d in run_dirs(runs_dir) if d != first)
        assert mask_wall_time(read_report(first)) == mask_wall_time(read_report(second))
        assert (first / "jobspec.json").read_bytes() == (second / "jobspec.json").read_bytes()

    def test_flow_mode(self, runner, fixtures_dir, runs_dir):
        result = runner.invoke(cli, ["run-flow", "--job", str(fixtures_dir / "gcd_job.json"),
                                     "--out", str(runs_dir)])
        assert result.exit_code == ExitCode.SUCCESS, result.output
        assert "final PPA product:" in result.output

    def test_status_and_history(self, runner, picorv32_path, runs_dir):
        self.allocate(runner, picorv32_path, runs_dir, 480)
        (run_dir,) = run_dirs(runs_dir)
        status = runner.invoke(cli, ["status", run_dir.name, "--runs-dir", str(runs_dir)])
        assert status.exit_code == ExitCode.SUCCESS
        assert f"run {run_dir.name}: completed, 7 tasks" in status.output
        history = runner.invoke(cli, ["history", "--design", "picorv32", "--runs-dir", str(runs_dir)])
        assert "1 run(s)" in history.output
        empty = runner.invoke(cli, ["history", "--design", "gcd", "--runs-dir", str(runs_dir)])
        assert "0 run(s)" in empty.output

    def test_history_until_date_covers_the_day(self, runner, picorv32_path, runs_dir):
        self.allocate(runner, picorv32_path, runs_dir, 480)
        today = datetime.now(timezone.utc).date()
        same_day = runner.invoke(cli, ["history", "--until", today.isoformat(), "--runs-dir", str(runs_dir)])
        assert "1 run(s)" in same_day.output
        before = runner.invoke(cli, ["history", "--until", (today - timedelta(days=1)).isoformat(),
                                     "--runs-dir", str(runs_dir)])
        assert "0 run(s)" in before.output

    def test_unknown_run(self, runner, runs_dir):
        result = runner.invoke(cli, ["status", "missing-run", "--runs-dir", str(runs_dir)])
        assert result.exit_code == ExitCode.IO_ERROR


class TestAllocate:
    def test_summary_line(self, runner, measured_options_path):
        result = runner.invoke(cli, ["allocate", "--options", str(measured_options_path), "--budget", "480"])
        assert result.exit_code == ExitCode.SUCCESS
        assert result.output.splitlines()[0] == "(4,8,1) 467s 21.46 CNY"

    def test_oracle_agrees(self, runner, measured_options_path):
        result = runner.invoke(cli, ["allocate", "--options", str(measured_options_path), "--budget", "480", "--oracle"])
        assert result.output.splitlines()[0] == "(4,8,1) 467s 21.46 CNY"

    def test_infeasible(self, runner, measured_options_path):
        result = runner.invoke(cli, ["allocate", "--options", str(measured_options_path), "--budget", "400"])
        assert result.exit_code == ExitCode.INFEASIBLE
        assert "minimum achievable total time: 455s" in result.output

    def test_malformed_options(self, runner, tmp_path):
        path = tmp_path / "options.json"
        path.write_text("{\"stages\": ")
        result = runner.invoke(cli, ["allocate", "--options", str(path), "--budget", "480"])
        assert result.exit_code == ExitCode.IO_ERROR

    def test_unknown_flag(self, runner):
        assert runner.invoke(cli, ["allocate", "--bogus"]).exit_code == ExitCode.IO_ERROR


class TestPrediction:
    def test_train_then_predict(self, runner, tmp_path):
        model = tmp_path / "model.json"
        result = runner.invoke(cli, ["predict-train", "--samples", "200", "--seed", "3", "--out", str(model)])
        assert result.exit_code == ExitCode.SUCCESS
        assert "holdout MAPE:" in result.output
        predicted = runner.invoke(cli, ["predict", "--model", str(model), "--cell-count", "15000",
                                        "--stage", "routing", "--vcpus", "1", "--vcpus", "8"])
        assert predicted.exit_code == ExitCode.SUCCESS
        assert len(predicted.output.splitlines()) == 2

    def test_missing_dataset(self, runner, tmp_path):
        result = runner.invoke(cli, ["predict-train", "--data", str(tmp_path / "none.csv"),
                                     "--out", str(tmp_path / "m.json")])
        assert result.exit_code == ExitCode.IO_ERROR


class TestDse:
    def test_trials_csv(self, runner, picorv32_path, tmp_path):
        csv = tmp_path / "trials.csv"
        result = runner.invoke(cli, ["dse", "--job", picorv32_path, "--budget", "6", "--seed", "1",
                                     "--trials-csv", str(csv), "--out", str(tmp_path / "dse.json")])
        assert result.exit_code == ExitCode.SUCCESS, result.output
        assert "improvement:" in result.output
        assert csv.read_text().splitlines()[0] == "trial_index,objective,best_so_far,fault_code"

    def test_aborted_exploration(self, runner, fixtures_dir, tmp_path):
        doc = json.loads((fixtures_dir / "picorv32_job.json").read_text())
        doc["options"] = {"extra_params": {"timeout_s": 1}}
        job, faults = tmp_path / "job.json", tmp_path / "faults.json"
        job.write_text(json.dumps(doc))
        faults.write_text(json.dumps([{"fault_code": "TIMEOUT", "remedy": {"kind": "abort"}}]))
        result = runner.invoke(cli, ["dse", "--job", str(job), "--budget", "4", "--faults", str(faults)])
        assert result.exit_code == ExitCode.FAILED_TASKS


class TestSimulate:
    @pytest.mark.parametrize("cluster,makespan", [("4x8", "100s"), ("1x8", "400s")])
    def test_makespan(self, runner, fixtures_dir, cluster, makespan, tmp_path):
        events = tmp_path / "events.jsonl"
        result = runner.invoke(cli, ["simulate", "--cluster", cluster,
                                     "--tasks", str(fixtures_dir / "eight_uniform.json"), "--out", str(events)])
        assert result.exit_code == ExitCode.SUCCESS
        assert f"makespan: {makespan}" in result.output
        assert len(events.read_text().splitlines()) >= 24


class TestSchema:
    @pytest.mark.parametrize("name", ["allocation", "report", "faults", "tasks"])
    def test_prints_json_schema(self, runner, name):
        result = runner.invoke(cli, ["schema", name])
        assert result.exit_code == ExitCode.SUCCESS
        doc = json.loads(result.output)
        assert "properties" in doc or doc.get("type") == "array"
