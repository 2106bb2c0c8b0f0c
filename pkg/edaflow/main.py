"""
Command-line entry point for the EDA flow engine

This is the entry point for the entire application. Every subcommand prints a
human-readable summary on stdout, logs to stderr and, where it makes sense,
writes a JSON artifact with ``--out``.
"""

import json
import sys
from datetime import date, datetime, time, timezone
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
from pydantic import TypeAdapter, ValidationError

from edaflow.config import settings
from edaflow.errors import (
    AllTrialsFailed,
    DeadlineRequired,
    EdaFlowError,
    Infeasible,
    MalformedDocument,
    RangeViolation,
    UnremediableFault,
)
from edaflow.logging_config import configure_logging
from edaflow.models.flow import IncompleteReport, MachineConfig, StageKind, format_percentage
from edaflow.models.run import EventRecord, PlanMode, RunSummary, StatusReport, TaskStatus
from edaflow.services.allocator import (
    AllocationPlan,
    Objective,
    PriceList,
    brute_force_allocate,
    load_options,
    load_price_list,
    mckp_allocate,
    runtime_table,
)
from edaflow.services.cluster_sim import (
    ContainerRequest,
    Node,
    ScheduleEvent,
    load_requests,
    resolve_topology,
    simulate,
    write_events_jsonl,
)
from edaflow.services.dse_engine import (
    DseReport,
    FaultRule,
    default_space,
    load_fault_rules,
    run_dse,
    save_report_json,
)
from edaflow.services.eda_adapter import FlowEvaluator, get_backend
from edaflow.services.history_store import HistoryStore, dump_json
from edaflow.services.orchestrator import Backends, Orchestrator, RunReport
from edaflow.services.runtime_predictor import (
    TrainedModel,
    generate_synthetic_dataset,
    load_model,
    predict_table,
    save_model,
    train,
)
from edaflow.utils.csv_processor import load_dataset_csv, save_trials_csv
from edaflow.utils.validators import apply_answer, dump_job_spec, load_job_document, validate_job_spec


class ExitCode(IntEnum):
    SUCCESS = 0
    INCOMPLETE = 1
    INFEASIBLE = 2
    FAILED_TASKS = 3
    IO_ERROR = 4


def _write_json(path: Optional[str], doc: Any) -> None:
    if path is None:
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(dump_json(doc), encoding="utf-8")
    click.echo(f"wrote {target}")


def _print_incomplete(report: IncompleteReport) -> None:
    click.echo("job spec is incomplete")
    for name in report.missing:
        click.echo(f"  missing: {name}")
    for violation in report.violations:
        click.echo(f"  out of range: {violation.field}={violation.value} allowed {violation.allowed}")


def _complete_interactively(doc: Dict[str, Any]) -> Any:
    """Prompt for missing essential fields one at a time until the job validates."""
    result = validate_job_spec(doc)
    while isinstance(result, IncompleteReport) and result.missing:
        field = result.missing[0]
        try:
            apply_answer(doc, field, click.prompt(f"{field}"))
        except MalformedDocument as exc:
            click.echo(str(exc), err=True)
            continue
        result = validate_job_spec(doc)
    return result


def _resolve_job(path: str, interactive: bool) -> Any:
    doc = load_job_document(path)
    return _complete_interactively(doc) if interactive else validate_job_spec(doc)


class EdaFlowCli(click.Group):
    """Maps the error hierarchy and command return values onto exit codes."""

    def main(self, args: Optional[Sequence[str]] = None, prog_name: Optional[str] = None, **extra):
        extra.pop("standalone_mode", None)
        try:
            rv = super().main(args=args, prog_name=prog_name, standalone_mode=False, **extra)
        except click.UsageError as exc:
            exc.show()
            sys.exit(ExitCode.IO_ERROR)
        except click.Abort:
            click.echo("aborted", err=True)
            sys.exit(ExitCode.INCOMPLETE)
        except Infeasible as exc:
            click.echo(f"infeasible: {exc}")
            click.echo(f"minimum achievable total time: {exc.min_total_time_s:g}s")
            sys.exit(ExitCode.INFEASIBLE)
        except (RangeViolation, DeadlineRequired) as exc:
            click.echo(f"invalid job spec: {exc}", err=True)
            sys.exit(ExitCode.INCOMPLETE)
        except (EdaFlowError, OSError, ValidationError, json.JSONDecodeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(ExitCode.IO_ERROR)
        sys.exit(int(rv) if isinstance(rv, int) else ExitCode.SUCCESS)


@click.group(cls=EdaFlowCli)
@click.option("--log-level", default=None, help="Override EDAFLOW_LOG_LEVEL")
@click.option("--log-format", type=click.Choice(["json", "console"]), default=None)
def cli(log_level: Optional[str], log_format: Optional[str]) -> None:
    """Deterministic EDA backend flow engine."""
    overrides = {k: v for k, v in {"log_level": log_level, "log_format": log_format}.items() if v}
    configure_logging(settings.model_copy(update=overrides))


# --- validate -----------------------------------------------------------------

@cli.command()
@click.option("--job", "job_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--interactive", is_flag=True, help="Prompt for missing essential fields")
@click.option("--out", default=None, help="Write the completed job spec here")
def validate(job_path: str, interactive: bool, out: Optional[str]) -> int:
    """Check a job spec for missing essential fields."""
    result = _resolve_job(job_path, interactive)
    if isinstance(result, IncompleteReport):
        _print_incomplete(result)
        return ExitCode.INCOMPLETE
    click.echo(f"job spec is complete: design={result.design.name} "
               f"stages={','.join(s.value for s in result.stages)} tool={result.tool.value}")
    if out:
        dump_job_spec(result, out)
        click.echo(f"wrote {out}")
    return ExitCode.SUCCESS


# --- run-flow -----------------------------------------------------------------

def _print_report(run_id: str, run_dir: Path, report: RunReport) -> None:
    click.echo(f"run {run_id} ({report.mode.value}, seed {report.seed})")
    click.echo(f"run directory: {run_dir}")
    for task in report.tasks:
        extra = f" vcpus={task.vcpus}" if task.vcpus else ""
        error = f" error={task.error}" if task.error else ""
        click.echo(f"  {task.id:<24} {task.status.value:<8}{extra}{error}")
    if report.training:
        click.echo(f"predictor holdout MAPE: {report.training.mean_abs_pct_error_on_holdout:.4f}")
    for stage, table in report.predictions.items():
        cells = " ".join(f"{v}:{t:.3f}s" for v, t in table.items())
        click.echo(f"predicted {stage.value}: {cells}")
    if report.allocation:
        plan = report.allocation
        click.echo(f"allocation: {plan.label()} {plan.total_time_s:g}s {plan.total_cost:.2f} "
                   f"objective={plan.objective_value:.6f}")
    if report.infeasible:
        click.echo(f"infeasible: deadline {report.infeasible.budget_s:g}s, minimum achievable total "
                   f"time {report.infeasible.min_total_time_s:g}s")
    if report.dse:
        click.echo(f"dse: best trial {report.dse.best_index} of {len(report.dse.trials)}, "
                   f"improvement {report.dse.improvement_pct}, params {report.dse.best_params}")
    for result in report.stage_results:
        if result.ok:
            m = result.metrics
            click.echo(f"  {result.stage.value:<10} {result.runtime_s:g}s cp_delay={m.cp_delay_ns}ns "
                       f"power={m.power_mw}mW area={m.area_um2}um2")
        else:
            click.echo(f"  {result.stage.value:<10} {result.fault_code}: {result.message}")
    if report.final_metrics:
        click.echo(f"final PPA product: {report.final_metrics.product:.6g}")
    if report.cluster:
        click.echo(f"cluster makespan: {report.cluster.makespan_s:g}s "
                   f"(sequential {report.cluster.sequential_s:g}s, {report.cluster.tasks} containers)")


@cli.command("run-flow")
@click.option("--job", "job_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice([m.value for m in PlanMode]), default=PlanMode.FLOW_ONLY.value)
@click.option("--deadline", type=float, default=None, help="Seconds; required for --mode allocate")
@click.option("--seed", type=int, default=None)
@click.option("--out", default=None, help="Runs directory (default EDAFLOW_RUNS_DIR)")
@click.option("--runtimes", default=None, help="Options file with measured stage runtimes")
@click.option("--model", "model_path", default=None, help="Trained runtime model file")
@click.option("--prices", default=None, help="Price list file")
@click.option("--objective", type=click.Choice([o.value for o in Objective]),
              default=Objective.RECIPROCAL_COST.value)
@click.option("--budget", type=int, default=None, help="DSE trial budget")
@click.option("--strategy", type=click.Choice(["random", "anneal"]), default=None)
@click.option("--faults", default=None, help="Fault list file")
@click.option("--workers", type=int, default=1, help="Parallel DSE evaluations")
@click.option("--interactive", is_flag=True)
def run_flow(job_path: str, mode: str, deadline: Optional[float], seed: Optional[int],
             out: Optional[str], runtimes: Optional[str], model_path: Optional[str],
             prices: Optional[str], objective: str, budget: Optional[int], strategy: Optional[str],
             faults: Optional[str], workers: int, interactive: bool) -> int:
    """Validate, plan and execute a job."""
    job = _resolve_job(job_path, interactive)
    if isinstance(job, IncompleteReport):
        _print_incomplete(job)
        return ExitCode.INCOMPLETE

    price_list = load_price_list(prices)
    backends = Backends(
        tool_backend=get_backend(job.tool),
        runtime_table=runtime_table(load_options(runtimes, price_list)) if runtimes else None,
        model=load_model(model_path) if model_path else None,
        price_list=price_list,
        objective=Objective(objective),
        fault_rules=load_fault_rules(faults),
        dse_budget=budget or settings.dse_budget,
        dse_strategy=strategy or settings.dse_strategy,
        dse_workers=workers,
    )
    include_training = PlanMode(mode) is PlanMode.ALLOCATE_THEN_FLOW and not (runtimes or model_path)
    store = HistoryStore(out)
    orchestrator = Orchestrator(backends, store)
    run_id, report = orchestrator.run(job, mode, deadline, seed, include_training)

    _print_report(run_id, store.run_dir(run_id), report)
    if report.infeasible:
        return ExitCode.INFEASIBLE
    if report.failed_tasks or not report.complete:
        return ExitCode.FAILED_TASKS
    return ExitCode.SUCCESS


# --- allocate -----------------------------------------------------------------

@cli.command()
@click.option("--options", "options_path", required=True)
@click.option("--budget", type=float, required=True, help="Deadline in seconds")
@click.option("--prices", default=None, help="Price list file")
@click.option("--objective", type=click.Choice([o.value for o in Objective]),
              default=Objective.RECIPROCAL_COST.value)
@click.option("--oracle", is_flag=True, help="Solve by exhaustive enumeration")
@click.option("--out", default=None)
def allocate(options_path: str, budget: float, prices: Optional[str], objective: str,
             oracle: bool, out: Optional[str]) -> int:
    """Pick vCPUs per stage under a deadline."""
    price_list = load_price_list(prices)
    options = load_options(options_path, price_list)
    solver = brute_force_allocate if oracle else mckp_allocate
    plan = solver(options, budget, Objective(objective))
    click.echo(f"{plan.label()} {plan.total_time_s:g}s {plan.total_cost:.2f} {price_list.currency}")
    for option in plan.selected:
        name = option.stage.value if option.stage else f"stage {option.stage_index}"
        click.echo(f"  {name:<10} {option.vcpus} vCPU {option.runtime_s:g}s {option.cost:.3f}")
    click.echo(f"objective ({plan.objective.value}): {plan.objective_value:.6f}")
    _write_json(out, plan.model_dump(mode="json"))
    return ExitCode.SUCCESS


# --- runtime prediction -------------------------------------------------------

@cli.command("predict-train")
@click.option("--data", default="synthetic", help="'synthetic' or a runtime CSV")
@click.option("--seed", type=int, default=None)
@click.option("--samples", type=int, default=400, help="Synthetic dataset size")
@click.option("--noise/--no-noise", default=True, help="Multiplicative noise on synthetic runtimes")
@click.option("--out", default="model.json", show_default=True)
def predict_train(data: str, seed: Optional[int], samples: int, noise: bool, out: str) -> int:
    """Train the runtime predictor."""
    seed = settings.default_seed if seed is None else seed
    if data == "synthetic":
        dataset = generate_synthetic_dataset(seed, samples, noise=noise)
    else:
        dataset = load_dataset_csv(data)
    model = train(dataset, seed)
    summary = model.training_summary
    save_model(model, out)
    click.echo(f"trained {model.hyperparameters.n_trees} trees on {summary.n_train} samples "
               f"({summary.n_holdout} held out)")
    click.echo(f"holdout MAPE: {summary.mean_abs_pct_error_on_holdout:.4f} "
               f"({format_percentage(summary.mean_abs_pct_error_on_holdout)})")
    click.echo(f"wrote {out}")
    return ExitCode.SUCCESS


@cli.command()
@click.option("--model", "model_path", required=True)
@click.option("--cell-count", type=int, required=True)
@click.option("--stage", type=click.Choice([s.value for s in StageKind if s is not StageKind.FULL_FLOW]),
              required=True)
@click.option("--vcpus", type=int, multiple=True, help="Repeatable; defaults to the price list")
@click.option("--out", default=None)
def predict(model_path: str, cell_count: int, stage: str, vcpus: Sequence[int], out: Optional[str]) -> int:
    """Predict stage runtimes per vCPU count."""
    model = load_model(model_path)
    options = vcpus or sorted(load_price_list().entries)
    table = predict_table(model, cell_count, StageKind(stage), options)
    for v, runtime in table.items():
        click.echo(f"{stage} cells={cell_count} vcpus={v}: {runtime:.3f}s")
    _write_json(out, {"cell_count": cell_count, "stage": stage,
                      "predictions": {str(v): t for v, t in table.items()}})
    return ExitCode.SUCCESS


# --- design space exploration -------------------------------------------------

@cli.command()
@click.option("--job", "job_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--budget", type=int, default=None, help="Trial budget")
@click.option("--strategy", type=click.Choice(["random", "anneal"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--faults", default=None, help="Fault list file")
@click.option("--workers", type=int, default=1)
@click.option("--vcpus", type=int, default=None)
@click.option("--out", default=None, help="DSE report JSON")
@click.option("--trials-csv", default=None, help="Plot-ready trial table")
def dse(job_path: str, budget: Optional[int], strategy: Optional[str], seed: Optional[int],
        faults: Optional[str], workers: int, vcpus: Optional[int], out: Optional[str],
        trials_csv: Optional[str]) -> int:
    """Explore tool parameters for the best PPA product."""
    job = validate_job_spec(load_job_document(job_path))
    if isinstance(job, IncompleteReport):
        _print_incomplete(job)
        return ExitCode.INCOMPLETE
    vcpus = vcpus or settings.default_vcpus
    machine = MachineConfig(vcpus=vcpus, rate_per_hour=load_price_list().rate(vcpus))
    try:
        report = run_dse(
            default_space(job.tool),
            FlowEvaluator(get_backend(job.tool), job, machine),
            budget or settings.dse_budget,
            strategy or settings.dse_strategy,
            settings.default_seed if seed is None else seed,
            load_fault_rules(faults),
            workers=workers,
        )
    except (AllTrialsFailed, UnremediableFault) as exc:
        click.echo(f"exploration stopped: {exc}", err=True)
        return ExitCode.FAILED_TASKS
    best = report.trials[report.best_index]
    baseline = report.trials[report.baseline_index]
    click.echo(f"{report.strategy} search, seed {report.seed}, {len(report.trials)} trials")
    click.echo(f"baseline trial {baseline.index}: {baseline.objective:.6g}")
    click.echo(f"best trial {best.index}: {best.objective:.6g} params {report.best_params}")
    click.echo(f"improvement: {report.improvement_pct}")
    for record in report.remediations_applied:
        click.echo(f"  remediation at trial {record.trial_index}: {record.fault_code} -> "
                   f"{record.remedy} on {record.dim}")
    if out:
        save_report_json(report, out)
        click.echo(f"wrote {out}")
    if trials_csv:
        save_trials_csv(report.trials, trials_csv)
        click.echo(f"wrote {trials_csv}")
    return ExitCode.SUCCESS


# --- cluster simulation -------------------------------------------------------

@cli.command("simulate")
@click.option("--cluster", default=None, help="'<nodes>x<vcpus>' or a topology file")
@click.option("--tasks", "tasks_path", required=True)
@click.option("--out", default=None, help="Event log (JSON lines)")
def simulate_cmd(cluster: Optional[str], tasks_path: str, out: Optional[str]) -> int:
    """Schedule container requests on a simulated cluster."""
    nodes = resolve_topology(cluster or settings.cluster_topology)
    requests = load_requests(tasks_path)
    result = simulate(nodes, requests)
    capacity = sum(n.vcpu_capacity for n in nodes)
    click.echo(f"{len(requests)} tasks on {len(nodes)} nodes ({capacity} vCPUs)")
    for task_id, node_id in sorted(result.placements.items()):
        click.echo(f"  {task_id} -> {node_id}")
    click.echo(f"makespan: {result.makespan_s:g}s")
    if out:
        write_events_jsonl(result.events, out)
        click.echo(f"wrote {out}")
    return ExitCode.SUCCESS


# --- run history --------------------------------------------------------------

@cli.command()
@click.argument("run_id")
@click.option("--runs-dir", default=None)
def status(run_id: str, runs_dir: Optional[str]) -> int:
    """Task counts, latest event and elapsed time of a run."""
    report = Orchestrator(store=HistoryStore(runs_dir)).status(run_id)
    click.echo(f"run {report.run_id}: {report.state}, {report.total} tasks, "
               f"elapsed {report.elapsed_s:.3f}s")
    for state in TaskStatus:
        click.echo(f"  {state.value:<8} {report.counts.get(state, 0)}")
    if report.latest_event:
        event = report.latest_event
        click.echo(f"latest event #{event.seq} {event.task_id}: {event.payload.get('status')}")
    return ExitCode.SUCCESS


def _is_bare_date(value: str) -> bool:
    try:
        date.fromisoformat(value)
    except ValueError:
        return False
    return True


def _parse_date(value: Optional[str], end_of_day: bool = False) -> Optional[datetime]:
    if value is None:
        return None
    parsed = datetime.fromisoformat(value)
    if end_of_day and _is_bare_date(value):
        parsed = datetime.combine(parsed.date(), time.max)
    return parsed if parsed.tzinfo else parsed.replace(tzinfo=timezone.utc)


@cli.command()
@click.option("--design", default=None)
@click.option("--since", default=None, help="ISO date or timestamp (UTC if no offset)")
@click.option("--until", default=None, help="Inclusive; a bare date covers that whole day")
@click.option("--runs-dir", default=None)
@click.option("--out", default=None)
def history(design: Optional[str], since: Optional[str], until: Optional[str],
            runs_dir: Optional[str], out: Optional[str]) -> int:
    """List stored runs in submission order."""
    try:
        since_dt, until_dt = _parse_date(since), _parse_date(until, end_of_day=True)
    except ValueError as exc:
        raise MalformedDocument(f"bad date: {exc}") from exc
    runs = Orchestrator(store=HistoryStore(runs_dir)).history(design, since_dt, until_dt)
    for run in runs:
        click.echo(f"{run.run_id}  {run.design:<12} {run.mode.value:<8} {run.state:<9} "
                   f"tasks={run.task_count} failed={run.failed_tasks} "
                   f"submitted={run.submitted_at.isoformat()}")
    click.echo(f"{len(runs)} run(s)")
    _write_json(out, [run.model_dump(mode="json") for run in runs])
    return ExitCode.SUCCESS


# --- format reference ---------------------------------------------------------

SCHEMAS: Dict[str, Any] = {
    "price-list": PriceList,
    "allocation": AllocationPlan,
    "model": TrainedModel,
    "faults": List[FaultRule],
    "dse-report": DseReport,
    "topology": List[Node],
    "tasks": List[ContainerRequest],
    "schedule-event": ScheduleEvent,
    "run-event": EventRecord,
    "report": RunReport,
    "status": StatusReport,
    "history": List[RunSummary],
}


@cli.command()
@click.argument("name", type=click.Choice(sorted(SCHEMAS)))
@click.option("--out", default=None)
def schema(name: str, out: Optional[str]) -> int:
    """Print the JSON Schema of a file format."""
    doc = TypeAdapter(SCHEMAS[name]).json_schema()
    if out:
        _write_json(out, doc)
    else:
        click.echo(dump_json(doc), nl=False)
    return ExitCode.SUCCESS


if __name__ == "__main__":
    cli()
