"""
Run orchestration

This module handles:
1. Turning a validated JobSpec into a task list for one of three plan modes
2. Executing tasks in dependency waves, independent tasks concurrently
3. Recording every status transition on a gap-free event stream
4. Aggregating results into a RunReport and persisting runs for status and
   history queries
"""

import asyncio
import threading
import time
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import structlog
from pydantic import BaseModel, ConfigDict, Field

from edaflow.config import settings
from edaflow.errors import DeadlineRequired, EdaFlowError, Infeasible, UnknownRun, UntrainedModel
from edaflow.models.flow import JobSpec, MachineConfig, PpaMetrics, StageKind, StageResult
from edaflow.models.run import (
    ClusterSummary,
    EventRecord,
    InfeasibleDetail,
    PlanMode,
    RunSummary,
    StatusReport,
    Task,
    TaskKind,
    TaskStatus,
)
from edaflow.services.allocator import (
    AllocationPlan,
    Objective,
    PriceList,
    build_options,
    load_price_list,
    mckp_allocate,
)
from edaflow.services.cluster_sim import (
    ContainerRequest,
    Node,
    SimulatedClusterExecutor,
    resolve_topology,
)
from edaflow.services.dse_engine import DseReport, FaultRule, ParamSpace, default_space, run_dse
from edaflow.services.eda_adapter import FlowEvaluator, ToolBackend, get_backend, render_script, run_stage
from edaflow.services.history_store import HistoryStore
from edaflow.services.runtime_predictor import (
    TrainedModel,
    TrainingSummary,
    generate_synthetic_dataset,
    predict_table,
    train,
)
from edaflow.utils.validators import job_to_document

logger = structlog.get_logger(__name__)

WALL_TIME_FIELDS = ("started_at", "finished_at")
EventHook = Callable[[str, EventRecord], None]


class Backends(BaseModel):
    """Module handles and knobs wired into execute."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    tool_backend: Optional[ToolBackend] = None
    runtime_table: Optional[Dict[StageKind, Dict[int, float]]] = None
    model: Optional[TrainedModel] = None
    price_list: PriceList = Field(default_factory=load_price_list)
    objective: Objective = Objective.RECIPROCAL_COST
    fault_rules: List[FaultRule] = Field(default_factory=list)
    dse_space: Optional[ParamSpace] = None
    dse_budget: int = Field(default_factory=lambda: settings.dse_budget)
    dse_strategy: str = Field(default_factory=lambda: settings.dse_strategy)
    dse_workers: int = 1
    topology: List[Node] = Field(default_factory=lambda: resolve_topology(settings.cluster_topology))
    default_vcpus: int = Field(default_factory=lambda: settings.default_vcpus)
    train_samples: int = 400
    templates_dir: Optional[str] = None


class RunReport(BaseModel):
    """Aggregated outcome of one run; ``started_at``/``finished_at`` are wall-clock."""

    design: str
    mode: PlanMode
    seed: int
    deadline_s: Optional[float] = None
    tasks: List[Task]
    stage_results: List[StageResult] = Field(default_factory=list)
    final_metrics: Optional[PpaMetrics] = None
    predictions: Dict[StageKind, Dict[int, float]] = Field(default_factory=dict)
    allocation: Optional[AllocationPlan] = None
    infeasible: Optional[InfeasibleDetail] = None
    dse: Optional[DseReport] = None
    training: Optional[TrainingSummary] = None
    cluster: Optional[ClusterSummary] = None
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None

    @property
    def failed_tasks(self) -> int:
        return sum(1 for t in self.tasks if t.status is TaskStatus.FAILED)

    @property
    def complete(self) -> bool:
        return all(t.status is TaskStatus.DONE for t in self.tasks)


def report_document(report: RunReport) -> Dict[str, Any]:
    return report.model_dump(mode="json")


def mask_wall_time(doc: Dict[str, Any]) -> Dict[str, Any]:
    return {key: value for key, value in doc.items() if key not in WALL_TIME_FIELDS}


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


# --- planning -----------------------------------------------------------------

def _task_id(index: int, kind: TaskKind, stage: Optional[StageKind] = None) -> str:
    suffix = f"-{stage.value}" if stage else ""
    return f"{index:02d}-{kind.value}{suffix}"


def plan(job: JobSpec, mode: Union[PlanMode, str], deadline_s: Optional[float] = None,
         include_training: bool = False, default_vcpus: Optional[int] = None) -> List[Task]:
    """
    Build the task list for ``mode``.

    FlowOnly chains one RunStage per stage. FlowWithDse puts a RunDse in front
    of the chain. AllocateThenFlow predicts every stage, allocates under the
    deadline, then runs the chain on the allocated vCPUs.

    Raises:
        DeadlineRequired: AllocateThenFlow without a deadline.
    """
    mode = PlanMode(mode)
    tasks: List[Task] = []

    def add(kind: TaskKind, stage: Optional[StageKind] = None, inputs: Sequence[str] = (),
            **extra) -> Task:
        task = Task(id=_task_id(len(tasks), kind, stage), kind=kind, stage=stage,
                    inputs=list(inputs), **extra)
        tasks.append(task)
        return task

    head: List[str] = []
    if mode is PlanMode.FLOW_WITH_DSE:
        head = [add(TaskKind.RUN_DSE).id]
    elif mode is PlanMode.ALLOCATE_THEN_FLOW:
        if deadline_s is None:
            raise DeadlineRequired("allocate mode needs a deadline")
        if deadline_s <= 0:
            raise ValueError("deadline must be positive")
        trained = [add(TaskKind.TRAIN).id] if include_training else []
        predicts = [add(TaskKind.PREDICT, stage, trained).id for stage in job.stages]
        head = [add(TaskKind.ALLOCATE, inputs=predicts, deadline_s=deadline_s).id]

    previous: List[str] = []
    for stage in job.stages:
        vcpus = None if mode is PlanMode.ALLOCATE_THEN_FLOW else (default_vcpus or settings.default_vcpus)
        previous = [add(TaskKind.RUN_STAGE, stage, head + previous, vcpus=vcpus).id]
    return tasks


# --- event stream -------------------------------------------------------------

class EventStream:
    """
    Single serialization point for task transitions.

    A transition and its record are applied under one lock, so snapshots see
    statuses and events that agree. ``sink`` runs under the lock (append
    order equals seq order); ``on_event`` runs after it is released.
    """

    def __init__(self, sink: Optional[Callable[[EventRecord], None]] = None,
                 on_event: Optional[Callable[[EventRecord], None]] = None):
        self._lock = threading.Lock()
        self._seq = 0
        self.records: List[EventRecord] = []
        self.sink = sink
        self.on_event = on_event

    def transition(self, task: Task, status: TaskStatus,
                   payload: Optional[Dict[str, Any]] = None) -> EventRecord:
        with self._lock:
            task.transition(status)
            self._seq += 1
            record = EventRecord(seq=self._seq, wall_time=_utcnow(), task_id=task.id,
                                 payload={"status": status.value, **(payload or {})})
            self.records.append(record)
            if self.sink is not None:
                self.sink(record)
        if self.on_event is not None:
            self.on_event(record)
        return record

    def snapshot(self, tasks: Sequence[Task]) -> Tuple[Dict[TaskStatus, int], Optional[EventRecord]]:
        with self._lock:
            counts = {status: 0 for status in TaskStatus}
            for task in tasks:
                counts[task.status] += 1
            return counts, (self.records[-1] if self.records else None)


# --- execution ----------------------------------------------------------------

class _TaskResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    ok: bool
    value: Any = None
    error: Optional[str] = None
    infeasible: Optional[InfeasibleDetail] = None
    snapshot: Dict[str, Any] = Field(default_factory=dict)


class _Runner:
    """Runs single tasks; called from worker threads, reads only finished outputs."""

    def __init__(self, job: JobSpec, backends: Backends, seed: int,
                 by_id: Dict[str, Task], outputs: Dict[str, Any]):
        self.job = job
        self.backends = backends
        self.seed = seed
        self.by_id = by_id
        self.outputs = outputs
        self.tool_backend = backends.tool_backend or get_backend(job.tool)

    def _inputs(self, task: Task, kind: TaskKind) -> List[Any]:
        return [self.outputs[i] for i in task.inputs if self.by_id[i].kind is kind]

    def _machine(self, vcpus: int) -> MachineConfig:
        return MachineConfig(vcpus=vcpus, rate_per_hour=self.backends.price_list.rate(vcpus))

    def __call__(self, task: Task) -> _TaskResult:
        handler = getattr(self, f"_{task.kind.value}")
        try:
            return handler(task)
        except Infeasible as exc:
            return _TaskResult(ok=False, error=str(exc), infeasible=InfeasibleDetail(
                budget_s=exc.budget_s, min_total_time_s=exc.min_total_time_s, message=str(exc)))
        except Exception as exc:  # failures stay in-band as task statuses
            logger.warning("task_failed", task=task.id, error=str(exc), error_type=type(exc).__name__)
            return _TaskResult(ok=False, error=f"{type(exc).__name__}: {exc}")

    def _train(self, task: Task) -> _TaskResult:
        samples = generate_synthetic_dataset(self.seed, self.backends.train_samples)
        model = train(samples, self.seed)
        mape = model.training_summary.mean_abs_pct_error_on_holdout
        return _TaskResult(ok=True, value=model, snapshot={"holdout_mape": mape})

    def _predict(self, task: Task) -> _TaskResult:
        table = self.backends.runtime_table or {}
        if task.stage in table:
            predictions = dict(sorted(table[task.stage].items()))
        else:
            models = self._inputs(task, TaskKind.TRAIN) or [self.backends.model]
            if models[0] is None:
                raise UntrainedModel(f"no runtime source for stage '{task.stage.value}'")
            predictions = predict_table(models[0], self.job.design.cell_count, task.stage,
                                        self.backends.price_list.entries)
        return _TaskResult(ok=True, value=predictions,
                           snapshot={"predictions": {str(k): v for k, v in predictions.items()}})

    def _allocate(self, task: Task) -> _TaskResult:
        table = {self.by_id[i].stage: self.outputs[i] for i in task.inputs
                 if self.by_id[i].kind is TaskKind.PREDICT}
        options = build_options(table, self.backends.price_list)
        allocation = mckp_allocate(options, task.deadline_s, self.backends.objective)
        return _TaskResult(ok=True, value=allocation, snapshot={
            "choices": list(allocation.choices),
            "total_time_s": allocation.total_time_s,
            "total_cost": allocation.total_cost,
        })

    def _run_dse(self, task: Task) -> _TaskResult:
        evaluator = FlowEvaluator(self.tool_backend, self.job, self._machine(self.backends.default_vcpus),
                                  self.backends.templates_dir)
        report = run_dse(
            self.backends.dse_space or default_space(self.job.tool),
            evaluator,
            self.backends.dse_budget,
            self.backends.dse_strategy,
            self.seed,
            self.backends.fault_rules,
            workers=self.backends.dse_workers,
        )
        return _TaskResult(ok=True, value=report, snapshot={
            "best_objective": report.trials[report.best_index].objective,
            "improvement": report.improvement,
        })

    def _run_stage(self, task: Task) -> _TaskResult:
        dse = self._inputs(task, TaskKind.RUN_DSE)
        params = dse[0].best_params if dse else None
        vcpus = task.vcpus or self.backends.default_vcpus
        script = render_script(self.tool_backend.tool, task.stage, self.job, params,
                               self.backends.templates_dir)
        result = run_stage(self.tool_backend, script, self._machine(vcpus))
        if not result.ok:
            return _TaskResult(ok=False, value=result, error=f"{result.fault_code}: {result.message}")
        return _TaskResult(ok=True, value=result, snapshot={
            "vcpus": vcpus,
            "runtime_s": result.runtime_s,
            "ppa_product": result.metrics.product,
        })


def _skip_dependents(tasks: Sequence[Task], by_id: Dict[str, Task], stream: EventStream) -> None:
    changed = True
    while changed:
        changed = False
        for task in tasks:
            if task.status is not TaskStatus.PENDING:
                continue
            blocker = next((i for i in task.inputs
                            if by_id[i].status in (TaskStatus.FAILED, TaskStatus.SKIPPED)), None)
            if blocker is not None:
                task.error = f"skipped: input '{blocker}' did not complete"
                stream.transition(task, TaskStatus.SKIPPED, {"blocked_by": blocker})
                changed = True


def _cluster_summary(tasks: Sequence[Task], outputs: Dict[str, Any],
                     topology: Sequence[Node]) -> Optional[ClusterSummary]:
    stages = [t for t in tasks if t.kind is TaskKind.RUN_STAGE and t.status is TaskStatus.DONE]
    if not stages:
        return None
    included = {t.id for t in stages}
    executor = SimulatedClusterExecutor(topology)
    for task in stages:
        executor.submit(ContainerRequest(
            task_id=task.id,
            vcpus=task.vcpus,
            duration_s=outputs[task.id].runtime_s,
            dependencies=tuple(i for i in task.inputs if i in included),
        ))
    try:
        result = executor.result()
    except EdaFlowError as exc:
        logger.warning("cluster_summary_unavailable", error=str(exc))
        return None
    return ClusterSummary(
        topology=[f"{n.id}:{n.vcpu_capacity}" for n in topology],
        makespan_s=result.makespan_s,
        sequential_s=sum(outputs[t.id].runtime_s for t in stages),
        tasks=len(stages),
    )


async def execute(tasks: List[Task], job: JobSpec, backends: Backends, *,
                  mode: Union[PlanMode, str] = PlanMode.FLOW_ONLY, seed: int = 0,
                  deadline_s: Optional[float] = None,
                  stream: Optional[EventStream] = None) -> RunReport:
    """
    Execute a planned task list.

    Tasks whose inputs are all Done run together as one wave, each on a worker
    thread; results are recorded in task-list order. Dependents of a failed
    or skipped task become Skipped. Failures never raise; they show up as
    task statuses in the report.
    """
    stream = stream or EventStream()
    started_at = _utcnow()
    by_id = {task.id: task for task in tasks}
    outputs: Dict[str, Any] = {}
    runner = _Runner(job, backends, seed, by_id, outputs)
    infeasible: Optional[InfeasibleDetail] = None
    log = logger.bind(design=job.design.name, mode=PlanMode(mode).value)

    while True:
        _skip_dependents(tasks, by_id, stream)
        ready = [t for t in tasks if t.status is TaskStatus.PENDING
                 and all(by_id[i].status is TaskStatus.DONE for i in t.inputs)]
        if not ready:
            break
        for task in ready:
            stream.transition(task, TaskStatus.RUNNING)
        results = await asyncio.gather(*(asyncio.to_thread(runner, task) for task in ready))
        for task, result in zip(ready, results):
            if result.value is not None:
                outputs[task.id] = result.value
            if result.ok:
                stream.transition(task, TaskStatus.DONE, result.snapshot)
                if task.kind is TaskKind.ALLOCATE:
                    _annotate_vcpus(tasks, result.value)
            else:
                task.error = result.error
                infeasible = result.infeasible or infeasible
                stream.transition(task, TaskStatus.FAILED, {"error": result.error})
        log.debug("wave_finished", tasks=[t.id for t in ready])

    stage_tasks = [t for t in tasks if t.kind is TaskKind.RUN_STAGE]
    stage_results = [outputs[t.id] for t in stage_tasks if t.id in outputs]
    final_metrics = None
    if stage_tasks and all(t.status is TaskStatus.DONE for t in stage_tasks):
        final_metrics = stage_results[-1].metrics

    def first(kind: TaskKind) -> Any:
        return next((outputs[t.id] for t in tasks if t.kind is kind and t.id in outputs), None)

    training = first(TaskKind.TRAIN)
    report = RunReport(
        design=job.design.name,
        mode=PlanMode(mode),
        seed=seed,
        deadline_s=deadline_s,
        tasks=[t.model_copy() for t in tasks],
        stage_results=stage_results,
        final_metrics=final_metrics,
        predictions={t.stage: outputs[t.id] for t in tasks
                     if t.kind is TaskKind.PREDICT and t.id in outputs},
        allocation=first(TaskKind.ALLOCATE),
        infeasible=infeasible,
        dse=first(TaskKind.RUN_DSE),
        training=training.training_summary if training else None,
        cluster=_cluster_summary(tasks, outputs, backends.topology),
        started_at=started_at,
        finished_at=_utcnow(),
    )
    log.info("run_executed", tasks=len(tasks), failed=report.failed_tasks, complete=report.complete)
    return report


def _annotate_vcpus(tasks: Sequence[Task], allocation: AllocationPlan) -> None:
    chosen = {option.stage: option.vcpus for option in allocation.selected}
    for task in tasks:
        if task.kind is TaskKind.RUN_STAGE and task.stage in chosen:
            task.vcpus = chosen[task.stage]


# --- orchestrator -------------------------------------------------------------

class _LiveRun:
    def __init__(self, tasks: List[Task], stream: EventStream):
        self.tasks = tasks
        self.stream = stream
        self.started = time.monotonic()


class Orchestrator:
    """
    Plans, executes and records runs.

    ``on_event(run_id, record)`` is called after every transition, outside the
    stream lock, so it may query ``status`` for a consistent snapshot.
    """

    def __init__(self, backends: Optional[Backends] = None, store: Optional[HistoryStore] = None,
                 on_event: Optional[EventHook] = None):
        self.backends = backends or Backends()
        self.store = store or HistoryStore()
        self.on_event = on_event
        self._live: Dict[str, _LiveRun] = {}

    plan = staticmethod(plan)

    async def submit(self, job: JobSpec, mode: Union[PlanMode, str] = PlanMode.FLOW_ONLY,
                     deadline_s: Optional[float] = None, seed: Optional[int] = None,
                     include_training: bool = False) -> Tuple[str, RunReport]:
        """Plan, persist, execute and finalize one run; returns (run_id, report)."""
        mode = PlanMode(mode)
        seed = settings.default_seed if seed is None else seed
        tasks = plan(job, mode, deadline_s, include_training, self.backends.default_vcpus)
        run_id = self.store.create_run(job.design.name, mode, job_to_document(job), tasks)

        def sink(record: EventRecord) -> None:
            self.store.append_event(run_id, record)

        hook = None
        if self.on_event is not None:
            hook = lambda record: self.on_event(run_id, record)  # noqa: E731
        stream = EventStream(sink=sink, on_event=hook)
        self._live[run_id] = _LiveRun(tasks, stream)
        try:
            report = await execute(tasks, job, self.backends, mode=mode, seed=seed,
                                   deadline_s=deadline_s, stream=stream)
            self.store.finish_run(run_id, report.tasks, report_document(report),
                                  report.failed_tasks, report.finished_at)
        finally:
            self._live.pop(run_id, None)
        return run_id, report

    def run(self, job: JobSpec, mode: Union[PlanMode, str] = PlanMode.FLOW_ONLY,
            deadline_s: Optional[float] = None, seed: Optional[int] = None,
            include_training: bool = False) -> Tuple[str, RunReport]:
        """Blocking wrapper around ``submit``."""
        return asyncio.run(self.submit(job, mode, deadline_s, seed, include_training))

    def status(self, run_id: str) -> StatusReport:
        """
        Task counts, latest event and elapsed time for a live or stored run.

        Raises:
            UnknownRun: no such run.
        """
        live = self._live.get(run_id)
        if live is not None:
            counts, latest = live.stream.snapshot(live.tasks)
            return StatusReport(run_id=run_id, state="running", counts=counts, total=len(live.tasks),
                                latest_event=latest, elapsed_s=time.monotonic() - live.started)

        if not self.store.exists(run_id):
            raise UnknownRun(f"unknown run '{run_id}'")
        summary = self.store.summary(run_id)
        tasks = self.store.read_tasks(run_id)
        events = self.store.read_events(run_id)
        counts = {status: 0 for status in TaskStatus}
        for task in tasks:
            counts[task.status] += 1
        end = summary.finished_at or _utcnow()
        return StatusReport(
            run_id=run_id,
            state=summary.state,
            counts=counts,
            total=len(tasks),
            latest_event=events[-1] if events else None,
            elapsed_s=max(0.0, (end - summary.submitted_at).total_seconds()),
        )

    def history(self, design: Optional[str] = None, since: Optional[datetime] = None,
                until: Optional[datetime] = None) -> List[RunSummary]:
        return self.store.history(design, since, until)
