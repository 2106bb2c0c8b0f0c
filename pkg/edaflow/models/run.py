"""
Run records: tasks, events, status and reports produced by the orchestrator.
"""

from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from edaflow.errors import InvalidTransition
from edaflow.models.flow import StageKind


class PlanMode(str, Enum):
    FLOW_ONLY = "flow"
    FLOW_WITH_DSE = "dse"
    ALLOCATE_THEN_FLOW = "allocate"


class TaskKind(str, Enum):
    RUN_STAGE = "run_stage"
    RUN_DSE = "run_dse"
    ALLOCATE = "allocate"
    PREDICT = "predict"
    TRAIN = "train"


class TaskStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"
    SKIPPED = "skipped"

    @property
    def terminal(self) -> bool:
        return self in (TaskStatus.DONE, TaskStatus.FAILED, TaskStatus.SKIPPED)


_TRANSITIONS = {
    TaskStatus.PENDING: {TaskStatus.RUNNING, TaskStatus.SKIPPED},
    TaskStatus.RUNNING: {TaskStatus.DONE, TaskStatus.FAILED},
}


class Task(BaseModel):
    """One unit of work; ``inputs`` name earlier tasks whose outputs it consumes."""

    id: str
    kind: TaskKind
    stage: Optional[StageKind] = None
    inputs: List[str] = Field(default_factory=list)
    deadline_s: Optional[float] = None
    vcpus: Optional[int] = None
    status: TaskStatus = TaskStatus.PENDING
    error: Optional[str] = None

    def transition(self, new: TaskStatus) -> None:
        if new not in _TRANSITIONS.get(self.status, set()):
            raise InvalidTransition(f"task '{self.id}': {self.status.value} -> {new.value} is not allowed")
        self.status = new


class EventRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    seq: int = Field(ge=1)
    wall_time: datetime
    task_id: str
    payload: Dict[str, Any]


class InfeasibleDetail(BaseModel):
    model_config = ConfigDict(frozen=True)

    budget_s: float
    min_total_time_s: float
    message: str


class ClusterSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    topology: List[str]
    makespan_s: float
    sequential_s: float
    tasks: int


class StatusReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    run_id: str
    state: str
    counts: Dict[TaskStatus, int]
    total: int
    latest_event: Optional[EventRecord] = None
    elapsed_s: float


class RunSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    run_id: str
    design: str
    mode: PlanMode
    state: str
    submitted_at: datetime
    finished_at: Optional[datetime] = None
    task_count: int
    failed_tasks: int = 0
