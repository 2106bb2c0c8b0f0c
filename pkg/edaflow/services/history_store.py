"""
Append-only run history

Each run owns ``<runs_dir>/<run_id>/`` with ``jobspec.json``, ``tasks.json``,
``events.jsonl`` and, once finished, ``report.json``. Run directories are
created exclusively and a finished run is never rewritten. A SQLite index
(``<runs_dir>/index.db``) records submission order for history queries.
"""

import json
import re
import secrets
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import structlog
from pydantic import BaseModel, TypeAdapter

from edaflow.config import settings
from edaflow.database.connection import get_database
from edaflow.database.models import COMPLETED, RunIndexEntry, as_utc
from edaflow.errors import UnknownRun
from edaflow.models.run import EventRecord, PlanMode, RunSummary, Task

logger = structlog.get_logger(__name__)

JOBSPEC_FILE = "jobspec.json"
TASKS_FILE = "tasks.json"
EVENTS_FILE = "events.jsonl"
REPORT_FILE = "report.json"

_UNSAFE = re.compile(r"[^A-Za-z0-9_.-]+")
_TASKS = TypeAdapter(List[Task])


def dump_json(doc: Any) -> str:
    """Canonical JSON used for every run file."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


class StoredRun(BaseModel):
    run_id: str
    job_spec: Dict[str, Any]
    tasks: List[Task]
    events: List[EventRecord]
    report: Optional[Dict[str, Any]] = None


def _summary(entry: RunIndexEntry) -> RunSummary:
    return RunSummary(
        run_id=entry.run_id,
        design=entry.design,
        mode=PlanMode(entry.mode),
        state=entry.state,
        submitted_at=as_utc(entry.submitted_at),
        finished_at=as_utc(entry.finished_at),
        task_count=entry.task_count,
        failed_tasks=entry.failed_tasks,
    )


class HistoryStore:
    def __init__(self, runs_dir: Optional[Union[str, Path]] = None):
        self.runs_dir = Path(runs_dir or settings.runs_dir)
        self.db = get_database(self.runs_dir)

    # --- paths --------------------------------------------------------------

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def events_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / EVENTS_FILE

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / JOBSPEC_FILE).exists()

    # --- writing ------------------------------------------------------------

    @staticmethod
    def new_run_id(design: str, now: Optional[datetime] = None) -> str:
        """``<design>-<UTC timestamp>-<6 hex>``"""
        now = now or datetime.now(timezone.utc)
        name = _UNSAFE.sub("_", design).strip("_") or "run"
        return f"{name}-{now.strftime('%Y%m%dT%H%M%S%fZ')}-{secrets.token_hex(3)}"

    def create_run(self, design: str, mode: PlanMode, job_doc: Mapping[str, Any],
                   tasks: Sequence[Task], submitted_at: Optional[datetime] = None) -> str:
        """Allocate a fresh run directory and index it; returns the run id."""
        submitted_at = submitted_at or datetime.now(timezone.utc)
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        while True:
            run_id = self.new_run_id(design, submitted_at)
            try:
                self.run_dir(run_id).mkdir()
                break
            except FileExistsError:
                continue

        folder = self.run_dir(run_id)
        (folder / JOBSPEC_FILE).write_text(dump_json(dict(job_doc)), encoding="utf-8")
        self.write_tasks(run_id, tasks)
        self.events_path(run_id).touch()
        with self.db.query() as index:
            index.add(run_id, design, mode.value, len(tasks), submitted_at)
        logger.info("run_created", run_id=run_id, design=design, mode=mode.value, tasks=len(tasks))
        return run_id

    def write_tasks(self, run_id: str, tasks: Sequence[Task]) -> None:
        doc = [task.model_dump(mode="json") for task in tasks]
        (self.run_dir(run_id) / TASKS_FILE).write_text(dump_json(doc), encoding="utf-8")

    def append_event(self, run_id: str, record: EventRecord) -> None:
        with self.events_path(run_id).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.model_dump(mode="json"), sort_keys=True) + "\n")

    def finish_run(self, run_id: str, tasks: Sequence[Task], report_doc: Mapping[str, Any],
                   failed_tasks: int, finished_at: Optional[datetime] = None) -> Path:
        """
        Persist final task states and the report, then close the index entry.

        Raises:
            UnknownRun: no such run directory.
            ValueError: the run was already finished.
        """
        if not self.exists(run_id):
            raise UnknownRun(f"unknown run '{run_id}'")
        report_path = self.run_dir(run_id) / REPORT_FILE
        if report_path.exists():
            raise ValueError(f"run '{run_id}' is already finished")
        self.write_tasks(run_id, tasks)
        report_path.write_text(dump_json(dict(report_doc)), encoding="utf-8")
        with self.db.query() as index:
            index.complete(run_id, failed_tasks, finished_at or datetime.now(timezone.utc))
        logger.info("run_finished", run_id=run_id, failed_tasks=failed_tasks)
        return report_path

    # --- reading ------------------------------------------------------------

    def read_tasks(self, run_id: str) -> List[Task]:
        path = self.run_dir(run_id) / TASKS_FILE
        if not path.exists():
            raise UnknownRun(f"unknown run '{run_id}'")
        return _TASKS.validate_json(path.read_text(encoding="utf-8"))

    def read_events(self, run_id: str) -> List[EventRecord]:
        path = self.events_path(run_id)
        if not path.exists():
            raise UnknownRun(f"unknown run '{run_id}'")
        lines = path.read_text(encoding="utf-8").splitlines()
        return [EventRecord.model_validate_json(line) for line in lines if line.strip()]

    def load_run(self, run_id: str) -> StoredRun:
        if not self.exists(run_id):
            raise UnknownRun(f"unknown run '{run_id}'")
        folder = self.run_dir(run_id)
        report_path = folder / REPORT_FILE
        return StoredRun(
            run_id=run_id,
            job_spec=json.loads((folder / JOBSPEC_FILE).read_text(encoding="utf-8")),
            tasks=self.read_tasks(run_id),
            events=self.read_events(run_id),
            report=json.loads(report_path.read_text(encoding="utf-8")) if report_path.exists() else None,
        )

    def summary(self, run_id: str) -> RunSummary:
        with self.db.query() as index:
            entry = index.get(run_id)
            if entry is None:
                raise UnknownRun(f"unknown run '{run_id}'")
            return _summary(entry)

    def history(self, design: Optional[str] = None, since: Optional[datetime] = None,
                until: Optional[datetime] = None) -> List[RunSummary]:
        with self.db.query() as index:
            return [_summary(entry) for entry in index.search(design, since, until)]

    def is_completed(self, run_id: str) -> bool:
        return self.summary(run_id).state == COMPLETED
