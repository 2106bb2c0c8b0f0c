"""
Run index models

One row per submitted run. The row id is the submission order; run files
themselves live in the run directory, the index only makes history queries
cheap.
"""

from datetime import datetime, timezone
from typing import List, Optional

from sqlalchemy import Column, DateTime, Index, Integer, String
from sqlalchemy.orm import Session, declarative_base

Base = declarative_base()

RUNNING = "running"
COMPLETED = "completed"


class RunIndexEntry(Base):
    """Index row for a run under ``runs/<run_id>/``"""
    __tablename__ = "run_index"

    # Primary key doubles as submission order
    id = Column(Integer, primary_key=True, autoincrement=True)

    run_id = Column(String(200), unique=True, nullable=False, index=True)
    design = Column(String(200), nullable=False)  # e.g. "picorv32"
    mode = Column(String(20), nullable=False)     # flow | dse | allocate

    state = Column(String(20), nullable=False, default=RUNNING)
    task_count = Column(Integer, nullable=False, default=0)
    failed_tasks = Column(Integer, nullable=False, default=0)

    # Timestamps (naive UTC)
    submitted_at = Column(DateTime, nullable=False)
    finished_at = Column(DateTime, nullable=True)

    __table_args__ = (
        Index("idx_run_design_submitted", "design", "submitted_at"),
    )

    def __repr__(self):
        return f"<RunIndexEntry(run_id='{self.run_id}', state='{self.state}')>"


def as_utc(value: Optional[datetime]) -> Optional[datetime]:
    """SQLite drops tzinfo on the way back; stored values are always UTC."""
    if value is None:
        return None
    return value if value.tzinfo else value.replace(tzinfo=timezone.utc)


def naive_utc(value: Optional[datetime]) -> Optional[datetime]:
    if value is None or value.tzinfo is None:
        return value
    return value.astimezone(timezone.utc).replace(tzinfo=None)


class RunIndexQuery:
    """Small query helper over the run index"""

    def __init__(self, session: Session):
        self.session = session

    def get(self, run_id: str) -> Optional[RunIndexEntry]:
        return self.session.query(RunIndexEntry).filter(RunIndexEntry.run_id == run_id).first()

    def add(self, run_id: str, design: str, mode: str, task_count: int,
            submitted_at: datetime) -> RunIndexEntry:
        entry = RunIndexEntry(
            run_id=run_id,
            design=design,
            mode=mode,
            state=RUNNING,
            task_count=task_count,
            submitted_at=naive_utc(submitted_at),
        )
        self.session.add(entry)
        self.session.flush()  # Get the ID
        return entry

    def complete(self, run_id: str, failed_tasks: int, finished_at: datetime) -> RunIndexEntry:
        entry = self.get(run_id)
        if entry is None:
            raise LookupError(f"run '{run_id}' is not indexed")
        if entry.state == COMPLETED:
            raise ValueError(f"run '{run_id}' is already completed")
        entry.state = COMPLETED
        entry.failed_tasks = failed_tasks
        entry.finished_at = naive_utc(finished_at)
        return entry

    def search(self, design: Optional[str] = None, since: Optional[datetime] = None,
               until: Optional[datetime] = None) -> List[RunIndexEntry]:
        """Runs in submission order; filters are conjunctive"""
        query = self.session.query(RunIndexEntry)
        if design is not None:
            query = query.filter(RunIndexEntry.design == design)
        if since is not None:
            query = query.filter(RunIndexEntry.submitted_at >= naive_utc(since))
        if until is not None:
            query = query.filter(RunIndexEntry.submitted_at <= naive_utc(until))
        return query.order_by(RunIndexEntry.id).all()
