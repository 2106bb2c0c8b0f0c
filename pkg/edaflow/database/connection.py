"""
Run index connection management

This module handles:
1. Opening the SQLite run index that sits next to the run directories
2. Creating the schema on first use
3. Handing out sessions that commit on success and roll back on error
"""

from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Union

import structlog
from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker

from edaflow.config import settings
from edaflow.database.models import Base, RunIndexQuery

logger = structlog.get_logger(__name__)

INDEX_FILENAME = "index.db"


class DatabaseManager:
    """
    Manages the run index database for one runs directory.

    This class is responsible for:
    - Creating the engine and session factory
    - Creating tables on first use
    - Providing transactional sessions
    """

    def __init__(self, runs_dir: Union[str, Path]):
        self.path = Path(runs_dir) / INDEX_FILENAME
        self.engine: Engine = None
        self.session_maker = None
        self._initialized = False

    def initialize(self) -> None:
        """Create the engine and tables. Safe to call repeatedly."""
        if self._initialized:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.engine = create_engine(
            f"sqlite:///{self.path}",
            echo=settings.debug,  # Show SQL queries in debug mode
            connect_args={"check_same_thread": False},
        )
        self.session_maker = sessionmaker(self.engine, expire_on_commit=False)
        Base.metadata.create_all(self.engine)
        self._initialized = True
        logger.debug("run_index_ready", path=str(self.path))

    @contextmanager
    def get_session(self) -> Iterator[Session]:
        """
        Transactional session.

        Example:
            with manager.get_session() as session:
                RunIndexQuery(session).search(design="picorv32")
        """
        self.initialize()
        session = self.session_maker()
        try:
            yield session
            session.commit()
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()

    @contextmanager
    def query(self) -> Iterator[RunIndexQuery]:
        with self.get_session() as session:
            yield RunIndexQuery(session)

    def close(self) -> None:
        if self.engine is not None:
            self.engine.dispose()
        self._initialized = False


_managers: Dict[Path, DatabaseManager] = {}


def get_database(runs_dir: Union[str, Path]) -> DatabaseManager:
    """One manager per runs directory for the life of the process."""
    key = Path(runs_dir).resolve()
    if key not in _managers:
        _managers[key] = DatabaseManager(key)
    return _managers[key]
