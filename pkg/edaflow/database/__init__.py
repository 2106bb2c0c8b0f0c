from edaflow.database.connection import DatabaseManager, get_database
from edaflow.database.models import Base, RunIndexEntry, RunIndexQuery

__all__ = ["Base", "DatabaseManager", "RunIndexEntry", "RunIndexQuery", "get_database"]
