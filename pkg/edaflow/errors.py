"""
Error hierarchy for the EDA flow engine.

Every failure a caller can act on is a subclass of ``EdaFlowError`` and carries
its details as attributes, so the CLI can map them onto exit codes and the
orchestrator can store them in reports.
"""

from typing import Any, List, Optional, Sequence


class EdaFlowError(Exception):
    """Base class for all engine errors."""


# --- flow_model ---------------------------------------------------------------

class MalformedDocument(EdaFlowError, ValueError):
    """Input could not be parsed as a structured document."""


class RangeViolation(EdaFlowError, ValueError):
    """A field value lies outside its declared range."""

    def __init__(self, field: str, value: Any, allowed: str,
                 others: Optional[Sequence["RangeViolation"]] = None):
        self.field = field
        self.value = value
        self.allowed = allowed
        self.others: List["RangeViolation"] = list(others or [])
        super().__init__(f"{field}={value!r} outside allowed range {allowed}")


# --- eda_adapter --------------------------------------------------------------

class UnknownTemplate(EdaFlowError, LookupError):
    """No script template exists for the (tool, stage) pair."""


class UnboundPlaceholder(EdaFlowError, ValueError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"template placeholder '{name}' is not bound")


class BackendUnavailable(EdaFlowError, RuntimeError):
    """The tool backend cannot be reached (binary missing, etc.)."""


# --- runtime_predictor --------------------------------------------------------

class InsufficientData(EdaFlowError, ValueError):
    """Too few samples (or too little vCPU variety) to train."""


class UntrainedModel(EdaFlowError, RuntimeError):
    """Prediction requested before a model was trained or loaded."""


# --- allocator ----------------------------------------------------------------

class EmptyOptions(EdaFlowError, ValueError):
    """A stage has no configuration options."""


class Infeasible(EdaFlowError):
    """No combination of options meets the time budget."""

    def __init__(self, budget_s: float, min_total_time_s: float):
        self.budget_s = budget_s
        self.min_total_time_s = min_total_time_s
        super().__init__(
            f"budget {budget_s:g}s is infeasible; "
            f"minimum achievable total time is {min_total_time_s:g}s"
        )


class TooLarge(EdaFlowError, ValueError):
    """Brute-force enumeration would exceed the combination limit."""

    def __init__(self, combinations: int, limit: int):
        self.combinations = combinations
        self.limit = limit
        super().__init__(f"{combinations} combinations exceed the oracle limit of {limit}")


class BudgetTooLarge(EdaFlowError, ValueError):
    """Budget exceeds the DP time-axis guardrail."""


# --- dse_engine ---------------------------------------------------------------

class AllTrialsFailed(EdaFlowError):
    """No DSE trial produced metrics."""


class UnremediableFault(EdaFlowError):
    def __init__(self, fault_code: str, message: str, dim: Optional[str] = None,
                 occurrences: int = 1):
        self.fault_code = fault_code
        self.fault_message = message
        self.dim = dim
        self.occurrences = occurrences
        where = f" on '{dim}'" if dim else ""
        super().__init__(f"unremediable fault {fault_code}{where} "
                         f"(seen {occurrences}x): {message}")


# --- cluster_sim --------------------------------------------------------------

class UnschedulableRequest(EdaFlowError, ValueError):
    """A container request does not fit on any node."""


class CyclicDependencies(EdaFlowError, ValueError):
    """Task dependencies contain a cycle or reference unknown tasks."""


# --- orchestrator -------------------------------------------------------------

class DeadlineRequired(EdaFlowError, ValueError):
    """AllocateThenFlow planning needs a deadline."""


class UnknownRun(EdaFlowError, LookupError):
    """No live or stored run with the given id."""


class InvalidTransition(EdaFlowError, RuntimeError):
    """A task status change violates Pending→Running→{Done, Failed}."""
