from edaflow.models.flow import (
    FLOW_ORDER,
    DesignDescriptor,
    FieldViolation,
    IncompleteReport,
    JobSpec,
    MachineConfig,
    PpaMetrics,
    Scalar,
    StageKind,
    StageOutcome,
    StageResult,
    StageScript,
    TechNode,
    ToolKind,
    expand_stages,
    format_percentage,
    ppa_improvement,
    ppa_product,
)
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

__all__ = [
    "FLOW_ORDER",
    "ClusterSummary",
    "DesignDescriptor",
    "EventRecord",
    "FieldViolation",
    "IncompleteReport",
    "InfeasibleDetail",
    "JobSpec",
    "MachineConfig",
    "PlanMode",
    "PpaMetrics",
    "RunSummary",
    "Scalar",
    "StageKind",
    "StageOutcome",
    "StageResult",
    "StageScript",
    "StatusReport",
    "Task",
    "TaskKind",
    "TaskStatus",
    "TechNode",
    "ToolKind",
    "expand_stages",
    "format_percentage",
    "ppa_improvement",
    "ppa_product",
]
