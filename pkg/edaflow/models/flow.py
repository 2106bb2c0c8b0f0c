"""
Domain vocabulary shared by every service

Designs, stages, technologies, job specifications, PPA metrics, machine
configurations and the script/result records exchanged with tool backends.
All models are immutable after construction.
"""

from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

Scalar = Union[bool, int, float, str]


class StageKind(str, Enum):
    """Backend flow stages, declared in flow order."""

    FLOORPLAN = "floorplan"
    PLACEMENT = "placement"
    CTS = "cts"
    ROUTING = "routing"
    STA = "sta"
    FULL_FLOW = "full_flow"

    @property
    def order(self) -> int:
        return FLOW_ORDER.index(self) if self in FLOW_ORDER else len(FLOW_ORDER)


# FullFlow expands to this sequence; it is also the total stage order.
FLOW_ORDER: Tuple[StageKind, ...] = (
    StageKind.FLOORPLAN,
    StageKind.PLACEMENT,
    StageKind.CTS,
    StageKind.ROUTING,
    StageKind.STA,
)


class ToolKind(str, Enum):
    IEDA = "ieda"
    OPENROAD = "openroad"
    MOCK = "mock"


class DesignDescriptor(BaseModel):
    """Design under implementation; cell_count is the size feature."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    cell_count: int = Field(ge=1)
    rtl_path: str
    netlist_path: Optional[str] = None


class TechNode(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    lib_paths: Tuple[str, ...] = ()
    lef_paths: Tuple[str, ...] = ()


class JobSpec(BaseModel):
    """
    A complete backend request.

    Essential fields are required; optional fields tune quality and are
    range-checked when present.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    # Essential
    design: DesignDescriptor
    stages: Tuple[StageKind, ...] = Field(min_length=1)
    tech: TechNode
    constraint_path: str = Field(min_length=1)
    tool: ToolKind

    # Optional
    clock_period_ns: Optional[float] = Field(default=None, gt=0)
    core_utilization: Optional[float] = Field(default=None, gt=0, le=1)
    placement_density: Optional[float] = Field(default=None, gt=0, le=1)
    extra_params: Dict[str, Scalar] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_stage_order(self) -> "JobSpec":
        if StageKind.FULL_FLOW in self.stages:
            raise ValueError("stages must be expanded before building a JobSpec")
        orders = [stage.order for stage in self.stages]
        if orders != sorted(set(orders)):
            raise ValueError("stages must follow the flow order without repeats")
        return self

    def optional_params(self) -> Dict[str, Scalar]:
        """Optional fields that are set, as template bindings."""
        params: Dict[str, Scalar] = {}
        for name in ("clock_period_ns", "core_utilization", "placement_density"):
            value = getattr(self, name)
            if value is not None:
                params[name] = value
        params.update(self.extra_params)
        return params


class PpaMetrics(BaseModel):
    """Critical-path delay (ns), power (mW) and area (um^2)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    cp_delay_ns: float = Field(gt=0)
    power_mw: float = Field(gt=0)
    area_um2: float = Field(gt=0)

    @property
    def product(self) -> float:
        return ppa_product(self)


class MachineConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    vcpus: int = Field(ge=1)
    rate_per_hour: float = Field(gt=0)


class FieldViolation(BaseModel):
    model_config = ConfigDict(frozen=True)

    field: str
    value: Optional[Scalar] = None
    allowed: str


class IncompleteReport(BaseModel):
    """Why a job document is not executable yet."""

    model_config = ConfigDict(frozen=True)

    missing: List[str]
    violations: List[FieldViolation] = Field(default_factory=list)

    @property
    def complete(self) -> bool:
        return False


class StageScript(BaseModel):
    """A rendered, fully bound stage script."""

    model_config = ConfigDict(frozen=True)

    tool: ToolKind
    stage: StageKind
    text: str
    injected_params: Dict[str, Scalar]
    # Bindings that come from essential JobSpec fields (design, tech, paths).
    context: Dict[str, Scalar] = Field(default_factory=dict)


class StageOutcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


class StageResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage: StageKind
    metrics: Optional[PpaMetrics] = None
    runtime_s: float = Field(ge=0)
    log: str = ""
    outcome: StageOutcome = StageOutcome.SUCCESS
    fault_code: Optional[str] = None
    message: Optional[str] = None

    @model_validator(mode="after")
    def check_outcome(self) -> "StageResult":
        if self.outcome is StageOutcome.SUCCESS and self.metrics is None:
            raise ValueError("a successful stage must carry metrics")
        if self.outcome is StageOutcome.FAILURE and not self.fault_code:
            raise ValueError("a failed stage must carry a fault code")
        return self

    @property
    def ok(self) -> bool:
        return self.outcome is StageOutcome.SUCCESS


def expand_stages(stages: Sequence[StageKind]) -> Tuple[StageKind, ...]:
    """Replace FullFlow with the ordered five-stage sequence."""
    expanded: List[StageKind] = []
    for stage in stages:
        if stage is StageKind.FULL_FLOW:
            expanded.extend(FLOW_ORDER)
        else:
            expanded.append(stage)
    return tuple(expanded)


def ppa_product(m: PpaMetrics) -> float:
    return m.cp_delay_ns * m.power_mw * m.area_um2


def ppa_improvement(before: PpaMetrics, after: PpaMetrics) -> float:
    """Fractional reduction of the PPA product; positive means better."""
    return 1.0 - ppa_product(after) / ppa_product(before)


def format_percentage(fraction: float) -> str:
    """Render a fraction as a percentage rounded half away from zero to 2 d.p."""
    value = Decimal(repr(fraction * 100.0)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return f"{value}%"
