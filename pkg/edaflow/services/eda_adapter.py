"""
EDA tool adapter

This module handles:
1. Rendering stage scripts from per-tool templates with parameter injection
2. Executing stages through a pluggable tool backend
3. A deterministic mock backend driven by a closed-form PPA/runtime model
4. Evaluating a whole flow for a parameter set (used by design space exploration)
"""

import json
import os
import shutil
import subprocess
import tempfile
import time
from abc import ABC, abstractmethod
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import structlog
from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound, meta
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from edaflow.config import settings
from edaflow.errors import BackendUnavailable, UnboundPlaceholder, UnknownTemplate
from edaflow.models.flow import (
    JobSpec,
    MachineConfig,
    PpaMetrics,
    Scalar,
    StageKind,
    StageOutcome,
    StageResult,
    StageScript,
    ToolKind,
)

logger = structlog.get_logger(__name__)

# Optional parameters the mock model understands, with their template defaults
# coming from templates/mock/defaults.json.
UTILIZATION = "core_utilization"
DENSITY = "placement_density"
CLOCK = "clock_period_ns"
TIMEOUT = "timeout_s"


# --- mock model ---------------------------------------------------------------

class PpaCoefficients(BaseModel):
    model_config = ConfigDict(frozen=True)

    a0: float = Field(gt=0)
    p0: float = Field(gt=0)
    w: float = Field(ge=0)
    v: float = Field(ge=0)
    d_star: float


class RuntimeCoefficients(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: float = Field(gt=0)
    e: float = Field(ge=0)


class MockModel(BaseModel):
    """
    Closed-form stand-in for a real backend.

    PPA for cell count n, utilization u, density d and clock period T:
        area = n*a0/u
        power = p0*n*(0.6 + 0.4*d)
        cp_delay = T*(0.7 + w*(d - d_star)^2 + v/u)
    Runtime for c vCPUs: k*n/c^e up to the knee, then flattening as
    runtime(knee)*(knee/c)^saturation_exponent.
    """

    model_config = ConfigDict(frozen=True)

    format_version: int = 1
    description: str = ""
    ppa: PpaCoefficients
    legal_ranges: Dict[str, Tuple[float, float]]
    runtime: Dict[StageKind, RuntimeCoefficients]
    knee_vcpus: int = Field(default=4, ge=1)
    saturation_exponent: float = Field(default=0.1, ge=0)
    precision: int = 6

    def stage_runtime(self, stage: StageKind, cell_count: int, vcpus: int) -> float:
        if stage not in self.runtime:
            raise ValueError(f"mock model has no runtime coefficients for stage '{stage.value}'")
        coeff = self.runtime[stage]
        base = coeff.k * cell_count
        if vcpus <= self.knee_vcpus:
            value = base / vcpus ** coeff.e
        else:
            at_knee = base / self.knee_vcpus ** coeff.e
            value = at_knee * (self.knee_vcpus / vcpus) ** self.saturation_exponent
        return round(value, self.precision)

    def stage_ppa(self, cell_count: int, utilization: float, density: float,
                  clock_period_ns: float) -> PpaMetrics:
        c = self.ppa
        area = cell_count * c.a0 / utilization
        power = c.p0 * cell_count * (0.6 + 0.4 * density)
        delay = clock_period_ns * (0.7 + c.w * (density - c.d_star) ** 2 + c.v / utilization)
        return PpaMetrics(
            cp_delay_ns=round(delay, self.precision),
            power_mw=round(power, self.precision),
            area_um2=round(area, self.precision),
        )

    def range_fault(self, params: Mapping[str, Scalar]) -> Optional[str]:
        """Message for the first parameter outside its legal range, if any."""
        for name, (lo, hi) in self.legal_ranges.items():
            value = params.get(name)
            if value is None:
                continue
            if not lo <= float(value) <= hi:
                return f"PARAM_RANGE: {name}={value} outside [{lo}, {hi}]"
        return None


@lru_cache(maxsize=8)
def load_mock_model(path: Optional[Union[str, Path]] = None) -> MockModel:
    source = Path(path) if path else settings.mock_model_path
    return MockModel.model_validate_json(source.read_text(encoding="utf-8"))


# --- script rendering ---------------------------------------------------------

@lru_cache(maxsize=8)
def _environment(templates_dir: str) -> Environment:
    return Environment(
        loader=FileSystemLoader(templates_dir),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
        autoescape=False,
    )


@lru_cache(maxsize=8)
def template_defaults(tool: ToolKind, templates_dir: Optional[str] = None) -> Dict[str, Scalar]:
    root = Path(templates_dir) if templates_dir else settings.templates_dir
    defaults_file = root / tool.value / "defaults.json"
    if not defaults_file.exists():
        return {}
    return json.loads(defaults_file.read_text(encoding="utf-8"))


def essential_bindings(job: JobSpec, stage: StageKind) -> Dict[str, Scalar]:
    """Bindings derived from essential JobSpec fields; empty paths stay unbound."""
    bindings: Dict[str, Scalar] = {
        "design_name": job.design.name,
        "cell_count": job.design.cell_count,
        "rtl_path": job.design.rtl_path,
        "tech_name": job.tech.name,
        "constraint_path": job.constraint_path,
        "stage": stage.value,
    }
    if job.design.netlist_path:
        bindings["netlist_path"] = job.design.netlist_path
    if job.tech.lib_paths:
        bindings["lib_paths"] = " ".join(job.tech.lib_paths)
    if job.tech.lef_paths:
        bindings["lef_paths"] = " ".join(job.tech.lef_paths)
    return bindings


def render_script(
    tool: ToolKind,
    stage: StageKind,
    job: JobSpec,
    params: Optional[Mapping[str, Scalar]] = None,
    templates_dir: Optional[Union[str, Path]] = None,
) -> StageScript:
    """
    Render the stage script for a tool.

    Binding precedence, lowest first: template defaults, optional JobSpec
    fields, then ``params`` (DSE trial values). Essential fields are bound
    under fixed names and cannot be overridden.

    Raises:
        UnknownTemplate: no template for (tool, stage).
        UnboundPlaceholder: a placeholder has no binding.
    """
    root = str(templates_dir or settings.templates_dir)
    env = _environment(root)
    name = f"{tool.value}/{stage.value}.tcl"
    try:
        source, _, _ = env.loader.get_source(env, name)
    except TemplateNotFound as exc:
        raise UnknownTemplate(f"no template for tool '{tool.value}' stage '{stage.value}'") from exc

    context = essential_bindings(job, stage)
    tunables: Dict[str, Scalar] = dict(template_defaults(tool, root))
    tunables.update(job.optional_params())
    tunables.update(params or {})

    placeholders = meta.find_undeclared_variables(env.parse(source))
    unbound = sorted(placeholders - set(context) - set(tunables))
    if unbound:
        raise UnboundPlaceholder(unbound[0])

    injected = {key: tunables[key] for key in sorted(placeholders) if key in tunables and key not in context}
    text = env.get_template(name).render(**{**tunables, **context})
    return StageScript(tool=tool, stage=stage, text=text, injected_params=injected, context=context)


# --- backends -----------------------------------------------------------------

class ToolBackend(ABC):
    """Executes rendered stage scripts. Implementations must tolerate concurrent calls."""

    tool: ToolKind

    @abstractmethod
    def run_stage(self, script: StageScript, machine: MachineConfig) -> StageResult:
        ...


def _failure(stage: StageKind, code: str, message: str, runtime_s: float = 0.0, log: str = "") -> StageResult:
    return StageResult(
        stage=stage,
        runtime_s=runtime_s,
        log=log or message,
        outcome=StageOutcome.FAILURE,
        fault_code=code,
        message=message,
    )


class MockBackend(ToolBackend):
    """
    Stateless backend whose metrics and runtimes are pure functions of
    (cell_count, stage, params, vcpus).
    """

    tool = ToolKind.MOCK

    def __init__(self, model: Optional[MockModel] = None,
                 forced_faults: Optional[Mapping[StageKind, Tuple[str, str]]] = None):
        self.model = model or load_mock_model()
        self.forced_faults = dict(forced_faults or {})

    def run_stage(self, script: StageScript, machine: MachineConfig) -> StageResult:
        if script.tool is not ToolKind.MOCK:
            raise ValueError(f"mock backend cannot run a '{script.tool.value}' script")
        stage = script.stage
        params = script.injected_params

        if stage in self.forced_faults:
            code, message = self.forced_faults[stage]
            return _failure(stage, code, message)

        range_message = self.model.range_fault(params)
        if range_message:
            return _failure(stage, "PARAM_RANGE", range_message)

        cell_count = int(script.context["cell_count"])
        runtime = self.model.stage_runtime(stage, cell_count, machine.vcpus)
        timeout = float(params.get(TIMEOUT, 0) or 0)
        if timeout > 0 and runtime > timeout:
            return _failure(
                stage, "TIMEOUT",
                f"TIMEOUT: {stage.value} needs {runtime}s, limit {timeout}s",
                runtime_s=timeout,
            )

        metrics = self.model.stage_ppa(
            cell_count,
            float(params[UTILIZATION]),
            float(params[DENSITY]),
            float(params[CLOCK]),
        )
        log = (
            f"[mock] {stage.value} cells={cell_count} vcpus={machine.vcpus} "
            f"runtime={runtime}s cp_delay={metrics.cp_delay_ns}ns "
            f"power={metrics.power_mw}mW area={metrics.area_um2}um2"
        )
        return StageResult(stage=stage, metrics=metrics, runtime_s=runtime, log=log)


class ExternalToolBackend(ToolBackend):
    """
    Runs a real tool binary on a rendered script.

    The script's epilogue writes ``metrics.json``; tool logs are kept verbatim
    and never parsed.
    """

    COMMANDS = {
        ToolKind.OPENROAD: ("openroad", ["-exit"]),
        ToolKind.IEDA: ("iEDA", ["-script"]),
    }

    def __init__(self, tool: ToolKind, binary: Optional[str] = None,
                 workdir: Optional[Union[str, Path]] = None,
                 templates_dir: Optional[Union[str, Path]] = None,
                 timeout_s: Optional[float] = None):
        if tool not in self.COMMANDS:
            raise ValueError(f"no external backend for tool '{tool.value}'")
        self.tool = tool
        default_binary, self.flags = self.COMMANDS[tool]
        self.binary = binary or default_binary
        self.workdir = Path(workdir) if workdir else None
        self.templates_dir = Path(templates_dir or settings.templates_dir)
        self.timeout_s = timeout_s

    def run_stage(self, script: StageScript, machine: MachineConfig) -> StageResult:
        executable = shutil.which(self.binary)
        if executable is None:
            raise BackendUnavailable(f"'{self.binary}' not found on PATH")

        workdir = self.workdir or Path(tempfile.mkdtemp(prefix=f"edaflow-{script.stage.value}-"))
        workdir.mkdir(parents=True, exist_ok=True)
        script_path = workdir / f"{script.stage.value}.tcl"
        script_path.write_text(script.text, encoding="utf-8")
        shutil.copy(self.templates_dir / self.tool.value / "metrics_epilogue.tcl", workdir)
        metrics_path = workdir / "metrics.json"
        metrics_path.unlink(missing_ok=True)

        env = {**os.environ, "OMP_NUM_THREADS": str(machine.vcpus)}
        started = time.monotonic()
        try:
            proc = subprocess.run(
                [executable, *self.flags, str(script_path)],
                cwd=workdir, env=env, capture_output=True, text=True, timeout=self.timeout_s,
            )
        except subprocess.TimeoutExpired as exc:
            return _failure(script.stage, "TIMEOUT", f"TIMEOUT: exceeded {self.timeout_s}s",
                            runtime_s=time.monotonic() - started, log=str(exc.stdout or ""))
        runtime = time.monotonic() - started
        log = proc.stdout + proc.stderr

        if proc.returncode != 0:
            tail = "\n".join(log.strip().splitlines()[-5:])
            return _failure(script.stage, "TOOL_CRASH",
                            f"TOOL_CRASH: exit code {proc.returncode}: {tail}", runtime, log)
        if not metrics_path.exists():
            return _failure(script.stage, "METRICS_MISSING",
                            "METRICS_MISSING: metrics.json was not written", runtime, log)
        try:
            metrics = PpaMetrics.model_validate_json(metrics_path.read_text(encoding="utf-8"))
        except ValidationError as exc:
            return _failure(script.stage, "METRICS_MALFORMED",
                            f"METRICS_MALFORMED: {exc.errors()[0]['msg']}", runtime, log)
        return StageResult(stage=script.stage, metrics=metrics, runtime_s=runtime, log=log)


def get_backend(tool: ToolKind, **kwargs) -> ToolBackend:
    if tool is ToolKind.MOCK:
        return MockBackend(**kwargs)
    return ExternalToolBackend(tool, **kwargs)


def run_stage(backend: ToolBackend, script: StageScript, machine: MachineConfig) -> StageResult:
    result = backend.run_stage(script, machine)
    logger.debug(
        "stage_finished",
        stage=script.stage.value,
        tool=script.tool.value,
        vcpus=machine.vcpus,
        outcome=result.outcome.value,
        runtime_s=result.runtime_s,
    )
    return result


# --- flow evaluation ----------------------------------------------------------

class FlowEvaluation(BaseModel):
    """Outcome of running every stage of a job for one parameter set."""

    model_config = ConfigDict(frozen=True)

    metrics: Optional[PpaMetrics] = None
    stage_results: List[StageResult] = Field(default_factory=list)
    fault_code: Optional[str] = None
    message: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.metrics is not None


class FlowEvaluator:
    """Callable that runs a job's stages in order for a parameter set."""

    def __init__(self, backend: ToolBackend, job: JobSpec, machine: MachineConfig,
                 templates_dir: Optional[Union[str, Path]] = None):
        self.backend = backend
        self.job = job
        self.machine = machine
        self.templates_dir = templates_dir

    def __call__(self, params: Mapping[str, Scalar]) -> FlowEvaluation:
        results: List[StageResult] = []
        for stage in self.job.stages:
            script = render_script(self.backend.tool, stage, self.job, params, self.templates_dir)
            result = run_stage(self.backend, script, self.machine)
            results.append(result)
            if not result.ok:
                return FlowEvaluation(stage_results=results, fault_code=result.fault_code,
                                      message=result.message)
        return FlowEvaluation(metrics=results[-1].metrics, stage_results=results)
