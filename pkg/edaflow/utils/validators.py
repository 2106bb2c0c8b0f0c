"""
Job specification validation

Turns a raw job document (JSON text or an already-parsed mapping) into a
``JobSpec``. Information is split into essential fields, which must all be
present for the job to run, and optional fields, which are range-checked.
Essential fields are never defaulted.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from pydantic import ValidationError

from edaflow.errors import MalformedDocument, RangeViolation
from edaflow.models.flow import (
    DesignDescriptor,
    FieldViolation,
    IncompleteReport,
    JobSpec,
    StageKind,
    TechNode,
    ToolKind,
    expand_stages,
)

SCHEMA_VERSION = 1

TOP_LEVEL_KEYS = {"schema_version", "design", "stages", "tech", "constraint_path", "tool", "options"}
OPTION_KEYS = {"clock_period_ns", "core_utilization", "placement_density", "extra_params"}
DESIGN_KEYS = {"name", "cell_count", "rtl_path", "netlist_path"}
TECH_KEYS = {"name", "lib_paths", "lef_paths"}

# Essential fields in the order they are reported.
ESSENTIAL_FIELDS = (
    "design.name",
    "design.cell_count",
    "design.rtl_path",
    "stages",
    "tech.name",
    "tech.lib_paths",
    "constraint_path",
    "tool",
)

UNIT_INTERVAL = "(0, 1]"
POSITIVE = "(0, inf)"


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_blank(value: Any) -> bool:
    return value is None or (isinstance(value, str) and not value.strip())


def _parse(raw: Union[str, bytes, Mapping[str, Any]]) -> Mapping[str, Any]:
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedDocument(f"job document is not valid JSON: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise MalformedDocument("job document must be a JSON object")
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise MalformedDocument(f"unknown top-level keys: {sorted(unknown)}")
    return raw


def _section(doc: Mapping[str, Any], key: str, allowed: Optional[set] = None) -> Optional[Mapping[str, Any]]:
    value = doc.get(key)
    if value is None:
        return None
    if not isinstance(value, Mapping):
        raise MalformedDocument(f"'{key}' must be an object")
    unknown = set(value) - allowed if allowed is not None else set()
    if unknown:
        raise MalformedDocument(f"unknown keys in '{key}': {sorted(unknown)}")
    return value


def _check_string(value: Any, name: str) -> None:
    if value is not None and not isinstance(value, str):
        raise MalformedDocument(f"'{name}' must be a string")


def _path_list(section: Mapping[str, Any], key: str) -> Tuple[str, ...]:
    value = section.get(key) or []
    if isinstance(value, str) or not all(isinstance(item, str) for item in value):
        raise MalformedDocument(f"'tech.{key}' must be a list of paths")
    return tuple(value)


def _parse_stages(value: Any) -> Tuple[StageKind, ...]:
    if isinstance(value, str) or not isinstance(value, list):
        raise MalformedDocument("'stages' must be a list of stage names")
    try:
        return expand_stages([StageKind(str(item).lower()) for item in value])
    except ValueError as exc:
        raise MalformedDocument(f"unknown stage in {value!r}") from exc


def validate_job_spec(raw: Union[str, bytes, Mapping[str, Any]]) -> Union[JobSpec, IncompleteReport]:
    """
    Validate a raw job document.

    Args:
        raw: JSON text or a parsed mapping with keys design, stages, tech,
            constraint_path, tool and options.

    Returns:
        JobSpec when every essential field is present and in range, otherwise
        an IncompleteReport naming every missing essential field (and any
        out-of-range optional field).

    Raises:
        MalformedDocument: unparseable input or wrongly typed values.
        RangeViolation: the document is complete but a value is out of range.
    """
    doc = _parse(raw)
    missing: List[str] = []
    violations: List[FieldViolation] = []

    design = _section(doc, "design", DESIGN_KEYS) or {}
    for key in ("name", "rtl_path", "netlist_path"):
        _check_string(design.get(key), f"design.{key}")
    for key in ("name", "cell_count", "rtl_path"):
        if _is_blank(design.get(key)):
            missing.append(f"design.{key}")
    cell_count = design.get("cell_count")
    if cell_count is not None:
        if not isinstance(cell_count, int) or isinstance(cell_count, bool):
            raise MalformedDocument("'design.cell_count' must be an integer")
        if cell_count < 1:
            violations.append(FieldViolation(field="design.cell_count", value=cell_count, allowed="[1, inf)"))

    stages: Tuple[StageKind, ...] = ()
    if not doc.get("stages"):
        missing.append("stages")
    else:
        stages = _parse_stages(doc["stages"])
        orders = [stage.order for stage in stages]
        if orders != sorted(set(orders)):
            violations.append(FieldViolation(
                field="stages",
                value=",".join(stage.value for stage in stages),
                allowed="floorplan < placement < cts < routing < sta, no repeats",
            ))

    tool: Optional[ToolKind] = None
    if _is_blank(doc.get("tool")):
        missing.append("tool")
    else:
        try:
            tool = ToolKind(str(doc["tool"]).lower())
        except ValueError as exc:
            raise MalformedDocument(f"unknown tool {doc['tool']!r}") from exc

    tech = _section(doc, "tech", TECH_KEYS) or {}
    _check_string(tech.get("name"), "tech.name")
    if _is_blank(tech.get("name")):
        missing.append("tech.name")
    lib_paths = _path_list(tech, "lib_paths")
    lef_paths = _path_list(tech, "lef_paths")
    # Library paths may only be empty under the mock backend.
    if tool is not None and tool is not ToolKind.MOCK and not lib_paths:
        missing.append("tech.lib_paths")

    _check_string(doc.get("constraint_path"), "constraint_path")
    if _is_blank(doc.get("constraint_path")):
        missing.append("constraint_path")

    options = _section(doc, "options", OPTION_KEYS) or {}
    ranges = {
        "clock_period_ns": (POSITIVE, lambda v: v > 0),
        "core_utilization": (UNIT_INTERVAL, lambda v: 0 < v <= 1),
        "placement_density": (UNIT_INTERVAL, lambda v: 0 < v <= 1),
    }
    for key, (allowed, check) in ranges.items():
        value = options.get(key)
        if value is None:
            continue
        if not _is_number(value):
            raise MalformedDocument(f"option '{key}' must be a number")
        if not check(value):
            violations.append(FieldViolation(field=key, value=value, allowed=allowed))
    extra_params = options.get("extra_params") or {}
    if not isinstance(extra_params, Mapping) or not all(
        isinstance(v, (bool, int, float, str)) for v in extra_params.values()
    ):
        raise MalformedDocument("'options.extra_params' must map names to scalars")

    if missing:
        order = {name: index for index, name in enumerate(ESSENTIAL_FIELDS)}
        missing.sort(key=lambda name: order.get(name, len(order)))
        return IncompleteReport(missing=missing, violations=violations)
    if violations:
        first, *rest = violations
        raise RangeViolation(
            first.field, first.value, first.allowed,
            others=[RangeViolation(v.field, v.value, v.allowed) for v in rest],
        )

    try:
        return JobSpec(
            design=DesignDescriptor(
                name=design["name"],
                cell_count=cell_count,
                rtl_path=design["rtl_path"],
                netlist_path=design.get("netlist_path"),
            ),
            stages=stages,
            tech=TechNode(name=tech["name"], lib_paths=lib_paths, lef_paths=lef_paths),
            constraint_path=doc["constraint_path"],
            tool=tool,
            clock_period_ns=options.get("clock_period_ns"),
            core_utilization=options.get("core_utilization"),
            placement_density=options.get("placement_density"),
            extra_params=dict(extra_params),
        )
    except ValidationError as exc:
        raise MalformedDocument(f"job document rejected: {exc.errors()[0]['msg']}") from exc


def job_to_document(job: JobSpec) -> Dict[str, Any]:
    """Serialize a JobSpec back into the job document format."""
    options: Dict[str, Any] = {}
    for key in ("clock_period_ns", "core_utilization", "placement_density"):
        value = getattr(job, key)
        if value is not None:
            options[key] = value
    if job.extra_params:
        options["extra_params"] = dict(job.extra_params)
    design = job.design.model_dump(mode="json", exclude_none=True)
    return {
        "schema_version": SCHEMA_VERSION,
        "design": design,
        "stages": [stage.value for stage in job.stages],
        "tech": {
            "name": job.tech.name,
            "lib_paths": list(job.tech.lib_paths),
            "lef_paths": list(job.tech.lef_paths),
        },
        "constraint_path": job.constraint_path,
        "tool": job.tool.value,
        "options": options,
    }


def dump_job_spec(job: JobSpec, path: Optional[Union[str, Path]] = None) -> str:
    """JSON text of ``job``; also written to ``path`` when given."""
    text = json.dumps(job_to_document(job), indent=2, sort_keys=True) + "\n"
    if path is not None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return text


def load_job_document(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a job file without validating it (used by interactive completion)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedDocument(f"{path}: job document must be a JSON object")
    return doc


def load_job_spec(path: Union[str, Path]) -> Union[JobSpec, IncompleteReport]:
    return validate_job_spec(load_job_document(path))


def apply_answer(doc: Dict[str, Any], field: str, answer: str) -> None:
    """
    Fill one missing essential field from a user's answer.

    Dotted names address nested sections ("design.cell_count"). Values are
    coerced to the type the validator expects.
    """
    value: Any = answer.strip()
    if field == "design.cell_count":
        try:
            value = int(value)
        except ValueError as exc:
            raise MalformedDocument(f"'design.cell_count' must be an integer, got {answer!r}") from exc
    elif field == "stages":
        value = [part.strip() for part in value.split(",") if part.strip()]
    elif field == "tech.lib_paths":
        value = [part for part in value.split() if part]

    target = doc
    *parents, leaf = field.split(".")
    for parent in parents:
        target = target.setdefault(parent, {})
    target[leaf] = value
