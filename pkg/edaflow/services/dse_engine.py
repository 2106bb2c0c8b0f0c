"""
Design space exploration over backend tool parameters

This module handles:
1. Parameter spaces with continuous, integer and categorical dimensions
2. Proposal strategies (uniform random search and simulated annealing)
3. Self-correction of the space from a user-extensible fault list
4. Running a trial loop against a flow evaluator and reporting the best
   parameters by PPA product
"""

import json
import re
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from edaflow.config import settings
from edaflow.errors import AllTrialsFailed, MalformedDocument, UnremediableFault
from edaflow.models.flow import (
    PpaMetrics,
    Scalar,
    ToolKind,
    format_percentage,
    ppa_improvement,
    ppa_product,
)
from edaflow.services.eda_adapter import DENSITY, UTILIZATION, FlowEvaluation, template_defaults

logger = structlog.get_logger(__name__)

Evaluator = Callable[[Mapping[str, Scalar]], FlowEvaluation]

_INTERVAL = re.compile(r"\[\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\]")


# --- parameter space ----------------------------------------------------------

class DimKind(str, Enum):
    CONTINUOUS = "continuous"
    INTEGER = "integer"
    CATEGORICAL = "categorical"


class ParamDim(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    kind: DimKind = DimKind.CONTINUOUS
    lo: Optional[float] = None
    hi: Optional[float] = None
    values: Tuple[Scalar, ...] = ()

    @model_validator(mode="after")
    def check_bounds(self) -> "ParamDim":
        if self.kind is DimKind.CATEGORICAL:
            if not self.values:
                raise ValueError(f"categorical dim '{self.name}' needs values")
        elif self.lo is None or self.hi is None or not self.lo < self.hi:
            raise ValueError(f"dim '{self.name}' needs lo < hi")
        return self

    @property
    def ranged(self) -> bool:
        return self.kind is not DimKind.CATEGORICAL

    @property
    def span(self) -> float:
        return self.hi - self.lo if self.ranged else 0.0

    def contains(self, value: Scalar) -> bool:
        if not self.ranged:
            return value in self.values
        return self.lo <= float(value) <= self.hi

    def clamp(self, value: float) -> Scalar:
        clamped = min(max(float(value), self.lo), self.hi)
        return int(round(clamped)) if self.kind is DimKind.INTEGER else clamped


class ParamSpace(BaseModel):
    """Searchable dimensions with their defaults; frozen dims stay at their default."""

    model_config = ConfigDict(frozen=True)

    dims: Tuple[ParamDim, ...] = Field(min_length=1)
    defaults: Dict[str, Scalar]
    frozen: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def check_defaults(self) -> "ParamSpace":
        names = [dim.name for dim in self.dims]
        if len(names) != len(set(names)):
            raise ValueError("dim names must be unique")
        for dim in self.dims:
            if dim.name not in self.defaults:
                raise ValueError(f"dim '{dim.name}' has no default")
            if not dim.contains(self.defaults[dim.name]):
                raise ValueError(f"default for '{dim.name}' lies outside the dim")
        unknown = set(self.frozen) - set(names)
        if unknown:
            raise ValueError(f"frozen dims not in space: {sorted(unknown)}")
        return self

    def dim(self, name: str) -> ParamDim:
        for dim in self.dims:
            if dim.name == name:
                return dim
        raise LookupError(f"no dim named '{name}'")

    def replace_dim(self, new: ParamDim, default: Optional[Scalar] = None) -> "ParamSpace":
        dims = tuple(new if dim.name == new.name else dim for dim in self.dims)
        defaults = dict(self.defaults)
        if default is not None:
            defaults[new.name] = default
        return ParamSpace(dims=dims, defaults=defaults, frozen=self.frozen)

    def freeze(self, name: str) -> "ParamSpace":
        self.dim(name)
        if name in self.frozen:
            return self
        return self.model_copy(update={"frozen": (*self.frozen, name)})

    def contains(self, params: Mapping[str, Scalar]) -> bool:
        return all(dim.contains(params[dim.name]) for dim in self.dims)


def default_space(tool: ToolKind = ToolKind.MOCK) -> ParamSpace:
    """Utilization × density space with the tool's template defaults."""
    defaults = template_defaults(tool)
    u_lo, u_hi = settings.utilization_range
    d_lo, d_hi = settings.density_range
    return ParamSpace(
        dims=(
            ParamDim(name=UTILIZATION, lo=u_lo, hi=u_hi),
            ParamDim(name=DENSITY, lo=d_lo, hi=d_hi),
        ),
        defaults={UTILIZATION: defaults[UTILIZATION], DENSITY: defaults[DENSITY]},
    )


# --- trials and report --------------------------------------------------------

class Trial(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    params: Dict[str, Scalar]
    metrics: Optional[PpaMetrics] = None
    objective: Optional[float] = None
    fault_code: Optional[str] = None
    message: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.metrics is not None


class RemedyKind(str, Enum):
    SHRINK_RANGE = "shrink_range"
    RESET_TO_DEFAULT = "reset_to_default"
    CLAMP_TO_BOUND = "clamp_to_bound"
    ABORT = "abort"


class Remedy(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: RemedyKind
    dim: Optional[str] = None
    factor: Optional[float] = Field(default=None, gt=0, le=1)

    @model_validator(mode="after")
    def check_fields(self) -> "Remedy":
        if self.kind is not RemedyKind.ABORT and not self.dim:
            raise ValueError(f"remedy '{self.kind.value}' needs a dim")
        if self.kind is RemedyKind.SHRINK_RANGE and self.factor is None:
            raise ValueError("shrink_range needs a factor")
        return self


class FaultRule(BaseModel):
    """Maps a fault code plus message substring onto a remedy."""

    model_config = ConfigDict(frozen=True)

    fault_code: str
    match: str = ""
    remedy: Remedy

    def matches(self, fault_code: str, message: str) -> bool:
        return fault_code == self.fault_code and self.match in (message or "")


class RemediationRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    trial_index: Optional[int] = None
    fault_code: str
    fault_message: str
    remedy: str
    dim: Optional[str] = None
    before: Optional[Tuple[float, float]] = None
    after: Optional[Tuple[float, float]] = None

    @property
    def changed(self) -> bool:
        return self.before != self.after


NO_RULE_MATCHED = "no_rule_matched"


class DseReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy: str
    seed: int
    budget: int
    best_index: int
    best_params: Dict[str, Scalar]
    best_metrics: PpaMetrics
    baseline_index: int
    baseline_metrics: PpaMetrics
    improvement: float
    improvement_pct: str
    trials: List[Trial]
    remediations_applied: List[RemediationRecord] = Field(default_factory=list)
    final_space: ParamSpace


def best_so_far(trials: Sequence[Trial]) -> List[Optional[float]]:
    curve: List[Optional[float]] = []
    best: Optional[float] = None
    for trial in trials:
        if trial.objective is not None and (best is None or trial.objective < best):
            best = trial.objective
        curve.append(best)
    return curve


# --- strategies ---------------------------------------------------------------

class SearchStrategy(Protocol):
    name: str

    def propose(self, space: ParamSpace, history: Sequence[Trial],
                rng: np.random.Generator) -> Dict[str, Scalar]:
        ...


def _uniform(dim: ParamDim, rng: np.random.Generator) -> Scalar:
    if dim.kind is DimKind.CONTINUOUS:
        return float(rng.uniform(dim.lo, dim.hi))
    if dim.kind is DimKind.INTEGER:
        return int(rng.integers(int(np.ceil(dim.lo)), int(np.floor(dim.hi)) + 1))
    return dim.values[int(rng.integers(len(dim.values)))]


class RandomSearch:
    name = "random"

    def propose(self, space: ParamSpace, history: Sequence[Trial],
                rng: np.random.Generator) -> Dict[str, Scalar]:
        params: Dict[str, Scalar] = {}
        for dim in space.dims:
            params[dim.name] = space.defaults[dim.name] if dim.name in space.frozen else _uniform(dim, rng)
        return params


class AnnealSearch:
    """
    Perturbs the best-so-far parameters.

    Temperature is ``cooling ** trial_index``. Ranged dims take a Gaussian step
    with sigma ``step * range * temperature`` clamped to bounds; categorical
    dims are resampled uniformly with probability equal to the temperature.
    """

    name = "anneal"

    def __init__(self, step: float = 0.3, cooling: float = 0.95):
        self.step = step
        self.cooling = cooling

    def temperature(self, trial_index: int) -> float:
        return self.cooling ** trial_index

    def propose(self, space: ParamSpace, history: Sequence[Trial],
                rng: np.random.Generator) -> Dict[str, Scalar]:
        temperature = self.temperature(len(history))
        successes = [t for t in history if t.ok]
        base = min(successes, key=lambda t: (t.objective, t.index)).params if successes else space.defaults

        params: Dict[str, Scalar] = {}
        for dim in space.dims:
            current = base.get(dim.name, space.defaults[dim.name])
            if dim.name in space.frozen:
                params[dim.name] = space.defaults[dim.name]
            elif dim.ranged:
                center = float(dim.clamp(float(current)))
                params[dim.name] = dim.clamp(center + rng.normal(0.0, self.step * dim.span * temperature))
            elif rng.random() < temperature or current not in dim.values:
                params[dim.name] = _uniform(dim, rng)
            else:
                params[dim.name] = current
        return params


STRATEGIES: Dict[str, Callable[[], SearchStrategy]] = {
    RandomSearch.name: RandomSearch,
    AnnealSearch.name: AnnealSearch,
}


def get_strategy(name: str) -> SearchStrategy:
    try:
        return STRATEGIES[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown strategy '{name}', expected one of {sorted(STRATEGIES)}") from None


def propose(strategy: SearchStrategy, space: ParamSpace, history: Sequence[Trial],
            rng: np.random.Generator) -> Dict[str, Scalar]:
    return strategy.propose(space, history, rng)


# --- fault list ---------------------------------------------------------------

def load_fault_rules(path: Optional[Union[str, Path]] = None) -> List[FaultRule]:
    source = Path(path) if path else settings.fault_list_path
    try:
        return TypeAdapter(List[FaultRule]).validate_json(source.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise MalformedDocument(f"{source}: invalid fault list: {exc}") from exc


def _bounds(dim: ParamDim) -> Optional[Tuple[float, float]]:
    return (dim.lo, dim.hi) if dim.ranged else None


def _shrink(dim: ParamDim, default: float, factor: float) -> ParamDim:
    width = factor * dim.span
    lo, hi = default - width / 2.0, default + width / 2.0
    if lo < dim.lo:
        lo, hi = dim.lo, dim.lo + width
    if hi > dim.hi:
        lo, hi = dim.hi - width, dim.hi
    if dim.kind is DimKind.INTEGER:
        lo, hi = float(np.ceil(lo)), float(np.floor(hi))
        if not lo < hi:
            return dim
    return dim.model_copy(update={"lo": lo, "hi": hi})


def remediate_space(space: ParamSpace, fault_code: str, message: str,
                    rules: Sequence[FaultRule],
                    trial_index: Optional[int] = None) -> Tuple[ParamSpace, RemediationRecord]:
    """
    Apply the first rule matching the fault.

    ShrinkRange narrows a dim to a sub-range of ``factor × width`` centred on
    the default (shifted to stay inside the old range). ClampToBound
    intersects the dim with a ``[lo, hi]`` interval quoted in the message.
    ResetToDefault pins the dim to its default. Abort and unmatched faults
    leave the space unchanged.
    """
    if not fault_code:
        raise ValueError("fault code must be non-empty")
    record = dict(trial_index=trial_index, fault_code=fault_code, fault_message=message or "")
    rule = next((r for r in rules if r.matches(fault_code, message)), None)
    if rule is None:
        return space, RemediationRecord(remedy=NO_RULE_MATCHED, **record)

    remedy = rule.remedy
    record.update(remedy=remedy.kind.value, dim=remedy.dim)
    if remedy.kind is RemedyKind.ABORT:
        return space, RemediationRecord(**record)

    dim = space.dim(remedy.dim)
    before = _bounds(dim)
    default = space.defaults[dim.name]

    if remedy.kind is RemedyKind.SHRINK_RANGE and dim.ranged:
        space = space.replace_dim(_shrink(dim, float(default), remedy.factor))
    elif remedy.kind is RemedyKind.CLAMP_TO_BOUND and dim.ranged:
        found = _INTERVAL.search(message or "")
        if found:
            lo = max(dim.lo, float(found.group(1)))
            hi = min(dim.hi, float(found.group(2)))
            if lo < hi:
                clamped = dim.model_copy(update={"lo": lo, "hi": hi})
                space = space.replace_dim(clamped, default=clamped.clamp(float(default)))
    elif remedy.kind is RemedyKind.RESET_TO_DEFAULT:
        space = space.freeze(dim.name)

    return space, RemediationRecord(before=before, after=_bounds(space.dim(dim.name)), **record)


# --- trial loop ---------------------------------------------------------------

def _trial(index: int, params: Mapping[str, Scalar], evaluation: FlowEvaluation) -> Trial:
    if evaluation.ok:
        return Trial(index=index, params=dict(params), metrics=evaluation.metrics,
                     objective=ppa_product(evaluation.metrics))
    return Trial(index=index, params=dict(params), fault_code=evaluation.fault_code or "UNKNOWN",
                 message=evaluation.message)


class _FaultTracker:
    """Counts faults per (code, dim) and applies remediation."""

    def __init__(self, rules: Sequence[FaultRule], limit: int):
        self.rules = list(rules)
        self.limit = limit
        self.counts: Dict[Tuple[str, str], int] = {}
        self.records: List[RemediationRecord] = []

    def handle(self, space: ParamSpace, trial: Trial) -> ParamSpace:
        code, message = trial.fault_code, trial.message or ""
        rule = next((r for r in self.rules if r.matches(code, message)), None)
        if rule is not None and rule.remedy.kind is RemedyKind.ABORT:
            raise UnremediableFault(code, message)
        if rule is not None:
            key = (code, rule.remedy.dim)
            self.counts[key] = self.counts.get(key, 0) + 1
            if self.counts[key] > self.limit:
                raise UnremediableFault(code, message, rule.remedy.dim, self.counts[key])

        space, record = remediate_space(space, code, message, self.rules, trial.index)
        self.records.append(record)
        logger.info("dse_remediation", trial=trial.index, fault_code=code,
                    remedy=record.remedy, dim=record.dim, before=record.before, after=record.after)
        return space


def run_dse(
    space: ParamSpace,
    evaluator: Evaluator,
    budget: int,
    strategy: Union[str, SearchStrategy] = "random",
    seed: int = 0,
    faults: Optional[Sequence[FaultRule]] = None,
    workers: int = 1,
    recurrence_limit: Optional[int] = None,
) -> DseReport:
    """
    Explore ``space`` for ``budget`` trials; trial 0 always runs the defaults.

    With ``workers > 1`` and random search, proposals are drawn in batches and
    evaluated on a thread pool; trials are recorded in proposal order.

    Raises:
        AllTrialsFailed: no trial produced metrics.
        UnremediableFault: an Abort rule matched, or one fault recurred on
            the same dim more than ``recurrence_limit`` times.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    search = get_strategy(strategy) if isinstance(strategy, str) else strategy
    rng = np.random.default_rng(seed)
    tracker = _FaultTracker(faults or [], recurrence_limit or settings.fault_recurrence_limit)
    log = logger.bind(strategy=search.name, seed=seed, budget=budget)

    trials: List[Trial] = []
    active = space

    def record(params: Dict[str, Scalar], evaluation: FlowEvaluation) -> None:
        nonlocal active
        trial = _trial(len(trials), params, evaluation)
        trials.append(trial)
        log.debug("dse_trial", trial=trial.index, objective=trial.objective, fault_code=trial.fault_code)
        if not trial.ok:
            active = tracker.handle(active, trial)

    record(dict(space.defaults), evaluator(dict(space.defaults)))

    parallel = workers > 1 and isinstance(search, RandomSearch)
    if parallel:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            while len(trials) < budget:
                batch = [search.propose(active, trials, rng)
                         for _ in range(min(workers, budget - len(trials)))]
                for params, evaluation in zip(batch, pool.map(evaluator, batch)):
                    record(params, evaluation)
    else:
        while len(trials) < budget:
            params = search.propose(active, trials, rng)
            record(params, evaluator(params))

    successes = [t for t in trials if t.ok]
    if not successes:
        raise AllTrialsFailed(f"all {len(trials)} trials failed")
    best = min(successes, key=lambda t: (t.objective, t.index))
    baseline = trials[0] if trials[0].ok else successes[0]
    improvement = ppa_improvement(baseline.metrics, best.metrics)

    log.info("dse_finished", best_trial=best.index, best_objective=best.objective,
             improvement=format_percentage(improvement), remediations=len(tracker.records))
    return DseReport(
        strategy=search.name,
        seed=seed,
        budget=budget,
        best_index=best.index,
        best_params=best.params,
        best_metrics=best.metrics,
        baseline_index=baseline.index,
        baseline_metrics=baseline.metrics,
        improvement=improvement,
        improvement_pct=format_percentage(improvement),
        trials=trials,
        remediations_applied=tracker.records,
        final_space=active,
    )


def save_report_json(report: DseReport, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                      encoding="utf-8")
    return target
