"""
Deadline-constrained machine configuration allocation

This module handles:
1. Stage costs from a cloud price list (hourly rate per vCPU configuration)
2. Picking the cheapest configuration for a single stage
3. Choosing one configuration per stage under a total time budget, solved as a
   multiple-choice knapsack with dynamic programming over whole seconds
4. An exhaustive enumeration used as a test oracle for the solver

The default objective maximizes the sum of reciprocal stage costs; ``min-cost``
minimizes total cost instead. Both solvers judge feasibility on whole seconds:
stage times are rounded up and the budget is rounded down.
"""

import json
import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from edaflow.config import settings
from edaflow.errors import BudgetTooLarge, EmptyOptions, Infeasible, MalformedDocument, TooLarge
from edaflow.models.flow import StageKind

logger = structlog.get_logger(__name__)

SECONDS_PER_HOUR = 3600.0


class Objective(str, Enum):
    RECIPROCAL_COST = "reciprocal-cost"
    MIN_COST = "min-cost"


class PriceList(BaseModel):
    """Hourly rates keyed by vCPU count."""

    model_config = ConfigDict(frozen=True)

    format_version: int = 1
    currency: str = "CNY"
    entries: Dict[int, float] = Field(min_length=1)

    @field_validator("entries")
    @classmethod
    def positive_rates(cls, v: Dict[int, float]) -> Dict[int, float]:
        for vcpus, rate in v.items():
            if vcpus < 1:
                raise ValueError(f"vcpus must be positive, got {vcpus}")
            if rate <= 0:
                raise ValueError(f"rate for {vcpus} vCPUs must be positive, got {rate}")
        return dict(sorted(v.items()))

    def rate(self, vcpus: int) -> float:
        try:
            return self.entries[vcpus]
        except KeyError:
            raise LookupError(f"price list has no rate for {vcpus} vCPUs") from None


class ConfigOption(BaseModel):
    """Running stage ``stage_index`` on ``vcpus`` takes ``runtime_s`` and costs ``cost``."""

    model_config = ConfigDict(frozen=True)

    stage_index: int = Field(ge=0)
    vcpus: int = Field(ge=1)
    runtime_s: float = Field(gt=0)
    cost: float = Field(gt=0)
    stage: Optional[StageKind] = None


class AllocationPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    choices: Tuple[int, ...]
    total_time_s: float
    total_cost: float
    objective_value: float
    budget_s: float
    objective: Objective = Objective.RECIPROCAL_COST
    selected: Tuple[ConfigOption, ...] = ()

    def label(self) -> str:
        return "(" + ",".join(str(v) for v in self.choices) + ")"


# --- cost model ---------------------------------------------------------------

def stage_cost(rate_per_hour: float, runtime_s: float) -> float:
    if rate_per_hour <= 0 or runtime_s <= 0:
        raise ValueError("rate and runtime must be positive")
    return rate_per_hour * runtime_s / SECONDS_PER_HOUR


def load_price_list(path: Optional[Union[str, Path]] = None) -> PriceList:
    source = Path(path) if path else settings.price_list_path
    try:
        return PriceList.model_validate_json(source.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise MalformedDocument(f"{source}: invalid price list: {exc}") from exc


def build_options(runtime_table: Mapping[StageKind, Mapping[int, float]],
                  price_list: PriceList) -> List[List[ConfigOption]]:
    """
    Turn per-stage runtimes into priced options.

    Stages are ordered by flow order; options within a stage by vCPUs.
    """
    stages = sorted(runtime_table, key=lambda stage: stage.order)
    options: List[List[ConfigOption]] = []
    for index, stage in enumerate(stages):
        row = []
        for vcpus, runtime in sorted(runtime_table[stage].items()):
            row.append(ConfigOption(
                stage_index=index, stage=stage, vcpus=vcpus, runtime_s=runtime,
                cost=stage_cost(price_list.rate(vcpus), runtime),
            ))
        options.append(row)
    return options


def load_options(path: Union[str, Path],
                 price_list: Optional[PriceList] = None) -> List[List[ConfigOption]]:
    """
    Read an options file.

    Each stage entry lists ``{vcpus, runtime_s, cost?}``; a missing cost is
    computed from ``price_list`` (the shipped default when omitted).

    Raises:
        MalformedDocument: unparseable file or invalid entries.
    """
    source = Path(path)
    try:
        doc = json.loads(source.read_text(encoding="utf-8"))
        stages = doc["stages"]
        if not isinstance(stages, list) or not stages:
            raise MalformedDocument(f"{source}: 'stages' must be a non-empty list")
        options: List[List[ConfigOption]] = []
        for index, entry in enumerate(stages):
            stage = StageKind(entry["stage"]) if entry.get("stage") else None
            row = []
            for item in entry["options"]:
                cost = item.get("cost")
                if cost is None:
                    price_list = price_list or load_price_list()
                    cost = stage_cost(price_list.rate(int(item["vcpus"])), float(item["runtime_s"]))
                row.append(ConfigOption(
                    stage_index=index, stage=stage, vcpus=item["vcpus"],
                    runtime_s=item["runtime_s"], cost=cost,
                ))
            options.append(row)
    except MalformedDocument:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, LookupError) as exc:
        raise MalformedDocument(f"{source}: invalid options file: {exc}") from exc
    return options


def runtime_table(options: Sequence[Sequence[ConfigOption]]) -> Dict[StageKind, Dict[int, float]]:
    """Stage → {vcpus: runtime_s} view of options that carry stage names."""
    table: Dict[StageKind, Dict[int, float]] = {}
    for row in options:
        for option in row:
            if option.stage is None:
                raise MalformedDocument("options without stage names cannot serve as a runtime table")
            table.setdefault(option.stage, {})[option.vcpus] = option.runtime_s
    return table


# --- solvers ------------------------------------------------------------------

def cheapest_single_stage(options: Sequence[ConfigOption]) -> ConfigOption:
    if not options:
        raise EmptyOptions("stage has no configuration options")
    if len({o.stage_index for o in options}) > 1:
        raise ValueError("options must all belong to the same stage")
    return min(options, key=lambda o: (o.cost, o.vcpus))


def _whole_seconds(runtime_s: float) -> int:
    return math.ceil(round(runtime_s, 9))


def _capacity(budget_s: float) -> int:
    return math.floor(round(budget_s, 9))


def _check_inputs(options: Sequence[Sequence[ConfigOption]], budget_s: float) -> None:
    if not options:
        raise EmptyOptions("no stages to allocate")
    for index, row in enumerate(options):
        if not row:
            raise EmptyOptions(f"stage {index} has no configuration options")
    if budget_s <= 0:
        raise ValueError("budget_s must be positive")
    if budget_s > settings.max_budget_s:
        raise BudgetTooLarge(f"budget {budget_s:g}s exceeds the {settings.max_budget_s:g}s limit")


def _min_total_time(options: Sequence[Sequence[ConfigOption]]) -> float:
    return sum(min(o.runtime_s for o in row) for row in options)


def _gain(option: ConfigOption, objective: Objective) -> float:
    return 1.0 / option.cost if objective is Objective.RECIPROCAL_COST else -option.cost


def _build_plan(selected: Sequence[ConfigOption], budget_s: float,
                objective: Objective) -> AllocationPlan:
    # Sums run in stage order so both solvers produce bitwise-equal totals.
    total_time = total_cost = value = 0.0
    for option in selected:
        total_time += option.runtime_s
        total_cost += option.cost
        value += _gain(option, objective)
    return AllocationPlan(
        choices=tuple(o.vcpus for o in selected),
        total_time_s=total_time,
        total_cost=total_cost,
        objective_value=value,
        budget_s=budget_s,
        objective=objective,
        selected=tuple(selected),
    )


def mckp_allocate(options: Sequence[Sequence[ConfigOption]], budget_s: float,
                  objective: Objective = Objective.RECIPROCAL_COST) -> AllocationPlan:
    """
    Pick one option per stage maximizing the objective with total time within budget.

    The table ``best[w]`` holds the best value of the stages seen so far using
    at most ``w`` whole seconds. Ties on value prefer lower unrounded total
    time, then the lexicographically smaller vCPU vector.

    Raises:
        EmptyOptions: a stage without options.
        Infeasible: even the fastest option per stage misses the budget.
        BudgetTooLarge: budget above the time-axis guardrail.
    """
    _check_inputs(options, budget_s)
    capacity = _capacity(budget_s)
    if sum(min(_whole_seconds(o.runtime_s) for o in row) for row in options) > capacity:
        raise Infeasible(budget_s, _min_total_time(options))

    width = capacity + 1
    best = np.zeros(width)
    time = np.zeros(width)
    rank = np.zeros(width, dtype=np.int64)
    back = np.zeros((len(options), width), dtype=np.int64)

    for i, row in enumerate(options):
        k = len(row)
        cand_val = np.full((k, width), -np.inf)
        cand_time = np.full((k, width), np.inf)
        cand_rank = np.full((k, width), np.iinfo(np.int64).max)
        cand_vcpus = np.empty((k, width), dtype=np.int64)
        for j, option in enumerate(row):
            w = _whole_seconds(option.runtime_s)
            cand_vcpus[j, :] = option.vcpus
            if w >= width:
                continue
            cand_val[j, w:] = best[: width - w] + _gain(option, objective)
            cand_time[j, w:] = time[: width - w] + option.runtime_s
            cand_rank[j, w:] = rank[: width - w]
        order = np.lexsort((cand_vcpus, cand_rank, cand_time, -cand_val), axis=0)
        pick = order[0]
        cols = np.arange(width)
        back[i] = pick
        best = cand_val[pick, cols]
        time = cand_time[pick, cols]
        # Re-rank stored prefixes so later ties compare whole vCPU vectors.
        prefix_rank, chosen_vcpus = cand_rank[pick, cols], cand_vcpus[pick, cols]
        ordering = np.lexsort((chosen_vcpus, prefix_rank))
        pairs = np.stack([prefix_rank[ordering], chosen_vcpus[ordering]])
        step = np.concatenate([[0], np.any(np.diff(pairs, axis=1) != 0, axis=0).astype(np.int64)])
        rank = np.empty(width, dtype=np.int64)
        rank[ordering] = np.cumsum(step)

    selected: List[ConfigOption] = []
    w = capacity
    for i in range(len(options) - 1, -1, -1):
        option = options[i][int(back[i, w])]
        selected.append(option)
        w -= _whole_seconds(option.runtime_s)
    selected.reverse()

    plan = _build_plan(selected, budget_s, objective)
    logger.info("allocation_solved", solver="dp", objective=objective.value,
                choices=list(plan.choices), total_time_s=plan.total_time_s,
                total_cost=round(plan.total_cost, 6), budget_s=budget_s)
    return plan


def combination_count(options: Sequence[Sequence[ConfigOption]],
                      limit: Optional[int] = None) -> int:
    """Number of combinations the oracle would enumerate; TooLarge above ``limit``."""
    limit = settings.oracle_limit if limit is None else limit
    count = math.prod(len(row) for row in options)
    if count > limit:
        raise TooLarge(count, limit)
    return count


def brute_force_allocate(options: Sequence[Sequence[ConfigOption]], budget_s: float,
                         objective: Objective = Objective.RECIPROCAL_COST) -> AllocationPlan:
    """
    Enumerate every combination and return the best feasible one.

    Ties on objective prefer lower total cost, then lower total time, then the
    lexicographically smaller vCPU vector.

    Raises:
        TooLarge: more than ``settings.oracle_limit`` combinations.
        Infeasible: no combination fits the budget.
    """
    _check_inputs(options, budget_s)
    combination_count(options)
    capacity = _capacity(budget_s)

    grid = np.indices([len(row) for row in options]).reshape(len(options), -1)
    gain = np.zeros(grid.shape[1])
    cost = np.zeros(grid.shape[1])
    time = np.zeros(grid.shape[1])
    seconds = np.zeros(grid.shape[1], dtype=np.int64)
    vcpus = []
    for i, row in enumerate(options):
        idx = grid[i]
        gain = gain + np.array([_gain(o, objective) for o in row])[idx]
        cost = cost + np.array([o.cost for o in row])[idx]
        time = time + np.array([o.runtime_s for o in row])[idx]
        seconds = seconds + np.array([_whole_seconds(o.runtime_s) for o in row])[idx]
        vcpus.append(np.array([o.vcpus for o in row])[idx])

    feasible = np.nonzero(seconds <= capacity)[0]
    if feasible.size == 0:
        raise Infeasible(budget_s, _min_total_time(options))

    keys = [v[feasible] for v in reversed(vcpus)]
    keys += [time[feasible], cost[feasible], -gain[feasible]]
    winner = feasible[np.lexsort(keys)[0]]
    selected = [options[i][int(grid[i, winner])] for i in range(len(options))]

    plan = _build_plan(selected, budget_s, objective)
    logger.debug("allocation_solved", solver="brute_force", objective=objective.value,
                 choices=list(plan.choices), combinations=int(grid.shape[1]))
    return plan
