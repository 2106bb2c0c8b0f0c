"""
Discrete-event simulation of a container cluster

This module handles:
1. Cluster topologies (``4x8`` shorthand or a JSON node list)
2. Scheduling vCPU-sized container requests with dependencies onto nodes,
   first-fit-decreasing by vCPUs at every decision instant
3. Makespan, speedup and the classic lower bounds used to sanity-check schedules
4. A thread-safe executor facade (submit/poll/collect) backed by the simulator
"""

import heapq
import json
import re
import threading
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import structlog
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from edaflow.errors import CyclicDependencies, MalformedDocument, UnschedulableRequest

logger = structlog.get_logger(__name__)

_TOPOLOGY = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")


class Node(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    vcpu_capacity: int = Field(ge=1)
    allocated: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_allocation(self) -> "Node":
        if self.allocated > self.vcpu_capacity:
            raise ValueError(f"node '{self.id}' allocates more than its capacity")
        return self


class ContainerRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    task_id: str = Field(min_length=1)
    vcpus: int = Field(ge=1)
    duration_s: float = Field(gt=0)
    dependencies: Tuple[str, ...] = ()


class EventKind(str, Enum):
    SUBMITTED = "submitted"
    STARTED = "started"
    FINISHED = "finished"
    BLOCKED = "blocked"


# Order of event kinds within one instant: capacity is released before
# dependents are submitted, and placement happens after submission.
_KIND_RANK = {
    EventKind.FINISHED: 0,
    EventKind.SUBMITTED: 1,
    EventKind.STARTED: 2,
    EventKind.BLOCKED: 3,
}


class ScheduleEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    time_s: float = Field(ge=0)
    kind: EventKind
    task_id: str
    node_id: Optional[str] = None

    def sort_key(self) -> Tuple[float, int, str]:
        return self.time_s, _KIND_RANK[self.kind], self.task_id


class SimulationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    events: List[ScheduleEvent]
    makespan_s: float
    placements: Dict[str, str] = Field(default_factory=dict)


# --- topology -----------------------------------------------------------------

def parse_topology(spec: str) -> List[Node]:
    """``"4x8"`` → four nodes of eight vCPUs named node-1..node-4."""
    match = _TOPOLOGY.match(spec)
    if not match:
        raise MalformedDocument(f"topology '{spec}' is not of the form <nodes>x<vcpus>")
    count, capacity = int(match.group(1)), int(match.group(2))
    if count < 1 or capacity < 1:
        raise MalformedDocument(f"topology '{spec}' needs at least one node and one vCPU")
    return [Node(id=f"node-{i}", vcpu_capacity=capacity) for i in range(1, count + 1)]


def load_topology(path: Union[str, Path]) -> List[Node]:
    try:
        nodes = TypeAdapter(List[Node]).validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise MalformedDocument(f"{path}: invalid topology: {exc}") from exc
    if not nodes:
        raise MalformedDocument(f"{path}: topology has no nodes")
    if len({n.id for n in nodes}) != len(nodes):
        raise MalformedDocument(f"{path}: node ids must be unique")
    return nodes


def resolve_topology(spec: str) -> List[Node]:
    """Accept either a topology file path or the ``NxC`` shorthand."""
    if _TOPOLOGY.match(spec):
        return parse_topology(spec)
    return load_topology(spec)


def load_requests(path: Union[str, Path]) -> List[ContainerRequest]:
    try:
        return TypeAdapter(List[ContainerRequest]).validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise MalformedDocument(f"{path}: invalid task list: {exc}") from exc


# --- dependency graph ---------------------------------------------------------

def dependency_graph(requests: Sequence[ContainerRequest]) -> nx.DiGraph:
    """
    Build the dependency DAG (edges point from dependency to dependent).

    Raises:
        CyclicDependencies: duplicate ids, unknown dependencies or a cycle.
    """
    graph = nx.DiGraph()
    for request in requests:
        if request.task_id in graph:
            raise CyclicDependencies(f"duplicate task id '{request.task_id}'")
        graph.add_node(request.task_id, duration=request.duration_s)
    for request in requests:
        for dep in request.dependencies:
            if dep not in graph:
                raise CyclicDependencies(f"task '{request.task_id}' depends on unknown task '{dep}'")
            graph.add_edge(dep, request.task_id)
    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        raise CyclicDependencies(f"dependency cycle: {' -> '.join(edge[0] for edge in cycle)}")
    return graph


def critical_path_s(requests: Sequence[ContainerRequest]) -> float:
    """Longest dependency chain by total duration."""
    graph = dependency_graph(requests)
    finish: Dict[str, float] = {}
    for task_id in nx.topological_sort(graph):
        start = max((finish[p] for p in graph.predecessors(task_id)), default=0.0)
        finish[task_id] = start + graph.nodes[task_id]["duration"]
    return max(finish.values(), default=0.0)


def work_bound_s(nodes: Sequence[Node], requests: Sequence[ContainerRequest]) -> float:
    """Total vCPU-seconds over total capacity."""
    capacity = sum(node.vcpu_capacity for node in nodes)
    return sum(r.vcpus * r.duration_s for r in requests) / capacity


# --- simulation ---------------------------------------------------------------

def simulate(nodes: Sequence[Node], requests: Sequence[ContainerRequest]) -> SimulationResult:
    """
    Run the event loop.

    At each decision instant ready tasks (all dependencies finished) are
    placed largest-first (ties by task id) onto the first node in list order
    with enough free vCPUs. Tasks run uninterrupted; a ready task that does
    not fit is reported Blocked once.

    Raises:
        UnschedulableRequest: a request exceeds every node's capacity.
        CyclicDependencies: invalid dependency graph.
    """
    if not nodes:
        raise ValueError("cluster has no nodes")
    graph = dependency_graph(requests)
    largest = max(node.vcpu_capacity for node in nodes)
    for request in requests:
        if request.vcpus > largest:
            raise UnschedulableRequest(
                f"task '{request.task_id}' needs {request.vcpus} vCPUs; largest node has {largest}"
            )

    by_id = {r.task_id: r for r in requests}
    free = {node.id: node.vcpu_capacity - node.allocated for node in nodes}
    waiting = {task_id: graph.in_degree(task_id) for task_id in graph}
    events: List[ScheduleEvent] = []
    placements: Dict[str, str] = {}
    blocked_once = set()
    running: List[Tuple[float, str, str]] = []

    ready = sorted(task_id for task_id, count in waiting.items() if count == 0)
    events.extend(ScheduleEvent(time_s=0.0, kind=EventKind.SUBMITTED, task_id=t) for t in ready)
    now = 0.0
    makespan = 0.0

    while ready or running:
        still_waiting = []
        for task_id in sorted(ready, key=lambda t: (-by_id[t].vcpus, t)):
            need = by_id[task_id].vcpus
            node_id = next((n.id for n in nodes if free[n.id] >= need), None)
            if node_id is None:
                if task_id not in blocked_once:
                    blocked_once.add(task_id)
                    events.append(ScheduleEvent(time_s=now, kind=EventKind.BLOCKED, task_id=task_id))
                still_waiting.append(task_id)
                continue
            free[node_id] -= need
            placements[task_id] = node_id
            events.append(ScheduleEvent(time_s=now, kind=EventKind.STARTED, task_id=task_id, node_id=node_id))
            heapq.heappush(running, (now + by_id[task_id].duration_s, task_id, node_id))
        ready = still_waiting

        if not running:
            break
        now = running[0][0]
        while running and running[0][0] == now:
            _, task_id, node_id = heapq.heappop(running)
            free[node_id] += by_id[task_id].vcpus
            makespan = now
            events.append(ScheduleEvent(time_s=now, kind=EventKind.FINISHED, task_id=task_id, node_id=node_id))
            for child in sorted(graph.successors(task_id)):
                waiting[child] -= 1
                if waiting[child] == 0:
                    ready.append(child)
                    events.append(ScheduleEvent(time_s=now, kind=EventKind.SUBMITTED, task_id=child))

    events.sort(key=ScheduleEvent.sort_key)
    logger.debug("cluster_simulated", nodes=len(nodes), tasks=len(requests), makespan_s=makespan)
    return SimulationResult(events=events, makespan_s=makespan, placements=placements)


def speedup(nodes_k: Sequence[Node], nodes_1: Sequence[Node],
            requests: Sequence[ContainerRequest]) -> float:
    """Single-node makespan over k-node makespan."""
    single = simulate(nodes_1, requests).makespan_s
    multi = simulate(nodes_k, requests).makespan_s
    if multi <= 0:
        raise ValueError("speedup is undefined for an empty workload")
    return single / multi


def write_events_jsonl(events: Sequence[ScheduleEvent], path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event.model_dump(mode="json", exclude_none=True), sort_keys=True) + "\n")
    return target


# --- executor facade ----------------------------------------------------------

class ClusterExecutor(ABC):
    """Submission interface shared by the simulator and a real cluster backend."""

    @abstractmethod
    def submit(self, request: ContainerRequest) -> str:
        ...

    @abstractmethod
    def poll(self, task_id: str) -> EventKind:
        ...

    @abstractmethod
    def collect(self) -> List[ScheduleEvent]:
        ...


class SimulatedClusterExecutor(ClusterExecutor):
    """
    Collects submissions and replays them through ``simulate``.

    ``submit`` may be called from several threads. ``collect`` runs the
    simulation once over everything submitted so far and returns events
    ordered by (time, sequence).
    """

    def __init__(self, nodes: Sequence[Node]):
        self.nodes = list(nodes)
        self._lock = threading.Lock()
        self._requests: Dict[str, ContainerRequest] = {}
        self._result: Optional[SimulationResult] = None

    def submit(self, request: ContainerRequest) -> str:
        with self._lock:
            if request.task_id in self._requests:
                raise ValueError(f"task '{request.task_id}' already submitted")
            self._requests[request.task_id] = request
            self._result = None
        return request.task_id

    def poll(self, task_id: str) -> EventKind:
        with self._lock:
            if task_id not in self._requests:
                raise LookupError(f"unknown task '{task_id}'")
            if self._result is None:
                return EventKind.SUBMITTED
            kinds = [e.kind for e in self._result.events if e.task_id == task_id]
            return kinds[-1]

    def result(self) -> SimulationResult:
        with self._lock:
            if self._result is None:
                self._result = simulate(self.nodes, list(self._requests.values()))
            return self._result

    def collect(self) -> List[ScheduleEvent]:
        return list(self.result().events)
