"""
Tests for the container cluster simulator and its executor facade.
"""

import json
import threading
from collections import defaultdict

import numpy as np
import pytest

from edaflow.errors import CyclicDependencies, MalformedDocument, UnschedulableRequest
from edaflow.services.cluster_sim import (
    ContainerRequest,
    EventKind,
    Node,
    SimulatedClusterExecutor,
    critical_path_s,
    load_requests,
    load_topology,
    parse_topology,
    resolve_topology,
    simulate,
    speedup,
    work_bound_s,
    write_events_jsonl,
)


@pytest.fixture
def eight_uniform(fixtures_dir):
    return load_requests(fixtures_dir / "eight_uniform.json")


def random_dag(rng: np.random.Generator, size: int):
    requests = []
    for i in range(size):
        earlier = [f"t{j:02d}" for j in range(i)]
        k = int(rng.integers(0, min(3, i) + 1))
        deps = tuple(sorted(rng.choice(earlier, size=k, replace=False).tolist())) if k else ()
        requests.append(ContainerRequest(task_id=f"t{i:02d}", vcpus=int(rng.choice([1, 2, 4, 8])),
                                         duration_s=float(rng.integers(1, 50)), dependencies=deps))
    return requests


class TestTopology:
    def test_shorthand(self):
        nodes = parse_topology("4x8")
        assert [n.id for n in nodes] == ["node-1", "node-2", "node-3", "node-4"]
        assert {n.vcpu_capacity for n in nodes} == {8}

    @pytest.mark.parametrize("spec", ["4", "x8", "0x8", "4x0", "four-by-eight"])
    def test_bad_shorthand(self, spec):
        with pytest.raises(MalformedDocument):
            parse_topology(spec)

    def test_file(self, tmp_path):
        path = tmp_path / "cluster.json"
        path.write_text(json.dumps([{"id": "big", "vcpu_capacity": 16}, {"id": "small", "vcpu_capacity": 2}]))
        assert [n.vcpu_capacity for n in resolve_topology(str(path))] == [16, 2]

    def test_duplicate_node_ids(self, tmp_path):
        path = tmp_path / "cluster.json"
        path.write_text(json.dumps([{"id": "a", "vcpu_capacity": 4}, {"id": "a", "vcpu_capacity": 4}]))
        with pytest.raises(MalformedDocument):
            load_topology(path)

    def test_over_allocated_node(self):
        with pytest.raises(ValueError):
            Node(id="a", vcpu_capacity=4, allocated=5)


class TestSimulate:
    def test_eight_uniform_on_four_nodes(self, eight_uniform):
        assert simulate(parse_topology("4x8"), eight_uniform).makespan_s == 100

    def test_eight_uniform_on_one_node(self, eight_uniform):
        assert simulate(parse_topology("1x8"), eight_uniform).makespan_s == 400

    def test_speedup(self, eight_uniform):
        assert speedup(parse_topology("4x8"), parse_topology("1x8"), eight_uniform) == 4.0

    def test_single_task_speedup(self):
        only = [ContainerRequest(task_id="sta", vcpus=4, duration_s=14)]
        assert speedup(parse_topology("4x8"), parse_topology("1x8"), only) == 1.0

    def test_chain(self):
        chain = [
            ContainerRequest(task_id="place", vcpus=4, duration_s=70),
            ContainerRequest(task_id="route", vcpus=8, duration_s=378, dependencies=("place",)),
            ContainerRequest(task_id="sta", vcpus=1, duration_s=19, dependencies=("route",)),
        ]
        result = simulate(parse_topology("4x8"), chain)
        assert result.makespan_s == 467
        started = {e.task_id: e.time_s for e in result.events if e.kind is EventKind.STARTED}
        assert started == {"place": 0, "route": 70, "sta": 448}

    def test_largest_first_placement(self):
        requests = [ContainerRequest(task_id="a", vcpus=2, duration_s=5),
                    ContainerRequest(task_id="b", vcpus=8, duration_s=5)]
        result = simulate([Node(id="n1", vcpu_capacity=8), Node(id="n2", vcpu_capacity=8)], requests)
        assert result.placements == {"b": "n1", "a": "n2"}

    def test_blocked_reported_once(self):
        requests = [ContainerRequest(task_id=f"t{i}", vcpus=4, duration_s=10) for i in range(3)]
        result = simulate(parse_topology("1x8"), requests)
        blocked = [e for e in result.events if e.kind is EventKind.BLOCKED]
        assert [(e.task_id, e.time_s) for e in blocked] == [("t2", 0.0)]
        assert result.makespan_s == 20

    def test_pre_allocated_capacity(self):
        nodes = [Node(id="n1", vcpu_capacity=8, allocated=4)]
        requests = [ContainerRequest(task_id=f"t{i}", vcpus=4, duration_s=10) for i in range(2)]
        assert simulate(nodes, requests).makespan_s == 20

    def test_unschedulable(self):
        with pytest.raises(UnschedulableRequest):
            simulate(parse_topology("4x8"), [ContainerRequest(task_id="wide", vcpus=16, duration_s=1)])

    def test_cycle(self):
        requests = [ContainerRequest(task_id="a", vcpus=1, duration_s=1, dependencies=("b",)),
                    ContainerRequest(task_id="b", vcpus=1, duration_s=1, dependencies=("a",))]
        with pytest.raises(CyclicDependencies):
            simulate(parse_topology("1x8"), requests)

    def test_unknown_dependency(self):
        with pytest.raises(CyclicDependencies):
            simulate(parse_topology("1x8"), [ContainerRequest(task_id="a", vcpus=1, duration_s=1,
                                                              dependencies=("ghost",))])

    def test_empty_workload(self):
        assert simulate(parse_topology("2x4"), []).makespan_s == 0.0

    def test_events_ordered(self, eight_uniform):
        result = simulate(parse_topology("2x8"), eight_uniform)
        keys = [e.sort_key() for e in result.events]
        assert keys == sorted(keys)
        by_task = defaultdict(list)
        for event in result.events:
            by_task[event.task_id].append(event)
        for events in by_task.values():
            submitted, started, finished = (next(e for e in events if e.kind is k)
                                            for k in (EventKind.SUBMITTED, EventKind.STARTED, EventKind.FINISHED))
            assert submitted.time_s <= started.time_s < finished.time_s
            assert started.node_id == finished.node_id

    def test_random_dags_respect_bounds(self):
        rng = np.random.default_rng(17)
        for case in range(100):
            nodes = parse_topology(["1x8", "2x8", "4x8"][case % 3])
            requests = random_dag(rng, int(rng.integers(1, 15)))
            result = simulate(nodes, requests)
            assert result.makespan_s >= critical_path_s(requests) - 1e-9
            assert result.makespan_s >= work_bound_s(nodes, requests) - 1e-9
            finished = {e.task_id: e.time_s for e in result.events if e.kind is EventKind.FINISHED}
            started = {e.task_id: e.time_s for e in result.events if e.kind is EventKind.STARTED}
            assert set(finished) == {r.task_id for r in requests}
            for request in requests:
                for dep in request.dependencies:
                    assert started[request.task_id] >= finished[dep]

    def test_random_dags_never_overcommit(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            nodes = parse_topology("2x8")
            requests = random_dag(rng, 12)
            vcpus = {r.task_id: r.vcpus for r in requests}
            usage = defaultdict(int)
            for event in simulate(nodes, requests).events:
                if event.kind is EventKind.STARTED:
                    usage[event.node_id] += vcpus[event.task_id]
                    assert usage[event.node_id] <= 8
                elif event.kind is EventKind.FINISHED:
                    usage[event.node_id] -= vcpus[event.task_id]


class TestEventFiles:
    def test_jsonl(self, eight_uniform, tmp_path):
        result = simulate(parse_topology("4x8"), eight_uniform)
        path = write_events_jsonl(result.events, tmp_path / "events.jsonl")
        lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        assert len(lines) == 24
        assert lines[0] == {"kind": "submitted", "task_id": "t1", "time_s": 0.0}

    def test_malformed_requests(self, tmp_path):
        path = tmp_path / "tasks.json"
        path.write_text('[{"task_id": "a", "vcpus": 0, "duration_s": 1}]')
        with pytest.raises(MalformedDocument):
            load_requests(path)


class TestSimulatedClusterExecutor:
    def test_submit_poll_collect(self, eight_uniform):
        executor = SimulatedClusterExecutor(parse_topology("4x8"))
        threads = [threading.Thread(target=executor.submit, args=(r,)) for r in eight_uniform]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert executor.poll("t3") is EventKind.SUBMITTED
        events = executor.collect()
        assert executor.poll("t3") is EventKind.FINISHED
        assert events == simulate(parse_topology("4x8"), eight_uniform).events
        assert executor.result().makespan_s == 100

    def test_duplicate_submission(self, eight_uniform):
        executor = SimulatedClusterExecutor(parse_topology("4x8"))
        executor.submit(eight_uniform[0])
        with pytest.raises(ValueError):
            executor.submit(eight_uniform[0])

    def test_unknown_task(self):
        with pytest.raises(LookupError):
            SimulatedClusterExecutor(parse_topology("1x8")).poll("missing")
