"""
Tests for stage costing and deadline-constrained vCPU allocation.

The measured picorv32 fixture lists placement, routing and STA runtimes with
their billed costs at 1, 2, 4 and 8 vCPUs.
"""

import json

import numpy as np
import pytest

from edaflow.errors import BudgetTooLarge, EmptyOptions, Infeasible, MalformedDocument, TooLarge
from edaflow.models.flow import StageKind
from edaflow.services.allocator import (
    ConfigOption,
    Objective,
    PriceList,
    brute_force_allocate,
    build_options,
    cheapest_single_stage,
    combination_count,
    load_options,
    mckp_allocate,
    runtime_table,
    stage_cost,
)

# stage -> {vcpus: (runtime_s, cost)}
MEASURED = {
    "placement": {1: (346, 3.728), 2: (172, 3.471), 4: (70, 2.176), 8: (65, 3.282)},
    "routing": {1: (1966, 21.193), 2: (1110, 22.418), 4: (414, 12.880), 8: (378, 19.082)},
    "sta": {1: (19, 0.205), 2: (16, 0.323), 4: (14, 0.435), 8: (12, 0.606)},
}


def random_instance(rng: np.random.Generator):
    stages = int(rng.integers(1, 7))
    options = []
    for i in range(stages):
        k = int(rng.integers(1, 6))
        vcpus = sorted(rng.choice([1, 2, 4, 8, 16, 32], size=k, replace=False).tolist())
        options.append([
            ConfigOption(stage_index=i, vcpus=v, runtime_s=float(rng.uniform(1, 1000)),
                         cost=float(rng.uniform(0.1, 100)))
            for v in vcpus
        ])
    lo = sum(min(o.runtime_s for o in row) for row in options)
    hi = sum(max(o.runtime_s for o in row) for row in options)
    budget = float(rng.uniform(0.8 * lo, 1.1 * hi))
    return options, budget


class TestStageCost:
    @pytest.mark.parametrize("stage", sorted(MEASURED))
    @pytest.mark.parametrize("vcpus", [1, 2, 4, 8])
    def test_measured_cells(self, price_list, stage, vcpus):
        runtime, cost = MEASURED[stage][vcpus]
        rate = price_list.rate(vcpus)
        # Measured runtimes are whole seconds; allow one second of billing on top of rounding.
        assert stage_cost(rate, runtime) == pytest.approx(cost, abs=0.005 + rate / 3600)

    def test_reference_cells_exact(self):
        assert stage_cost(38.790, 346) == pytest.approx(3.728, abs=0.001)
        assert stage_cost(111.920, 70) == pytest.approx(2.176, abs=0.001)

    def test_unit_case(self):
        assert stage_cost(3600.0, 1.0) == 1.0

    def test_non_positive(self):
        with pytest.raises(ValueError):
            stage_cost(0.0, 10.0)


class TestPriceList:
    def test_default_rates(self, price_list):
        assert price_list.currency == "CNY"
        assert price_list.entries == {1: 38.790, 2: 72.650, 4: 111.920, 8: 181.750}

    def test_unknown_vcpus(self, price_list):
        with pytest.raises(LookupError):
            price_list.rate(16)

    def test_rates_positive(self):
        with pytest.raises(ValueError):
            PriceList(currency="CNY", entries={1: 0.0})


class TestOptions:
    def test_fixture_loads(self, measured_options):
        assert [len(row) for row in measured_options] == [4, 4, 4]
        assert measured_options[1][2].stage is StageKind.ROUTING
        assert measured_options[1][2].cost == 12.880

    def test_missing_cost_from_price_list(self, tmp_path, price_list):
        path = tmp_path / "options.json"
        path.write_text(json.dumps({"stages": [{"stage": "sta", "options": [{"vcpus": 4, "runtime_s": 36}]}]}))
        (option,) = load_options(path, price_list)[0]
        assert option.cost == pytest.approx(111.92 * 36 / 3600, rel=1e-9)

    @pytest.mark.parametrize("text", ["{", '{"stages": []}', '{"stages": [{"options": [{"vcpus": 1}]}]}'])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "options.json"
        path.write_text(text)
        with pytest.raises(MalformedDocument):
            load_options(path)

    def test_build_from_runtime_table(self, measured_options, price_list):
        table = runtime_table(measured_options)
        rebuilt = build_options(table, price_list)
        assert [o.vcpus for o in rebuilt[0]] == [1, 2, 4, 8]
        for row in rebuilt:
            for option in row:
                assert option.cost == pytest.approx(
                    price_list.rate(option.vcpus) * option.runtime_s / 3600, rel=1e-9)


class TestCheapestSingleStage:
    def test_placement_prefers_four(self, measured_options):
        best = cheapest_single_stage(measured_options[0])
        assert (best.vcpus, best.cost) == (4, 2.176)

    def test_single_option(self):
        only = ConfigOption(stage_index=0, vcpus=2, runtime_s=5, cost=1.0)
        assert cheapest_single_stage([only]) == only

    def test_tie_prefers_fewer_vcpus(self):
        options = [ConfigOption(stage_index=0, vcpus=4, runtime_s=5, cost=1.0),
                   ConfigOption(stage_index=0, vcpus=2, runtime_s=9, cost=1.0)]
        assert cheapest_single_stage(options).vcpus == 2

    def test_empty(self):
        with pytest.raises(EmptyOptions):
            cheapest_single_stage([])


class TestMckpAllocate:
    def test_deadline_480(self, measured_options):
        plan = mckp_allocate(measured_options, 480)
        assert plan.choices == (4, 8, 1)
        assert plan.label() == "(4,8,1)"
        assert plan.total_time_s == 467
        assert plan.total_cost == pytest.approx(21.465, abs=0.01)
        assert plan.total_time_s <= plan.budget_s

    def test_min_cost_agrees(self, measured_options):
        plan = mckp_allocate(measured_options, 480, Objective.MIN_COST)
        assert plan.choices == (4, 8, 1)
        assert plan.objective_value == pytest.approx(-plan.total_cost)

    def test_generous_budget(self, measured_options):
        plan = mckp_allocate(measured_options, 10000)
        assert plan.choices == (4, 4, 1)
        assert plan == brute_force_allocate(measured_options, 10000)

    def test_infeasible(self, measured_options):
        with pytest.raises(Infeasible) as excinfo:
            mckp_allocate(measured_options, 400)
        assert excinfo.value.min_total_time_s == 455
        assert excinfo.value.budget_s == 400

    def test_single_stage_reduction(self, measured_options):
        routing = [measured_options[1]]
        plan = mckp_allocate(routing, 5000)
        assert plan.selected == (cheapest_single_stage(measured_options[1]),)

    def test_fractional_runtime_uses_whole_seconds(self):
        options = [[ConfigOption(stage_index=0, vcpus=1, runtime_s=10.2, cost=1.0)]]
        with pytest.raises(Infeasible):
            mckp_allocate(options, 10.5)
        assert mckp_allocate(options, 11).total_time_s == 10.2

    def test_budget_guardrail(self, measured_options):
        with pytest.raises(BudgetTooLarge):
            mckp_allocate(measured_options, 2e6)

    def test_empty_stage(self):
        with pytest.raises(EmptyOptions):
            mckp_allocate([[]], 10)

    def test_budget_monotone(self, measured_options):
        values = [mckp_allocate(measured_options, b).objective_value for b in range(455, 2400, 50)]
        assert values == sorted(values)

    def test_cost_scaling_keeps_choice(self, measured_options):
        scaled = [[o.model_copy(update={"cost": o.cost * 2.0}) for o in row] for row in measured_options]
        plan, plan2 = mckp_allocate(measured_options, 900), mckp_allocate(scaled, 900)
        assert plan.choices == plan2.choices
        assert plan2.objective_value == plan.objective_value / 2.0


class TestBruteForceAllocate:
    def test_agrees_on_fixture(self, measured_options):
        assert brute_force_allocate(measured_options, 480) == mckp_allocate(measured_options, 480)

    def test_single_option(self):
        option = ConfigOption(stage_index=0, vcpus=1, runtime_s=3, cost=2.0)
        assert brute_force_allocate([[option]], 5).selected == (option,)

    def test_infeasible(self, measured_options):
        with pytest.raises(Infeasible):
            brute_force_allocate(measured_options, 400)

    def test_combination_limit(self):
        row = [ConfigOption(stage_index=0, vcpus=v, runtime_s=1, cost=1.0) for v in range(1, 11)]
        assert combination_count([row] * 6) == 10 ** 6
        with pytest.raises(TooLarge):
            combination_count([row] * 7)

    def test_random_instances_match_dp(self):
        rng = np.random.default_rng(2024)
        infeasible = 0
        for _ in range(200):
            options, budget = random_instance(rng)
            try:
                expected = brute_force_allocate(options, budget)
            except Infeasible:
                infeasible += 1
                with pytest.raises(Infeasible):
                    mckp_allocate(options, budget)
                continue
            plan = mckp_allocate(options, budget)
            assert plan.objective_value == expected.objective_value
            assert plan.total_time_s <= budget
        assert infeasible < 200
