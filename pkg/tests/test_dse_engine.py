"""
Tests for design space exploration and fault-list remediation.
"""

import statistics

import numpy as np
import pandas as pd
import pytest

from edaflow.errors import AllTrialsFailed, UnremediableFault
from edaflow.models.flow import MachineConfig, StageKind, ppa_improvement
from edaflow.services.dse_engine import (
    NO_RULE_MATCHED,
    AnnealSearch,
    DimKind,
    FaultRule,
    ParamDim,
    ParamSpace,
    RandomSearch,
    Remedy,
    RemedyKind,
    Trial,
    best_so_far,
    default_space,
    load_fault_rules,
    propose,
    remediate_space,
    run_dse,
    save_report_json,
)
from edaflow.services.eda_adapter import DENSITY, UTILIZATION, FlowEvaluation, FlowEvaluator
from edaflow.utils.csv_processor import TRIAL_COLUMNS, save_trials_csv

SHRINK_DENSITY = FaultRule(fault_code="PARAM_RANGE", match="placement_density",
                           remedy=Remedy(kind=RemedyKind.SHRINK_RANGE, dim=DENSITY, factor=0.5))
ABORT = FaultRule(fault_code="PARAM_RANGE", remedy=Remedy(kind=RemedyKind.ABORT))


@pytest.fixture
def evaluator(picorv32_job, mock_backend):
    job = picorv32_job.model_copy(update={"stages": (StageKind.STA,)})
    return FlowEvaluator(mock_backend, job, MachineConfig(vcpus=4, rate_per_hour=111.92))


@pytest.fixture
def space() -> ParamSpace:
    return default_space()


@pytest.fixture
def wide_density_space() -> ParamSpace:
    return ParamSpace(
        dims=(ParamDim(name=UTILIZATION, lo=0.3, hi=0.9), ParamDim(name=DENSITY, lo=0.2, hi=0.99)),
        defaults={UTILIZATION: 0.5, DENSITY: 0.6},
    )


def failing(params) -> FlowEvaluation:
    return FlowEvaluation(fault_code="PARAM_RANGE",
                          message=f"PARAM_RANGE: placement_density={params[DENSITY]} outside [0.3, 0.95]")


class TestParamSpace:
    def test_default_space_uses_template_defaults(self, space):
        assert space.defaults == {UTILIZATION: 0.5, DENSITY: 0.6}
        assert space.dim(UTILIZATION).lo == 0.3

    def test_default_outside_dim(self):
        with pytest.raises(ValueError):
            ParamSpace(dims=(ParamDim(name="x", lo=0, hi=1),), defaults={"x": 2})

    def test_bounds_required(self):
        with pytest.raises(ValueError):
            ParamDim(name="x", lo=1, hi=1)


class TestPropose:
    def test_random_reproducible(self):
        one_dim = ParamSpace(dims=(ParamDim(name="x", lo=0, hi=10),), defaults={"x": 5})
        draws = [[propose(RandomSearch(), one_dim, [], rng)["x"] for _ in range(5)]
                 for rng in (np.random.default_rng(3), np.random.default_rng(3))]
        assert draws[0] == draws[1]
        assert all(0 <= x <= 10 for x in draws[0])

    def test_random_pins_frozen_dims(self, space):
        frozen = space.freeze(DENSITY)
        rng = np.random.default_rng(0)
        assert all(RandomSearch().propose(frozen, [], rng)[DENSITY] == 0.6 for _ in range(10))

    def test_anneal_late_proposals_stay_close(self, space):
        best = Trial(index=0, params={UTILIZATION: 0.7, DENSITY: 0.7}, objective=1.0,
                     metrics={"cp_delay_ns": 1, "power_mw": 1, "area_um2": 1})
        history = [best] + [Trial(index=i, params=best.params, fault_code="X") for i in range(1, 60)]
        anneal = AnnealSearch()
        assert anneal.temperature(len(history)) < 0.1
        rng = np.random.default_rng(11)
        close = total = 0
        for _ in range(200):
            params = anneal.propose(space, history, rng)
            for dim in space.dims:
                total += 1
                close += abs(params[dim.name] - best.params[dim.name]) <= 0.05 * dim.span
        assert close >= 0.9 * total

    def test_anneal_categorical(self):
        cat = ParamSpace(dims=(ParamDim(name="mode", kind=DimKind.CATEGORICAL, values=("a", "b", "c")),),
                         defaults={"mode": "a"})
        cold = [Trial(index=i, params={"mode": "a"}, fault_code="X") for i in range(400)]
        rng = np.random.default_rng(5)
        assert all(AnnealSearch().propose(cat, cold, rng)["mode"] == "a" for _ in range(50))
        seen = {AnnealSearch().propose(cat, [], rng)["mode"] for _ in range(50)}
        assert seen == {"a", "b", "c"}

    def test_proposals_inside_space(self, space):
        rng = np.random.default_rng(9)
        history = []
        for strategy in (RandomSearch(), AnnealSearch()):
            for _ in range(50):
                assert space.contains(strategy.propose(space, history, rng))


class TestRemediateSpace:
    def test_shrink_centered_on_default(self, wide_density_space):
        space, record = remediate_space(wide_density_space, "PARAM_RANGE", "PARAM_RANGE: placement_density",
                                        [SHRINK_DENSITY])
        dim = space.dim(DENSITY)
        assert (dim.lo, dim.hi) == pytest.approx((0.4025, 0.7975))
        assert record.remedy == "shrink_range"
        assert record.before == (0.2, 0.99)
        assert record.changed

    def test_unmatched(self, space):
        same, record = remediate_space(space, "TIMEOUT", "slow", [SHRINK_DENSITY])
        assert same == space
        assert record.remedy == NO_RULE_MATCHED

    def test_clamp_to_quoted_interval(self, wide_density_space):
        rule = FaultRule(fault_code="PARAM_RANGE", remedy=Remedy(kind=RemedyKind.CLAMP_TO_BOUND, dim=DENSITY))
        space, _ = remediate_space(wide_density_space, "PARAM_RANGE",
                                   "PARAM_RANGE: placement_density=0.99 outside [0.3, 0.95]", [rule])
        assert (space.dim(DENSITY).lo, space.dim(DENSITY).hi) == (0.3, 0.95)
        again, record = remediate_space(space, "PARAM_RANGE", "outside [0.3, 0.95]", [rule])
        assert again == space
        assert not record.changed

    def test_reset_to_default_freezes(self, space):
        rule = FaultRule(fault_code="TIMEOUT", remedy=Remedy(kind=RemedyKind.RESET_TO_DEFAULT, dim=DENSITY))
        frozen, _ = remediate_space(space, "TIMEOUT", "TIMEOUT: routing", [rule])
        assert frozen.frozen == (DENSITY,)

    def test_shipped_fault_list(self):
        kinds = {rule.fault_code: rule.remedy.kind for rule in load_fault_rules()}
        assert kinds["TOOL_CRASH"] is RemedyKind.ABORT
        assert "PARAM_RANGE" in kinds and "TIMEOUT" in kinds


class TestRunDse:
    def test_defaults_only(self, space, evaluator):
        report = run_dse(space, evaluator, budget=1, seed=0)
        assert report.best_params == space.defaults
        assert report.improvement == 0.0
        assert report.improvement_pct == "0.00%"

    def test_random_search_improves(self, space, evaluator):
        report = run_dse(space, evaluator, budget=64, strategy="random", seed=1)
        assert report.improvement >= 0.05
        assert len(report.trials) == 64
        assert report.trials[0].params == space.defaults

    def test_median_improvement_over_seeds(self, space, evaluator):
        improvements = []
        for seed in range(10):
            report = run_dse(space, evaluator, budget=64, seed=seed)
            curve = best_so_far(report.trials)
            assert curve == sorted(curve, reverse=True)
            improvements.append(report.improvement)
        assert statistics.median(improvements) >= 0.05

    def test_report_consistency(self, space, evaluator):
        report = run_dse(space, evaluator, budget=32, strategy="anneal", seed=4)
        best = min((t for t in report.trials if t.ok), key=lambda t: t.objective)
        assert report.best_index == best.index
        assert report.improvement == ppa_improvement(report.trials[0].metrics, best.metrics)
        assert all(space.contains(t.params) for t in report.trials)

    def test_seed_determinism(self, space, evaluator):
        assert run_dse(space, evaluator, 20, "anneal", 3) == run_dse(space, evaluator, 20, "anneal", 3)

    def test_parallel_random_matches_sequential(self, space, evaluator):
        sequential = run_dse(space, evaluator, 24, "random", 8)
        parallel = run_dse(space, evaluator, 24, "random", 8, workers=4)
        assert parallel == sequential

    def test_anneal_beats_random_usually(self, space, evaluator):
        wins = 0
        for seed in range(50):
            anneal = run_dse(space, evaluator, 64, "anneal", seed)
            random = run_dse(space, evaluator, 64, "random", seed)
            wins += anneal.trials[anneal.best_index].objective <= random.trials[random.best_index].objective
        assert wins >= 30

    def test_shrink_recovers_from_range_fault(self, wide_density_space, evaluator):
        def strict(params):
            if params[DENSITY] > 0.8:
                return FlowEvaluation(
                    fault_code="PARAM_RANGE",
                    message=f"PARAM_RANGE: placement_density={params[DENSITY]} outside [0.2, 0.8]")
            return evaluator(params)

        report = run_dse(wide_density_space, strict, budget=40, seed=2, faults=[SHRINK_DENSITY])
        failed = [t.index for t in report.trials if not t.ok]
        assert failed, "expected at least one out-of-range proposal"
        assert report.trials[failed[0] + 1].ok
        assert report.remediations_applied[0].remedy == "shrink_range"
        assert report.remediations_applied[0].trial_index == failed[0]
        assert report.final_space.dim(DENSITY).hi == pytest.approx(0.7975)

    def test_recurring_fault_unremediable(self, wide_density_space):
        with pytest.raises(UnremediableFault) as excinfo:
            run_dse(wide_density_space, failing, budget=10, seed=0, faults=[SHRINK_DENSITY])
        assert excinfo.value.occurrences == 4
        assert excinfo.value.dim == DENSITY

    def test_abort_rule(self, space):
        with pytest.raises(UnremediableFault):
            run_dse(space, failing, budget=5, faults=[ABORT])

    def test_all_trials_failed(self, space):
        with pytest.raises(AllTrialsFailed):
            run_dse(space, failing, budget=3, faults=[])

    def test_bad_budget(self, space, evaluator):
        with pytest.raises(ValueError):
            run_dse(space, evaluator, budget=0)


class TestReportFiles:
    def test_json_and_csv(self, space, evaluator, tmp_path):
        report = run_dse(space, evaluator, budget=8, seed=0)
        assert save_report_json(report, tmp_path / "dse.json").exists()
        frame = pd.read_csv(save_trials_csv(report.trials, tmp_path / "trials.csv"))
        assert list(frame.columns) == TRIAL_COLUMNS
        assert list(frame["trial_index"]) == list(range(8))
        assert frame["best_so_far"].is_monotonic_decreasing
