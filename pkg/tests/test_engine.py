"""Scheduling tables, promotion, and the ask/tell tuning engine."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtptune.engine import (Done, Evaluate, METHODS, Trial, TrialFailure,
                            TrialLedger, TrialResult, TunerSpec, TuningRun,
                            Wait, hyperband_brackets, hyperband_cycle_cost,
                            pick_model_budget, promote, run, sh_schedule)
from mtptune.space import ConfigSpace, ParamSpec


def unit_space():
    return ConfigSpace([ParamSpec("x", "float", lo=0.0, hi=1.0)])


class StubObjective:
    """Budget-aware deterministic loss with a tunable failure region."""

    def __init__(self, fail_above=None, fail_at_budget=None):
        self.fail_above = fail_above
        self.fail_at_budget = fail_at_budget
        self.calls = []

    def evaluate(self, config, budget, resume_from=None):
        self.calls.append((config["x"], budget, resume_from))
        if self.fail_above is not None and config["x"] > self.fail_above:
            raise RuntimeError("bad region")
        if self.fail_at_budget is not None and budget == self.fail_at_budget:
            raise RuntimeError("bad budget")
        loss = config["x"] + 0.1 / budget
        return TrialResult(val_loss=loss, test_metrics={"m": 1 - loss},
                           checkpoint=(config["x"], budget))


class TestSchedules:
    def test_bracket_table_r27(self):
        assert hyperband_brackets(27, 3) == \
            [(3, 27, 1), (2, 12, 3), (1, 6, 9), (0, 4, 27)]

    def test_bracket_table_r9(self):
        assert hyperband_brackets(9, 3) == [(2, 9, 1), (1, 5, 3), (0, 3, 9)]

    def test_degenerate_single_bracket(self):
        assert hyperband_brackets(1, 3) == [(0, 1, 1)]

    def test_bracket_table_eta2(self):
        assert hyperband_brackets(4, 2) == [(2, 4, 1), (1, 3, 2), (0, 3, 4)]

    def test_halving_schedule(self):
        assert sh_schedule(9, 1, 3, 9) == [(9, 1), (3, 3), (1, 9)]
        assert sh_schedule(27, 1, 3, 27) == [(27, 1), (9, 3), (3, 9), (1, 27)]

    def test_halving_stops_at_single_survivor(self):
        assert sh_schedule(2, 1, 3, 27) == [(2, 1), (1, 3)]

    def test_halving_stops_at_budget_cap(self):
        assert sh_schedule(9, 9, 3, 9) == [(9, 9)]

    def test_cycle_cost(self):
        assert hyperband_cycle_cost(27, 3) == 357

    def test_cycle_cost_counts_resume_deltas(self):
        # single bracket [(3,1),(1,3)]: 3*1 + 1*(3-1), plus bracket [(2,3)]
        assert hyperband_cycle_cost(3, 3) == 5 + 6


class TestPromote:
    def test_keeps_best_third(self):
        results = [(0, 0.9), (1, 0.1), (2, 0.5), (3, 0.2), (4, 0.8), (5, 0.3)]
        assert promote(results, 3) == [1, 3]

    def test_keeps_at_least_one(self):
        assert promote([(7, 0.4), (8, 0.2)], 3) == [8]

    def test_failed_trials_rank_last(self):
        results = [(0, None), (1, math.inf), (2, 0.9), (3, math.nan)]
        assert promote(results, 2) == [2, 0]

    def test_ties_break_toward_lower_id(self):
        assert promote([(5, 0.2), (3, 0.2), (4, 0.1)], 3) == [4]
        assert promote([(5, 0.2), (3, 0.2)], 2) == [3]

    def test_validation(self):
        with pytest.raises(ValueError):
            promote([], 3)
        with pytest.raises(ValueError):
            promote([(0, 0.1)], 1)

    @given(st.lists(st.one_of(st.floats(0, 1), st.none()),
                    min_size=1, max_size=12),
           st.integers(2, 4))
    @settings(max_examples=200, deadline=None)
    def test_matches_sorting_oracle(self, losses, eta):
        results = list(enumerate(losses))
        keep = max(len(results) // eta, 1)
        ranked = sorted(results,
                        key=lambda e: (math.inf if e[1] is None else e[1], e[0]))
        assert promote(results, eta) == [tid for tid, _ in ranked[:keep]]


class TestPickModelBudget:
    def test_largest_sufficient_level(self):
        assert pick_model_budget({1: 5, 3: 4, 9: 2}, 3) == 3
        assert pick_model_budget({1: 5, 3: 4, 9: 2}, 2) == 9

    def test_none_when_everything_sparse(self):
        assert pick_model_budget({1: 2}, 3) is None
        assert pick_model_budget({}, 1) is None


class TestTunerSpec:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            TunerSpec(method="genetic")
        with pytest.raises(ValueError):
            TunerSpec(method="random", eta=1)
        with pytest.raises(ValueError):
            TunerSpec(method="random", max_budget=0)
        with pytest.raises(ValueError):
            TunerSpec(method="bohb", gamma=1.0)
        with pytest.raises(ValueError):
            TunerSpec(method="bohb", random_fraction=1.5)
        with pytest.raises(ValueError):
            TunerSpec(method="random", total_budget=0)

    def test_default_budget_is_one_cycle(self):
        spec = TunerSpec(method="hyperband", max_budget=27, eta=3)
        assert spec.effective_total_budget() == 357

    def test_double_budget_variant(self):
        spec = TunerSpec(method="random_2x", max_budget=27, eta=3)
        assert spec.effective_total_budget() == 2 * 357
        spec = TunerSpec(method="random_2x", total_budget=50)
        assert spec.effective_total_budget() == 100

    def test_method_registry(self):
        assert METHODS == ("random", "random_2x", "hyperband", "bohb", "smac")


class TestRandomSearch:
    def test_full_budget_at_max_fidelity(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=10, seed=1)
        result = run(spec, unit_space(), StubObjective())
        assert len(result.ledger.trials) == 5
        assert all(t.budget == 2 for t in result.ledger.trials)
        assert all(t.status == "completed" for t in result.ledger.trials)

    def test_budget_overshoot_is_one_trial_at_most(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=3, seed=1)
        result = run(spec, unit_space(), StubObjective())
        assert len(result.ledger.trials) == 2

    def test_incumbent_is_best_completed(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=20, seed=3)
        result = run(spec, unit_space(), StubObjective())
        best = min(t.val_loss for t in result.ledger.completed())
        assert result.incumbent.val_loss == best

    def test_trajectory_monotone_and_carried_to_end(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=20, seed=3)
        result = run(spec, unit_space(), StubObjective())
        losses = [p.val_loss for p in result.trajectory]
        times = [p.time for p in result.trajectory]
        assert losses == sorted(losses, reverse=True)
        assert times == sorted(times)
        assert times[-1] == 20.0

    def test_double_variant_runs_twice_as_many(self):
        r1 = run(TunerSpec(method="random", max_budget=2, total_budget=10, seed=1),
                 unit_space(), StubObjective())
        r2 = run(TunerSpec(method="random_2x", max_budget=2, total_budget=10, seed=1),
                 unit_space(), StubObjective())
        assert len(r2.ledger.trials) == 2 * len(r1.ledger.trials)
        # the first half of the sample stream is shared
        firsts = [t.config for t in r2.ledger.trials[:5]]
        assert firsts == [t.config for t in r1.ledger.trials]

    def test_seed_determinism(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=10, seed=7)
        a = run(spec, unit_space(), StubObjective())
        b = run(spec, unit_space(), StubObjective())
        assert [t.config for t in a.ledger.trials] == \
            [t.config for t in b.ledger.trials]


class TestBracketRuns:
    def test_trial_count_and_exact_budget(self):
        # brackets (9,1),(5,3),(3,9): 13 + 6 + 3 evaluations, 69 epochs
        spec = TunerSpec(method="hyperband", max_budget=9, eta=3, seed=0)
        result = run(spec, unit_space(), StubObjective())
        assert spec.effective_total_budget() == 69
        assert len(result.ledger.trials) == 22
        assert sum(t.committed_epochs for t in result.ledger.trials) == 69

    def test_resumes_charge_budget_delta(self):
        spec = TunerSpec(method="hyperband", max_budget=9, eta=3, seed=0)
        result = run(spec, unit_space(), StubObjective())
        by_id = {t.id: t for t in result.ledger.trials}
        resumed = [t for t in result.ledger.trials if t.parent_id is not None]
        assert resumed
        for t in resumed:
            parent = by_id[t.parent_id]
            assert t.committed_epochs == t.budget - parent.budget
            assert t.config == parent.config

    def test_survivors_are_rungwise_best(self):
        spec = TunerSpec(method="hyperband", max_budget=9, eta=3, seed=0)
        result = run(spec, unit_space(), StubObjective())
        bracket = result.brackets[0]
        assert bracket.rungs == ((9, 1), (3, 3), (1, 9))
        rung0 = result.ledger.trials[:9]
        expect = promote([(t.id, t.val_loss) for t in rung0], 3)
        assert list(bracket.survivors[0]) == expect

    def test_resumed_evaluations_receive_parent_checkpoint(self):
        spec = TunerSpec(method="hyperband", max_budget=9, eta=3, seed=0)
        obj = StubObjective()
        run(spec, unit_space(), obj)
        resumed = [c for c in obj.calls if c[2] is not None]
        assert resumed
        for x, budget, ckpt in resumed:
            assert ckpt[0] == x and ckpt[1] < budget

    def test_bohb_all_random_matches_hyperband_configs(self):
        # with the model switched off both draw the same sampling stream
        hb = run(TunerSpec(method="hyperband", max_budget=9, eta=3, seed=5),
                 unit_space(), StubObjective())
        bo = run(TunerSpec(method="bohb", max_budget=9, eta=3, seed=5,
                           random_fraction=1.0),
                 unit_space(), StubObjective())
        assert [t.config for t in bo.ledger.trials] == \
            [t.config for t in hb.ledger.trials]

    def test_bohb_model_proposals_deviate_from_random(self):
        spec = TunerSpec(method="bohb", max_budget=9, eta=3, seed=5,
                         random_fraction=0.0, total_budget=200)
        bo = run(spec, unit_space(), StubObjective())
        hb = run(TunerSpec(method="hyperband", max_budget=9, eta=3, seed=5,
                           total_budget=200),
                 unit_space(), StubObjective())
        bo_fresh = [t.config["x"] for t in bo.ledger.trials if t.parent_id is None]
        hb_fresh = [t.config["x"] for t in hb.ledger.trials if t.parent_id is None]
        assert bo_fresh != hb_fresh
        # the density model concentrates proposals near the optimum at x=0
        assert np.median(bo_fresh[9:]) < np.median(hb_fresh[9:])

    def test_bohb_determinism(self):
        spec = TunerSpec(method="bohb", max_budget=9, eta=3, seed=2,
                         random_fraction=0.3)
        a = run(spec, unit_space(), StubObjective())
        b = run(spec, unit_space(), StubObjective())
        assert [t.config for t in a.ledger.trials] == \
            [t.config for t in b.ledger.trials]


class TestFailures:
    def test_failed_trials_do_not_abort(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=20, seed=3)
        result = run(spec, unit_space(), StubObjective(fail_above=0.5))
        statuses = {t.status for t in result.ledger.trials}
        assert "failed" in statuses and "completed" in statuses
        failed = [t for t in result.ledger.trials if t.status == "failed"]
        assert all(t.val_loss is None for t in failed)
        assert result.incumbent.val_loss == \
            min(t.val_loss for t in result.ledger.completed())

    def test_nonfinite_loss_counts_as_failure(self):
        class NanObjective:
            def evaluate(self, config, budget, resume_from=None):
                return TrialResult(val_loss=math.nan, test_metrics={})

        spec = TunerSpec(method="random", max_budget=2, total_budget=4, seed=0)
        result = run(spec, unit_space(), NanObjective())
        assert all(t.status == "failed" for t in result.ledger.trials)
        assert result.incumbent is None and result.trajectory == []

    def test_failed_survivor_restarts_from_scratch(self):
        # every rung-0 evaluation fails, so the promoted trial has no
        # checkpoint and its continuation starts fresh at the higher budget
        spec = TunerSpec(method="hyperband", max_budget=9, eta=3, seed=1)
        result = run(spec, unit_space(), StubObjective(fail_at_budget=1))
        rung1 = [t for t in result.ledger.trials if t.budget == 3]
        assert rung1
        for t in rung1:
            assert t.parent_id is None
            assert t.committed_epochs == 3


class TestAskTell:
    def test_manual_protocol_and_accounting(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=4,
                         seed=0, parallelism=2)
        state = TuningRun(spec, unit_space())
        ev1 = state.ask()
        ev2 = state.ask()
        assert isinstance(ev1, Evaluate) and isinstance(ev2, Evaluate)
        assert state.committed == 4 and state.consumed == 0
        assert isinstance(state.ask(), Wait)
        state.tell(ev2.trial_id, TrialResult(val_loss=0.5, test_metrics={}))
        assert state.consumed == 2
        state.tell(ev1.trial_id, TrialResult(val_loss=0.3, test_metrics={}))
        assert state.consumed == 4
        assert isinstance(state.ask(), Done)
        assert isinstance(state.ask(), Done)
        times = [p.time for p in state.trajectory]
        assert times == [2.0, 4.0]

    def test_done_waits_for_outstanding(self):
        spec = TunerSpec(method="random", max_budget=4, total_budget=4,
                         seed=0, parallelism=2)
        state = TuningRun(spec, unit_space())
        ev = state.ask()
        assert isinstance(state.ask(), Wait)  # budget exhausted, one running
        state.tell(ev.trial_id, TrialResult(val_loss=0.1, test_metrics={}))
        assert isinstance(state.ask(), Done)

    def test_tell_unknown_trial_raises(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=4, seed=0)
        state = TuningRun(spec, unit_space())
        with pytest.raises(KeyError):
            state.tell(99, TrialResult(val_loss=0.1, test_metrics={}))

    def test_tell_same_trial_twice_raises(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=4, seed=0)
        state = TuningRun(spec, unit_space())
        ev = state.ask()
        state.tell(ev.trial_id, TrialResult(val_loss=0.1, test_metrics={}))
        with pytest.raises(KeyError):
            state.tell(ev.trial_id, TrialResult(val_loss=0.1, test_metrics={}))

    def test_explicit_failure_outcome(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=4, seed=0)
        state = TuningRun(spec, unit_space())
        ev = state.ask()
        state.tell(ev.trial_id, TrialFailure(message="boom"))
        assert state.trials[ev.trial_id].status == "failed"


class TestSmac:
    def test_warmup_uses_raw_sample_stream(self):
        spec = TunerSpec(method="smac", max_budget=2, total_budget=12,
                         seed=9, n_init=3)
        result = run(spec, unit_space(), StubObjective())
        assert len(result.ledger.trials) == 6
        rng = np.random.default_rng((9, 1))
        space = unit_space()
        expected = [space.sample(rng) for _ in range(3)]
        assert [t.config for t in result.ledger.trials[:3]] == expected

    def test_model_phase_stays_in_bounds_and_is_deterministic(self):
        spec = TunerSpec(method="smac", max_budget=2, total_budget=16,
                         seed=9, n_init=3)
        a = run(spec, unit_space(), StubObjective())
        b = run(spec, unit_space(), StubObjective())
        assert [t.config for t in a.ledger.trials] == \
            [t.config for t in b.ledger.trials]
        assert all(0.0 <= t.config["x"] <= 1.0 for t in a.ledger.trials)


class TestLedgerSerialization:
    def test_jsonl_round_trip(self, tmp_path):
        spec = TunerSpec(method="hyperband", max_budget=9, eta=3, seed=0)
        result = run(spec, unit_space(), StubObjective(fail_above=0.9))
        path = tmp_path / "ledger.jsonl"
        result.ledger.to_jsonl(str(path))
        loaded = TrialLedger.from_jsonl(str(path))
        assert loaded.metadata == result.ledger.metadata
        assert len(loaded.trials) == len(result.ledger.trials)
        for got, want in zip(loaded.trials, result.ledger.trials):
            assert got.id == want.id
            assert got.config == want.config
            assert got.budget == want.budget
            assert got.status == want.status
            assert got.val_loss == want.val_loss
            assert got.test_metrics == want.test_metrics
            assert got.parent_id == want.parent_id

    def test_metadata_is_first_line(self, tmp_path):
        spec = TunerSpec(method="random", max_budget=2, total_budget=4, seed=0)
        result = run(spec, unit_space(), StubObjective())
        path = tmp_path / "ledger.jsonl"
        result.ledger.to_jsonl(str(path))
        with open(path) as fh:
            first = json.loads(fh.readline())
        assert first["method"] == "random"
        assert first["total_budget"] == 4
        assert first["parallelism"] == 1

    def test_timing_hidden_unless_requested(self, tmp_path):
        spec = TunerSpec(method="random", max_budget=2, total_budget=4, seed=0)
        result = run(spec, unit_space(), StubObjective())
        plain = tmp_path / "plain.jsonl"
        timed = tmp_path / "timed.jsonl"
        result.ledger.to_jsonl(str(plain))
        result.ledger.to_jsonl(str(timed), record_timing=True)
        with open(plain) as fh:
            rows = [json.loads(line) for line in fh][1:]
        assert all(r["wall_clock_s"] is None for r in rows)
        with open(timed) as fh:
            rows = [json.loads(line) for line in fh][1:]
        assert all(isinstance(r["wall_clock_s"], float) for r in rows)

    def test_identical_seeds_serialize_identically(self, tmp_path):
        spec = TunerSpec(method="bohb", max_budget=9, eta=3, seed=4)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run(spec, unit_space(), StubObjective()).ledger.to_jsonl(str(p1))
        run(spec, unit_space(), StubObjective()).ledger.to_jsonl(str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValueError):
            TrialLedger.from_jsonl(str(path))


class TestParallelRuns:
    def test_threaded_run_matches_serial_ledger(self):
        serial = run(TunerSpec(method="hyperband", max_budget=9, eta=3, seed=6),
                     unit_space(), StubObjective())
        threaded = run(TunerSpec(method="hyperband", max_budget=9, eta=3,
                                 seed=6, parallelism=3),
                       unit_space(), StubObjective())
        assert [(t.config, t.budget, t.parent_id)
                for t in threaded.ledger.trials] == \
            [(t.config, t.budget, t.parent_id) for t in serial.ledger.trials]
        assert threaded.incumbent.val_loss == serial.incumbent.val_loss

    def test_threaded_random_consumes_full_budget(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=10,
                         seed=6, parallelism=4)
        result = run(spec, unit_space(), StubObjective())
        assert sum(t.committed_epochs for t in result.ledger.trials) == 10
        assert all(t.status == "completed" for t in result.ledger.trials)


class TestRunResultExport:
    def test_trajectory_point_rows(self):
        spec = TunerSpec(method="random", max_budget=2, total_budget=10, seed=3)
        result = run(spec, unit_space(), StubObjective())
        rows = result.trajectory_points("m")
        assert len(rows) == len(result.trajectory)
        for (t, v, m), p in zip(rows, result.trajectory):
            assert t == p.time and v == p.val_loss
            assert m == p.test_metrics["m"]
        missing = result.trajectory_points("absent")
        assert all(math.isnan(m) for _, _, m in missing)
