from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emocall.corpus import Call, Segment, AnnotatorLabels
from emocall.splitting import SplitPlan, assign_folds, holdout_split, materialize


def make_calls(n, segments_each=2):
    calls = []
    for i in range(n):
        call_id = f"call-{i:04d}"
        segs = tuple(
            Segment(
                call_id=call_id,
                segment_id=f"{call_id}-s{j}",
                audio_ref="x.wav",
                start_s=float(j),
                end_s=float(j) + 0.5,
                sample_rate=16000,
                annotations=(AnnotatorLabels("a1", False, frozenset()),),
            )
            for j in range(segments_each)
        )
        calls.append(Call(call_id=call_id, segments=segs))
    return calls


class TestHoldout:
    def test_105_calls_4_to_1(self):
        plan = holdout_split(make_calls(105), (4, 1), seed=7)
        assert len(plan.train_calls) == 84
        assert len(plan.test_calls) == 21
        assert plan.train_calls | plan.test_calls == {c.call_id for c in make_calls(105)}
        assert not plan.train_calls & plan.test_calls

    def test_exact_small_ratio(self):
        plan = holdout_split(make_calls(5), (4, 1), seed=0)
        assert len(plan.train_calls) == 4
        assert len(plan.test_calls) == 1

    def test_deterministic(self):
        a = holdout_split(make_calls(30), (4, 1), seed=3)
        b = holdout_split(make_calls(30), (4, 1), seed=3)
        assert a == b

    def test_seed_changes_assignment(self):
        a = holdout_split(make_calls(30), (4, 1), seed=1)
        b = holdout_split(make_calls(30), (4, 1), seed=2)
        assert a.test_calls != b.test_calls

    def test_fewer_calls_than_ratio_parts(self):
        with pytest.raises(ValueError, match="fewer calls"):
            holdout_split(make_calls(4), (4, 1), seed=0)

    def test_bad_ratio(self):
        with pytest.raises(ValueError, match="positive"):
            holdout_split(make_calls(10), (4, 0), seed=0)

    def test_minimum_one_test_call(self):
        plan = holdout_split(make_calls(9), (8, 1), seed=0)
        assert len(plan.test_calls) == 1

    @given(st.integers(2, 120), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_counts_are_pure_functions_of_inputs(self, n, seed):
        if n < 5:
            return
        a = holdout_split(make_calls(n, 1), (4, 1), seed)
        b = holdout_split(list(reversed(make_calls(n, 1))), (4, 1), seed)
        assert a == b  # order of the input list is irrelevant


class TestFolds:
    def test_84_train_in_5_folds(self):
        plan = assign_folds(holdout_split(make_calls(105), (4, 1), seed=7), 5)
        sizes = sorted(Counter(plan.folds.values()).values())
        assert sizes == [16, 17, 17, 17, 17]
        assert set(plan.folds) == plan.train_calls

    def test_each_fold_single_call(self):
        calls = make_calls(12)
        plan = holdout_split(calls, (5, 1), seed=0)
        plan = assign_folds(plan, len(plan.train_calls))
        assert sorted(Counter(plan.folds.values()).values()) == [1] * len(plan.train_calls)

    def test_k_below_two_rejected(self):
        plan = holdout_split(make_calls(10), (4, 1), seed=0)
        with pytest.raises(ValueError, match="k must be >= 2"):
            assign_folds(plan, 1)

    def test_k_above_train_count_rejected(self):
        plan = holdout_split(make_calls(10), (4, 1), seed=0)
        with pytest.raises(ValueError, match="exceeds"):
            assign_folds(plan, len(plan.train_calls) + 1)

    @given(st.integers(5, 60), st.integers(2, 8), st.integers(0, 1000))
    @settings(max_examples=60, deadline=None)
    def test_fold_balance(self, n, k, seed):
        plan = holdout_split(make_calls(n, 1), (4, 1), seed)
        if k > len(plan.train_calls):
            return
        plan = assign_folds(plan, k, seed)
        sizes = Counter(plan.folds.values())
        assert len(sizes) == k
        assert max(sizes.values()) - min(sizes.values()) <= 1


class TestMaterialize:
    def test_test_call_segments_only_in_test(self):
        calls = make_calls(10, segments_each=3)
        plan = assign_folds(holdout_split(calls, (4, 1), seed=1), 4)
        test_ids = {s.segment_id for s in materialize(plan, calls, "test")}
        train_ids = {s.segment_id for s in materialize(plan, calls, "train")}
        assert not test_ids & train_ids
        assert test_ids | train_ids == {s.segment_id for c in calls for s in c.segments}
        some_test_call = next(iter(plan.test_calls))
        call = next(c for c in calls if c.call_id == some_test_call)
        for seg in call.segments:
            assert seg.segment_id in test_ids

    def test_fold_partition_and_disjointness(self):
        calls = make_calls(11, segments_each=2)
        plan = assign_folds(holdout_split(calls, (4, 1), seed=2), 3)
        train_ids = {s.segment_id for s in materialize(plan, calls, "train")}
        val0 = {s.segment_id for s in materialize(plan, calls, "fold-0-val")}
        tr0 = {s.segment_id for s in materialize(plan, calls, "fold-0-train")}
        assert val0 | tr0 == train_ids
        assert not val0 & tr0

    def test_unknown_role(self):
        calls = make_calls(6)
        plan = holdout_split(calls, (4, 1), seed=0)
        with pytest.raises(ValueError, match="unknown role"):
            materialize(plan, calls, "validation")

    def test_fold_role_without_folds(self):
        calls = make_calls(6)
        plan = holdout_split(calls, (4, 1), seed=0)
        with pytest.raises(ValueError, match="no folds"):
            materialize(plan, calls, "fold-0-val")

    def test_corpus_plan_mismatch(self):
        calls = make_calls(8)
        plan = holdout_split(calls, (4, 1), seed=0)
        with pytest.raises(ValueError, match="not covered"):
            materialize(plan, make_calls(9), "train")
        with pytest.raises(ValueError, match="unknown calls"):
            materialize(plan, calls[:-1], "train")


class TestLeakageProperty:
    @given(st.integers(5, 40), st.integers(0, 500), st.integers(2, 5))
    @settings(max_examples=40, deadline=None)
    def test_no_call_overlap_between_opposing_roles(self, n, seed, k):
        calls = make_calls(n, 2)
        plan = holdout_split(calls, (4, 1), seed)
        if k > len(plan.train_calls):
            return
        plan = assign_folds(plan, k, seed)
        assert not plan.test_calls & plan.train_calls
        for f in range(k):
            val = plan.fold_calls(f)
            train_f = plan.train_calls - val
            assert not val & train_f
            assert not val & plan.test_calls
            assert not train_f & plan.test_calls


class TestSerialization:
    def test_round_trip(self, tmp_path):
        calls = make_calls(20)
        plan = assign_folds(holdout_split(calls, (4, 1), seed=9), 4)
        path = tmp_path / "plan.json"
        plan.save(path)
        assert SplitPlan.load(path) == plan

    def test_byte_identical_rewrite(self, tmp_path):
        plan = assign_folds(holdout_split(make_calls(20), (4, 1), seed=9), 4)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        plan.save(a)
        plan.save(b)
        assert a.read_bytes() == b.read_bytes()
