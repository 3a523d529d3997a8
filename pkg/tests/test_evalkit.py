import dataclasses
import math

import numpy as np
import pytest

from fashionrec.evalkit import (
    config_hash,
    evaluate_run,
    evaluate_setting,
    format_report_table,
    make_report,
    mrr,
    ndcg_at,
    recall_at,
    zero_shot_eval,
)
from fashionrec.generator import OracleMock
from fashionrec.promptgen import default_template
from fashionrec.retrieval import Pipeline


RANKED = [f"I{i}" for i in range(1, 21)]  # I1 at rank 1 ... I20 at rank 20


class TestRecall:
    def test_rank_one(self):
        assert recall_at(RANKED, "I1", 10) == 1

    def test_rank_eleven_boundary(self):
        assert recall_at(RANKED, "I11", 10) == 0

    def test_absent(self):
        assert recall_at(RANKED, "missing", 10) == 0

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            recall_at(RANKED, "I1", 0)


class TestNdcg:
    def test_rank_one(self):
        assert ndcg_at(RANKED, "I1", 10) == pytest.approx(1.0)

    def test_rank_three(self):
        assert ndcg_at(RANKED, "I3", 10) == pytest.approx(0.5)

    def test_beyond_n(self):
        assert ndcg_at(RANKED, "I11", 10) == 0.0

    def test_absent(self):
        assert ndcg_at(RANKED, "missing", 10) == 0.0


class TestMrr:
    def test_rank_four(self):
        assert mrr(RANKED, "I4") == pytest.approx(0.25)

    def test_rank_one(self):
        assert mrr(RANKED, "I1") == pytest.approx(1.0)

    def test_absent(self):
        assert mrr(RANKED, "missing") == 0.0

    def test_full_list_not_truncated(self):
        assert mrr(RANKED, "I15") == pytest.approx(1 / 15)


class TestMetricRelations:
    def test_recall_dominates_ndcg(self):
        rng = np.random.Generator(np.random.PCG64(2))
        for _ in range(200):
            ranked = [f"x{i}" for i in rng.permutation(30)]
            truth = f"x{int(rng.integers(40))}"
            r = recall_at(ranked, truth, 10)
            g = ndcg_at(ranked, truth, 10)
            assert r >= g >= 0.0
            if r == 0:
                assert g == 0.0

    def test_invariant_to_relabeling_others(self):
        ranked = ["a", "b", "c", "d"]
        relabeled = ["x1", "b", "x3", "x4"]
        for fn in (lambda r: recall_at(r, "b", 3), lambda r: ndcg_at(r, "b", 3),
                   lambda r: mrr(r, "b")):
            assert fn(ranked) == fn(relabeled)


class TestEvaluateRun:
    def test_two_pairs_hand_average(self):
        records = [
            {"ranked": ["t", "x"], "truth": "t"},
            {"ranked": ["x", "y"], "truth": "absent"},
        ]
        result = evaluate_run(records, n=10)
        assert result.recall_at_n == pytest.approx(0.5)
        assert result.ndcg_at_n == pytest.approx(0.5)
        assert result.mrr == pytest.approx(0.5)
        assert result.count == 2

    def test_all_rank_one(self):
        records = [{"ranked": ["t"], "truth": "t"}] * 5
        result = evaluate_run(records, n=10)
        assert (result.recall_at_n, result.ndcg_at_n, result.mrr) == (1.0, 1.0, 1.0)

    def test_single_pair_rank_two(self):
        records = [{"ranked": ["x", "t"], "truth": "t"}]
        result = evaluate_run(records, n=10)
        assert result.recall_at_n == 1
        assert result.ndcg_at_n == pytest.approx(1 / math.log2(3))
        assert result.mrr == pytest.approx(0.5)

    def test_empty_run(self):
        with pytest.raises(ValueError):
            evaluate_run([], n=10)

    def test_matches_brute_force_oracle(self):
        rng = np.random.Generator(np.random.PCG64(10))
        records = []
        for _ in range(300):
            ranked = [f"i{j}" for j in rng.permutation(15)[: int(rng.integers(1, 15))]]
            truth = f"i{int(rng.integers(20))}"
            records.append({"ranked": ranked, "truth": truth})
        result = evaluate_run(records, n=10)
        # independent recomputation
        rs = [1 if r["truth"] in r["ranked"][:10] else 0 for r in records]
        gs = []
        ms = []
        for r in records:
            try:
                rank = r["ranked"].index(r["truth"]) + 1
            except ValueError:
                rank = None
            gs.append(1 / math.log2(rank + 1) if rank and rank <= 10 else 0.0)
            ms.append(1 / rank if rank else 0.0)
        assert result.recall_at_n == pytest.approx(sum(rs) / 300, abs=1e-12)
        assert result.ndcg_at_n == pytest.approx(sum(gs) / 300, abs=1e-12)
        assert result.mrr == pytest.approx(sum(ms) / 300, abs=1e-12)


class TestDrivers:
    @pytest.fixture()
    def pipeline(self, catalog, title_model, title_index, id_table, truths):
        return Pipeline(
            catalog=catalog,
            template=default_template(),
            generator=OracleMock(truths),
            title_model=title_model,
            title_index=title_index,
            id_table=id_table,
        )

    def test_oracle_perfect(self, pipeline, split):
        result, records = evaluate_setting(pipeline, split, n=10)
        assert result.recall_at_n == 1.0
        assert result.count == len(split.test)
        assert len(records) == len(split.test)

    def test_parallel_matches_serial(self, pipeline, split):
        serial, rec_s = evaluate_setting(pipeline, split, n=10, jobs=1)
        parallel, rec_p = evaluate_setting(pipeline, split, n=10, jobs=4)
        assert serial == parallel
        assert rec_s == rec_p

    def test_zero_shot_same_category_warns(self, pipeline, split):
        title_only = dataclasses.replace(pipeline, id_table=None)
        with pytest.warns(UserWarning, match="identical categories"):
            result, _ = zero_shot_eval(title_only, split, "footwear", "footwear")
        assert result.count == len(split.test)

    def test_zero_shot_forces_title_only(self, pipeline, split):
        with pytest.warns(UserWarning, match="ID path"):
            result, records = zero_shot_eval(pipeline, split, "a", "b")
        assert all(r["sources"]["id"] == [] for r in records)


class TestReport:
    def test_config_hash_changes_iff_config_changes(self):
        base = {"a": 1, "b": {"c": [1, 2]}}
        assert config_hash(base) == config_hash({"b": {"c": [1, 2]}, "a": 1})
        changed = {"a": 2, "b": {"c": [1, 2]}}
        assert config_hash(base) != config_hash(changed)

    def test_report_fields(self):
        result = evaluate_run([{"ranked": ["t"], "truth": "t"}], n=10, drop_count=3)
        report = make_report("leave-one-out", "footwear", result, "abc123")
        assert set(report) == {
            "setting", "category", "n", "recall", "ndcg", "mrr", "count", "drops",
            "config_hash",
        }
        assert report["drops"] == 3
        table = format_report_table(report)
        assert "leave-one-out" in table and "footwear" in table
