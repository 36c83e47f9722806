"""Evaluation protocol: CI arithmetic, determinism, sweeps, rank
aggregation, fixed-feature baselines, and report files."""
import json
import math

import numpy as np
import pytest
import torch.nn as nn

from fewshot_audio.core import EpisodeSpec
from fewshot_audio.evaluation import (
    EvalReport,
    FixedFeatureClassifier,
    LinearSVM,
    RandomPredictor,
    average_rank,
    evaluate,
    feature_partition,
    fixed_feature_evaluate,
    load_feature_table,
    load_report,
    mean_ci95,
    render_accuracy_table,
    save_feature_table,
    save_report,
    sweep_shots,
    sweep_ways,
    write_sweep_plot_data,
)
from fewshot_audio.learners import ProtoNetState, SimpleShotState
from fewshot_audio.reference_results import (
    WITHIN_DATASET_5WAY_1SHOT,
    WITHIN_DATASET_AVG_RANK,
)

from conftest import make_partition


class TestMeanCI:
    def test_alternating_stream_formula(self):
        # 10,000 alternating 0/1: mean 0.5, sample std sqrt(2500/9999),
        # ci = 1.96 * std / 100 ~= 0.0098.
        accs = np.tile([0.0, 1.0], 5000)
        mean, ci = mean_ci95(accs)
        assert mean == 0.5
        expected = 1.96 * math.sqrt(2500.0 / 9999.0) / math.sqrt(10000.0)
        assert abs(ci - expected) < 1e-9
        assert ci == pytest.approx(0.0098, abs=1e-4)

    def test_constant_stream_zero_ci(self):
        mean, ci = mean_ci95(np.ones(500))
        assert (mean, ci) == (1.0, 0.0)

    def test_single_value(self):
        assert mean_ci95([0.8]) == (0.8, 0.0)

    def test_ci_scales_with_inverse_sqrt_n(self):
        # Quadrupling the task count halves the CI on a fixed stream.
        rng = np.random.default_rng(0)
        stream = (rng.uniform(size=40000) < 0.7).astype(float)
        _, ci_small = mean_ci95(stream[:10000])
        _, ci_large = mean_ci95(stream)
        assert ci_small / ci_large == pytest.approx(2.0, rel=0.05)


class TestEvaluate:
    def state(self):
        return ProtoNetState(nn.Identity())

    def partition(self):
        return make_partition(8, 6, shape=(4,))

    def test_report_fields(self, spec_515):
        report = evaluate(self.state(), self.partition(), spec_515, n_tasks=20, seed=0,
                          dataset_id="dummy", store_per_task=True)
        assert report.n_tasks == 20
        assert len(report.per_task_accuracies) == 20
        assert 0.0 <= report.mean_accuracy <= 1.0
        m, ci = mean_ci95(report.per_task_accuracies)
        assert report.mean_accuracy == m and report.ci95_halfwidth == ci

    def test_bit_identical_reruns(self, spec_515):
        a = evaluate(self.state(), self.partition(), spec_515, n_tasks=30, seed=3,
                     dataset_id="dummy", store_per_task=True)
        b = evaluate(self.state(), self.partition(), spec_515, n_tasks=30, seed=3,
                     dataset_id="dummy", store_per_task=True)
        assert a.to_dict() == b.to_dict()

    def test_seed_changes_stream(self, spec_515):
        a = evaluate(self.state(), self.partition(), spec_515, n_tasks=30, seed=1,
                     store_per_task=True)
        b = evaluate(self.state(), self.partition(), spec_515, n_tasks=30, seed=2,
                     store_per_task=True)
        assert a.per_task_accuracies != b.per_task_accuracies

    def test_random_predictor_near_chance(self, spec_515):
        report = evaluate(RandomPredictor(), self.partition(), spec_515, n_tasks=800, seed=0)
        sigma = math.sqrt(0.2 * 0.8 / (800 * 5))
        assert abs(report.mean_accuracy - 0.2) < 4 * sigma

    def test_fixed_head_mismatch_rejected(self, spec_515):
        class FixedHead:
            algorithm = "fo_maml"
            fixed_n_way = 7

            def episode_accuracy(self, episode, rng=None):
                return 1.0

        with pytest.raises(ValueError, match="fixed"):
            evaluate(FixedHead(), self.partition(), spec_515, n_tasks=1)

    def test_report_round_trip(self, tmp_path, spec_515):
        report = evaluate(self.state(), self.partition(), spec_515, n_tasks=10, seed=0,
                          store_per_task=True)
        path = tmp_path / "report.json"
        save_report(report, path)
        assert load_report(path) == report

    def test_report_bytes_deterministic(self, tmp_path, spec_515):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_report(evaluate(self.state(), self.partition(), spec_515, 15, seed=5), p1)
        save_report(evaluate(self.state(), self.partition(), spec_515, 15, seed=5), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSweeps:
    def partition(self):
        return make_partition(8, 8, shape=(4,))

    def test_shot_sweep_k1_matches_evaluate(self):
        state = ProtoNetState(nn.Identity())
        part = self.partition()
        entries = sweep_shots(state, part, n_way=5, k_values=(1, 2), q_queries=5,
                              n_tasks=15, seed=9, dataset_id="d")
        direct = evaluate(state, part, EpisodeSpec(5, 1, 5), n_tasks=15, seed=9,
                          dataset_id="d")
        assert len(entries) == 2
        assert entries[0].report.to_dict() == direct.to_dict()

    def test_way_sweep_rejects_fixed_head(self):
        class GBML:
            algorithm = "fo_maml"
            fixed_n_way = 5

        with pytest.raises(ValueError, match="fixed"):
            sweep_ways(GBML(), self.partition())

    def test_way_sweep_marks_unavailable(self):
        state = ProtoNetState(nn.Identity())
        entries = sweep_ways(state, self.partition(), n_values=(5, 8, 9), q_queries=2,
                             n_tasks=5, seed=0)
        availability = {e.param: e.available for e in entries}
        assert availability == {5: True, 8: True, 9: False}
        assert "usable classes" in entries[-1].reason

    def test_grid_length(self):
        state = ProtoNetState(nn.Identity())
        entries = sweep_shots(state, self.partition(), n_way=5, k_values=(1, 2, 3),
                              q_queries=2, n_tasks=4, seed=0)
        assert [e.param for e in entries] == [1, 2, 3]

    def test_plot_data_file(self, tmp_path):
        state = ProtoNetState(nn.Identity())
        entries = sweep_ways(state, self.partition(), n_values=(5, 9), q_queries=2,
                             n_tasks=4, seed=0)
        path = tmp_path / "plot.csv"
        write_sweep_plot_data(entries, path, "n")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "n,mean_accuracy,ci95_halfwidth"
        assert len(lines) == 2  # header + the one available entry


class TestAverageRank:
    def test_published_rank_row_reproduced(self):
        table = {
            ds: {algo: mean for algo, (mean, _) in row.items()}
            for ds, row in WITHIN_DATASET_5WAY_1SHOT.items()
        }
        ranks = average_rank(table)
        for algo, expected in WITHIN_DATASET_AVG_RANK.items():
            assert ranks[algo] == pytest.approx(expected, abs=1e-9)

    def test_all_tied_share_mean_rank(self):
        table = {"d1": {"a": 0.5, "b": 0.5, "c": 0.5}, "d2": {"a": 0.1, "b": 0.1, "c": 0.1}}
        assert average_rank(table) == {"a": 2.0, "b": 2.0, "c": 2.0}

    def test_single_dataset(self):
        table = {"d": {"a": 0.9, "b": 0.7, "c": 0.8}}
        assert average_rank(table) == {"a": 1.0, "b": 3.0, "c": 2.0}

    def test_missing_cell_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            average_rank({"d1": {"a": 0.5, "b": 0.4}, "d2": {"a": 0.5}})


class TestLinearSVM:
    def test_separable_support_fits_exactly(self):
        x = np.array([[2.0, 0.0], [3.0, 1.0], [-2.0, 0.0], [-3.0, -1.0]])
        y = np.array([0, 0, 1, 1])
        svm = LinearSVM().fit(x, y)
        assert np.array_equal(svm.predict(x), y)

    def test_deterministic_fit(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(20, 5))
        y = rng.integers(0, 3, size=20)
        a = LinearSVM().fit(x, y)
        b = LinearSVM().fit(x, y)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.biases, b.biases)

    def test_multiclass_one_vs_rest(self):
        centers = np.array([[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0]])
        rng = np.random.default_rng(1)
        x = np.concatenate([c + rng.normal(scale=0.2, size=(10, 2)) for c in centers])
        y = np.repeat([0, 1, 2], 10)
        svm = LinearSVM().fit(x, y)
        assert (svm.predict(x) == y).mean() == 1.0


class TestFixedFeatures:
    def orthogonal_table(self, n_classes=5, clips_per_class=4, dim=5):
        table, classes = {}, {}
        for c in range(n_classes):
            label = f"cls{c}"
            ids = []
            for i in range(clips_per_class):
                cid = f"{label}_{i}"
                vec = np.zeros(dim)
                vec[c] = 1.0
                table[cid] = vec
                ids.append(cid)
            classes[label] = ids
        return table, classes

    def test_orthogonal_features_give_perfect_ncc(self, spec_515):
        table, classes = self.orthogonal_table()
        report = fixed_feature_evaluate(
            table, classes, spec_515, classifier="ncc_cl2n", n_tasks=30, seed=0,
            train_feature_mean=np.zeros(5),
        )
        assert report.mean_accuracy == 1.0
        assert report.ci95_halfwidth == 0.0

    def test_svm_on_orthogonal_features(self, spec_515):
        table, classes = self.orthogonal_table()
        report = fixed_feature_evaluate(
            table, classes, spec_515, classifier="linear_svm", n_tasks=10, seed=0,
        )
        assert report.mean_accuracy == 1.0

    def test_ncc_cl2n_equals_simpleshot(self, spec_515):
        rng = np.random.default_rng(2)
        table = {f"c{i}": rng.normal(size=6) for i in range(40)}
        classes = {f"cls{c}": [f"c{i}" for i in range(c * 8, (c + 1) * 8)] for c in range(5)}
        center = rng.normal(size=6)
        partition = feature_partition(table, classes)

        ncc = FixedFeatureClassifier("ncc_cl2n", train_feature_mean=center)
        ss = SimpleShotState(nn.Identity(), train_mean=center)
        rep_a = evaluate(ncc, partition, spec_515, n_tasks=25, seed=4, store_per_task=True)
        rep_b = evaluate(ss, partition, spec_515, n_tasks=25, seed=4, store_per_task=True)
        assert rep_a.per_task_accuracies == rep_b.per_task_accuracies

    def test_missing_feature_vector_rejected(self, spec_515):
        table, classes = self.orthogonal_table()
        classes["cls0"].append("ghost_clip")
        with pytest.raises(Exception, match="ghost_clip"):
            fixed_feature_evaluate(table, classes, spec_515, n_tasks=1,
                                   train_feature_mean=np.zeros(5))

    def test_ncc_requires_center(self, spec_515):
        with pytest.raises(ValueError, match="train-partition feature mean"):
            FixedFeatureClassifier("ncc_cl2n")

    def test_feature_table_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        table = {f"c{i}": rng.normal(size=4) for i in range(6)}
        path = tmp_path / "features.txt"
        save_feature_table(table, path)
        loaded = load_feature_table(path)
        assert set(loaded) == set(table)
        for cid in table:
            assert np.array_equal(loaded[cid], table[cid])


class TestRendering:
    def report(self, ds, algo, mean):
        return EvalReport(
            dataset_id=ds, algorithm=algo, n_way=5, k_shot=1, q_queries=5,
            n_tasks=10, mean_accuracy=mean, ci95_halfwidth=0.01, seed=0,
        )

    def test_table_includes_rank_row(self):
        table = {
            "d1": {"a": self.report("d1", "a", 0.9), "b": self.report("d1", "b", 0.5)},
            "d2": {"a": self.report("d2", "a", 0.8), "b": self.report("d2", "b", 0.6)},
        }
        text = render_accuracy_table(table)
        assert "avg_rank" in text
        assert "90.00" in text

    def test_report_validation(self):
        with pytest.raises(ValueError, match="mean_accuracy"):
            self.report("d", "a", 1.5)
