import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import aece_oracle, auc_oracle, ece_oracle, f1_oracle, random_prediction_set
from tpa.metrics import (CalibrationBin, PredictionSet, adaptive_groups, aece, auc_macro_ovr, binary_auc,
                         calibration_report, ece, merge_bins, macro_f1, per_class_f1, read_reliability,
                         reliability_export)


class TestF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2, 1], [0, 1, 2, 1], 3) == 1.0

    def test_confusion_oracle(self):
        np.testing.assert_allclose(per_class_f1([0, 0, 1, 1], [0, 1, 1, 1], 2), [2 / 3, 0.8])
        assert macro_f1([0, 0, 1, 1], [0, 1, 1, 1], 2) == pytest.approx(0.7333333333333333, abs=1e-12)

    def test_single_wrong_class(self):
        assert macro_f1([0, 0, 0], [1, 1, 1], 2) == 0.0

    def test_absent_class_counts_zero(self):
        assert macro_f1([0, 1], [0, 1], 3) == pytest.approx(2 / 3)
        assert macro_f1([0, 1], [0, 1], 3, skip_absent=True) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            macro_f1([], [], 2)


class TestAUC:
    def test_rank_oracle(self):
        assert binary_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_separated(self):
        assert binary_auc([0.1, 0.2, 0.7, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_tied(self):
        assert binary_auc([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5

    def test_skips_unevaluable_class(self):
        probs = np.array([[0.6, 0.3, 0.1], [0.2, 0.7, 0.1], [0.5, 0.4, 0.1]])
        auc, skipped = auc_macro_ovr(probs, [0, 1, 0])
        assert skipped == [2]
        assert auc == 1.0

    def test_no_evaluable_class(self):
        with pytest.raises(ValueError):
            auc_macro_ovr(np.array([[0.5, 0.5]]), [0])


class TestECE:
    def test_hand_binning(self):
        value, bins = ece([0.9, 0.9, 0.6, 0.6], [1, 0, 1, 1], 2)
        assert value == pytest.approx(0.0, abs=1e-15)
        assert bins[1].count == 4 and bins[1].accuracy == 0.75 and bins[1].confidence == 0.75

    def test_full_confidence_half_right(self):
        assert ece([1.0, 1.0], [1, 0], 15)[0] == 0.5

    def test_singleton_bins_calibrated(self):
        assert ece([0.0, 1.0], [0, 1], 4)[0] == 0.0

    def test_boundary_goes_up(self):
        _, bins = ece([0.5], [1], 2)
        assert [b.count for b in bins] == [0, 1]
        _, bins = ece([1.0, 0.0], [1, 0], 3)
        assert [b.count for b in bins] == [1, 0, 1]

    @pytest.mark.parametrize("M", [5, 10, 15])
    def test_every_interior_edge_goes_up(self, M):
        for m in range(1, M):
            _, bins = ece([m / M], [1], M)
            assert bins[m].count == 1

    def test_empty(self):
        assert ece([], [], 15) == (0.0, [])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_permutation_invariant_and_counts(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 60))
        conf, corr = rng.uniform(0, 1, n), rng.integers(0, 2, n)
        perm = rng.permutation(n)
        for fn in (ece, aece):
            v, bins = fn(conf, corr, 7)
            assert v == pytest.approx(fn(conf[perm], corr[perm], 7)[0], abs=1e-12)
            assert sum(b.count for b in bins) == n
            assert 0.0 <= v <= 1.0


class TestAECE:
    def test_hand_grouping(self):
        value, bins = aece([0.6, 0.6, 0.9, 0.9], [1, 0, 1, 1], 2)
        assert value == pytest.approx(0.10, abs=1e-12)
        assert [(b.accuracy, b.confidence) for b in bins] == [(0.5, 0.6), (1.0, 0.9)]

    def test_forced_partition(self):
        _, bins = aece([0.4, 0.1, 0.3, 0.2], [1, 1, 1, 1], 2)
        assert [b.count for b in bins] == [2, 2]
        assert bins[0].upper == 0.2 and bins[1].lower == 0.3

    def test_fewer_samples_than_bins(self):
        conf, corr = np.array([0.3, 0.8, 0.55]), np.array([1, 0, 1])
        assert aece(conf, corr, 15)[0] == pytest.approx(np.mean(np.abs(corr - conf)), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 500), st.integers(1, 30))
    def test_group_sizes(self, n, M):
        sizes = adaptive_groups(n, M)
        assert sum(sizes) == n
        if sizes:
            assert max(sizes) - min(sizes) <= 1
            assert sizes == sorted(sizes, reverse=True)


class TestReliabilityCSV:
    def test_round_trip(self, tmp_path):
        _, bins = ece(np.random.default_rng(0).uniform(0, 1, 50), np.ones(50), 15)
        reliability_export(bins, tmp_path / "r.csv")
        back = read_reliability(tmp_path / "r.csv")
        assert len(back) == 15
        assert back == bins

    def test_empty_header_only(self, tmp_path):
        _, bins = ece([], [], 15)
        reliability_export(bins, tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().strip() == "bin_lower,bin_upper,count,accuracy,confidence,gap"


class TestReport:
    def test_fields(self):
        probs = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
        rep = calibration_report(PredictionSet(probs, [0, 1, 1]), n_bins=5)
        assert len(rep.bins) == 5 and rep.auc == 1.0
        d = rep.to_dict()
        assert d["bins"][0]["gap"] == rep.bins[0].gap

    def test_prediction_set_validation(self):
        with pytest.raises(ValueError):
            PredictionSet(np.array([[0.5, 0.6]]), [0])


def test_random_sets_match_oracles():
    rng = np.random.default_rng(0)
    for _ in range(200):
        probs, labels = random_prediction_set(rng)
        preds = PredictionSet(probs, labels)
        C = probs.shape[1]
        conf, corr = preds.confidence.tolist(), preds.correct.tolist()
        assert abs(macro_f1(labels, preds.preds, C) - f1_oracle(labels.tolist(), preds.preds.tolist(), C)) <= 1e-12
        ref = auc_oracle(probs.tolist(), labels.tolist())
        if ref is not None:
            assert abs(auc_macro_ovr(probs, labels)[0] - ref) <= 1e-12
        for M in (1, 5, 15):
            assert abs(ece(conf, corr, M)[0] - ece_oracle(conf, corr, M)) <= 1e-12
            assert abs(aece(conf, corr, M)[0] - aece_oracle(conf, corr, M)) <= 1e-12


def test_merge_bins_equals_pooled_table():
    rng = np.random.default_rng(3)
    parts = [(rng.uniform(0.3, 1, n), rng.integers(0, 2, n)) for n in (7, 19, 4)]
    merged = merge_bins([ece(c, k, 6)[1] for c, k in parts])
    _, pooled = ece(np.concatenate([c for c, _ in parts]), np.concatenate([k for _, k in parts]), 6)
    for a, b in zip(merged, pooled):
        assert a.count == b.count
        assert a.accuracy == pytest.approx(b.accuracy, abs=1e-12)
        assert a.confidence == pytest.approx(b.confidence, abs=1e-12)
