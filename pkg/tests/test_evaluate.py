"""Evaluation metrics against brute-force and pairwise oracles."""

import json
import math

import numpy as np
import pytest

from lsm.evaluate import (
    ConfusionCounts,
    confusion,
    error_stats,
    evaluate,
    metrics,
    roc_auc,
    roc_svg,
    roc_to_csv,
)


def mann_whitney_auc(y, s):
    """O(n^2) pairwise AUC: wins plus half credit for ties, over all
    positive-negative pairs."""
    y = np.asarray(y)
    s = np.asarray(s)
    pos = s[y == 1]
    neg = s[y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (pos.size * neg.size)


class TestConfusion:
    def test_perfect_pair(self):
        c = confusion([1, 0], [0.9, 0.1])
        assert (c.tp, c.tn, c.fp, c.fn) == (1, 1, 0, 0)

    def test_half_is_positive(self):
        c = confusion([0], [0.5])
        assert c.fp == 1 and c.tn == 0

    def test_matches_brute_force_tally(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, size=100)
        s = rng.random(100)
        c = confusion(y, s, threshold=0.4)
        tp = fp = fn = tn = 0
        for yi, si in zip(y, s):
            if si >= 0.4:
                tp, fp = tp + (yi == 1), fp + (yi == 0)
            else:
                fn, tn = fn + (yi == 1), tn + (yi == 0)
        assert (c.tp, c.fp, c.fn, c.tn) == (tp, fp, fn, tn)
        assert c.total == 100

    def test_input_validation(self):
        with pytest.raises(ValueError, match="empty"):
            confusion([], [])
        with pytest.raises(ValueError, match="labels"):
            confusion([2, 0], [0.5, 0.5])
        with pytest.raises(ValueError, match="0, 1"):
            confusion([1, 0], [1.5, 0.5])
        with pytest.raises(ValueError, match="predictions"):
            confusion([1], [0.5, 0.6])


class TestMetrics:
    def test_hand_case(self):
        m = metrics(ConfusionCounts(tp=50, fp=10, fn=10, tn=30))
        assert m["accuracy"] == 0.8
        assert abs(m["precision"] - 0.8333) < 1e-4
        assert abs(m["recall"] - 0.8333) < 1e-4
        assert m["specificity"] == 0.75
        assert abs(m["f1"] - 0.8333) < 1e-4

    def test_perfect_classifier(self):
        m = metrics(ConfusionCounts(tp=5, fp=0, fn=0, tn=5))
        assert all(m[k] == 1.0 for k in ("accuracy", "precision", "recall",
                                         "specificity", "f1"))

    def test_undefined_ratios_are_none(self):
        m = metrics(ConfusionCounts(tp=0, fp=0, fn=3, tn=7))
        assert m["precision"] is None
        assert m["f1"] is None
        assert m["recall"] == 0.0
        m2 = metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=4))
        assert m2["recall"] is None

    def test_identities(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            y = rng.integers(0, 2, size=50)
            s = rng.random(50)
            if y.min() == y.max():
                continue
            c = confusion(y, s)
            m = metrics(c)
            assert abs(m["accuracy"] - (c.tp + c.tn) / 50) < 1e-15
            if c.tp + c.fn > 0:
                fnr = c.fn / (c.tp + c.fn)
                assert abs(m["recall"] + fnr - 1.0) < 1e-15


class TestRocAuc:
    def test_perfect_separation(self):
        _, auc = roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
        assert auc == 1.0

    def test_all_tied_scores(self):
        points, auc = roc_auc([0, 1, 0, 1], [0.7, 0.7, 0.7, 0.7])
        assert auc == 0.5
        assert [(p[0], p[1]) for p in points] == [(0.0, 0.0), (1.0, 1.0)]

    def test_starts_and_ends_at_corners(self):
        rng = np.random.default_rng(2)
        y = rng.integers(0, 2, size=30)
        y[0], y[1] = 0, 1
        points, _ = roc_auc(y, rng.random(30))
        assert points[0][:2] == (0.0, 0.0)
        assert points[-1][:2] == (1.0, 1.0)
        assert math.isinf(points[0][2])

    def test_matches_mann_whitney_with_ties(self):
        rng = np.random.default_rng(3)
        for trial in range(50):
            y = rng.integers(0, 2, size=100)
            y[:2] = [0, 1]
            s = np.round(rng.random(100), 1)  # heavy ties
            _, auc = roc_auc(y, s)
            assert abs(auc - mann_whitney_auc(y, s)) < 1e-12, f"trial {trial}"

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(4)
        y = rng.integers(0, 2, size=80)
        y[:2] = [0, 1]
        s = rng.random(80)
        points, auc = roc_auc(y, s)
        for transform in (lambda v: v**3, np.sqrt):
            p2, a2 = roc_auc(y, transform(s))
            assert abs(auc - a2) < 1e-12
            assert [(p[0], p[1]) for p in points] == [(p[0], p[1]) for p in p2]

    def test_label_swap_symmetry(self):
        rng = np.random.default_rng(5)
        y = rng.integers(0, 2, size=60)
        y[:2] = [0, 1]
        s = rng.random(60)  # no exact 0.5 values
        _, auc = roc_auc(y, s)
        _, auc_swapped = roc_auc(1 - y, 1.0 - s)
        assert abs(auc - auc_swapped) < 1e-12
        m = metrics(confusion(y, s))
        m_swapped = metrics(confusion(1 - y, 1.0 - s))
        assert abs(m["recall"] - m_swapped["specificity"]) < 1e-15
        assert abs(m["specificity"] - m_swapped["recall"]) < 1e-15

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            roc_auc([1, 1, 1], [0.2, 0.5, 0.9])


class TestErrorStats:
    def test_exact_predictions(self):
        mae, rmse, hist = error_stats([1, 0, 1], [1.0, 0.0, 1.0])
        assert mae == 0.0 and rmse == 0.0
        assert sum(hist) == 3

    def test_hand_case(self):
        mae, rmse, _ = error_stats([1, 0], [0.5, 0.5])
        assert mae == 0.5 and rmse == 0.5

    def test_rmse_at_least_mae(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            n = rng.integers(1, 20)
            y = rng.integers(0, 2, size=n)
            s = rng.random(n)
            mae, rmse, hist = error_stats(y, s)
            assert rmse >= mae - 1e-15
            assert sum(hist) == n

    def test_boundary_goes_to_lower_bin(self):
        # errors: -1 (first bin), -0.95 (still first: boundary), 0 (bin 19),
        # +1 (last bin, the exception)
        _, _, hist = error_stats([0, 0, 0, 1], [1.0, 0.95, 0.0, 0.0])
        assert hist[0] == 2
        assert hist[19] == 1
        assert hist[39] == 1

    def test_equality_iff_constant_errors(self):
        mae, rmse, _ = error_stats([1, 0], [0.7, 0.3])  # |e| = 0.3 both
        assert abs(rmse - mae) < 1e-15


class TestReportAndOutputs:
    def _report(self):
        rng = np.random.default_rng(7)
        y = rng.integers(0, 2, size=40)
        y[:2] = [0, 1]
        s = np.round(rng.random(40), 2)
        return evaluate(y, s)

    def test_report_round_trips_through_json(self):
        from lsm.evaluate import MetricReport
        r = self._report()
        r2 = MetricReport.from_dict(json.loads(r.to_json()))
        assert r2.counts == r.counts
        assert r2.auc == r.auc
        assert r2.roc == r.roc
        assert r2.histogram == r.histogram

    def test_report_consistency(self):
        r = self._report()
        assert r.counts.total == r.n
        assert sum(r.histogram) == r.n
        assert r.roc[0][:2] == (0.0, 0.0)
        assert r.roc[-1][:2] == (1.0, 1.0)
        assert r.rmse >= r.mae

    def test_csv_output(self):
        r = self._report()
        text = roc_to_csv(r.roc)
        lines = text.strip().split("\n")
        assert lines[0] == "fpr,tpr,threshold"
        assert len(lines) == len(r.roc) + 1
        assert lines[1].endswith("inf")
        # all rows parse back to floats
        for line in lines[1:]:
            fpr, tpr, t = line.split(",")
            float(fpr), float(tpr), float(t)

    def test_svg_output(self):
        r = self._report()
        svg = roc_svg(r.roc, r.auc)
        assert svg.startswith("<svg")
        assert "AUC = " in svg
        assert "polyline" in svg
        assert svg.rstrip().endswith("</svg>")
