import numpy as np
import pytest

from ppcnet.errors import DataError
from ppcnet.metrics import (accuracy, agreement_predict, average_precision,
                            build_report, confusion_matrix, f1_macro)
from ppcnet.rng import make_rng


def brute_force_f1_macro(preds, truth, num_classes):
    """Direct-definition oracle, independent of the production path."""
    scores = []
    for c in range(num_classes):
        tp = sum(1 for p, t in zip(preds, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(preds, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(preds, truth) if p != c and t == c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall)
                      if precision + recall else 0.0)
    return sum(scores) / num_classes


def brute_force_average_precision(scores, truth):
    """Walk distinct thresholds descending, accumulating (dR) * P."""
    thresholds = sorted(set(scores), reverse=True)
    n_pos = sum(truth)
    ap = 0.0
    prev_recall = 0.0
    for th in thresholds:
        selected = [t for s, t in zip(scores, truth) if s >= th]
        tp = sum(selected)
        precision = tp / len(selected)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


class TestF1Macro:
    def test_perfect(self):
        assert f1_macro([0, 1, 2, 0], [0, 1, 2, 0], 3) == 1.0

    def test_hand_derived_case(self):
        # class0: P=1, R=0.5, F1=2/3; class1: P=2/3, R=1, F1=0.8
        value = f1_macro([0, 1, 1, 1], [0, 0, 1, 1], 2)
        assert value == pytest.approx((2 / 3 + 0.8) / 2, abs=1e-12)
        assert value == pytest.approx(0.73333333333, abs=1e-9)

    def test_absent_class_scores_zero(self):
        value = f1_macro([0, 0], [0, 0], 2)
        assert value == pytest.approx(0.5)  # class 1 contributes F1 = 0

    def test_matches_bruteforce_on_random_vectors(self):
        rng = make_rng(0)
        for _ in range(300):
            c = int(rng.integers(2, 6))
            n = int(rng.integers(1, 40))
            preds = rng.integers(0, c, n)
            truth = rng.integers(0, c, n)
            assert abs(f1_macro(preds, truth, c)
                       - brute_force_f1_macro(preds.tolist(), truth.tolist(), c)) < 1e-9

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            f1_macro([], [], 2)


class TestAveragePrecision:
    def test_perfectly_separated(self):
        assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_hand_derived_case(self):
        value = average_precision([0.9, 0.8, 0.7], [1, 0, 1])
        assert value == pytest.approx(0.5 + (2 / 3) * 0.5, abs=1e-12)
        assert value == pytest.approx(0.83333333333, abs=1e-9)

    def test_all_tied_scores(self):
        assert average_precision([0.5] * 8, [1, 0, 0, 1, 0, 0, 0, 0]) == pytest.approx(0.25)

    def test_matches_bruteforce_on_random_vectors(self):
        rng = make_rng(1)
        for _ in range(300):
            n = int(rng.integers(2, 40))
            truth = rng.integers(0, 2, n)
            if truth.sum() == 0:
                truth[0] = 1
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            assert abs(average_precision(scores, truth)
                       - brute_force_average_precision(scores.tolist(), truth.tolist())) < 1e-9

    def test_no_positives_rejected(self):
        with pytest.raises(DataError):
            average_precision([0.5, 0.4], [0, 0])


class TestConfusion:
    def test_row_sums_are_class_counts(self):
        rng = make_rng(2)
        truth = rng.integers(0, 3, 50)
        preds = rng.integers(0, 3, 50)
        cm = confusion_matrix(preds, truth, 3)
        np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(truth, minlength=3))
        assert cm.sum() == 50

    def test_accuracy(self):
        assert accuracy([1, 0, 1], [1, 1, 1]) == pytest.approx(2 / 3)


class TestAgreement:
    def logits(self, label):
        return np.array([[1.0, -1.0]]) if label == 0 else np.array([[-1.0, 1.0]])

    def test_agreement_emits_view_a_label(self):
        # view A says front (1), flipped view says back (0): consistent
        assert agreement_predict(self.logits(1), self.logits(0)) == 1
        assert agreement_predict(self.logits(0), self.logits(1)) == 0

    def test_disagreement_abstains(self):
        assert agreement_predict(self.logits(1), self.logits(1)) is None
        assert agreement_predict(self.logits(0), self.logits(0)) is None

    def test_oracle_model_full_coverage(self):
        rng = make_rng(3)
        emitted = 0
        for _ in range(25):
            margin = rng.uniform(0.5, 3.0)
            a = np.array([[-margin, margin]])      # predicts front
            b = np.array([[margin, -margin]])      # flipped view predicts back
            assert agreement_predict(a, b) == 1
            emitted += 1
        assert emitted == 25


class TestReport:
    def test_build_report_fields(self):
        report = build_report("demo", [0, 1, 1], [0, 1, 0], 2, scores=[0.1, 0.9, 0.8])
        assert report.macro_f1 == pytest.approx(
            brute_force_f1_macro([0, 1, 1], [0, 1, 0], 2))
        assert report.accuracy == pytest.approx(2 / 3)
        assert report.average_precision is not None
        assert np.array(report.confusion).sum() == 3
        d = report.to_dict()
        assert d["task"] == "demo"
        assert d["num_classes"] == 2
