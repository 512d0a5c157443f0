from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from advlab.errors import DataError
from advlab.metrics import (METRIC_KEYS, ConfusionMatrix, MetricsReport, auc_roc,
                            confusion_from_predictions, evaluate, exact_metrics,
                            metrics_from_confusion)

from oracles import formula_metrics, pairwise_auc, recount

counts = st.integers(0, 50)


class TestConfusion:
    def test_perfect(self):
        cm = confusion_from_predictions([1, 1, 0, 0], [1, 1, 0, 0])
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 2, 0, 0)

    def test_all_false_alarms(self):
        cm = confusion_from_predictions([1] * 4, [0] * 4)
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (0, 0, 4, 0)

    def test_positive_class_is_respected(self):
        cm = confusion_from_predictions([0, 0, 1], [0, 1, 1], positive_class=0)
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (1, 1, 1, 0)

    def test_matches_recount(self, rng):
        p, a = rng.integers(0, 2, 1000), rng.integers(0, 2, 1000)
        cm = confusion_from_predictions(p, a)
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == recount(p.tolist(), a.tolist())

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion_from_predictions([1, 0], [1])

    def test_empty(self):
        with pytest.raises(DataError):
            confusion_from_predictions([], [])

    def test_negative_counts_rejected(self):
        with pytest.raises(DataError):
            ConfusionMatrix(-1, 0, 0, 0)


class TestFormulas:
    def test_perfect_classifier(self):
        m = metrics_from_confusion(ConfusionMatrix(5, 5, 0, 0))
        assert (m.accuracy, m.precision, m.recall, m.f1, m.fpr, m.auc_paper) == (1, 1, 1, 1, 0, 1)

    def test_worked_example(self):
        m = metrics_from_confusion(ConfusionMatrix(tp=3, tn=2, fp=1, fn=4))
        assert m.accuracy == 0.5 and m.precision == 0.75
        assert m.recall == float(Fraction(3, 7)) and m.fpr == float(Fraction(1, 3))
        assert round(m.f1, 4) == 0.5455
        assert m.auc_paper == float((Fraction(3, 4) + Fraction(2, 3)) / 2)
        assert round(m.auc_paper, 4) == 0.7083

    def test_undefined_markers(self):
        m = metrics_from_confusion(ConfusionMatrix(tp=0, tn=3, fp=0, fn=2))
        assert m.precision is None and m.f1 is None
        assert m.accuracy == 0.6 and m.recall == 0.0 and m.fpr == 0.0
        rec = m.to_record()
        assert rec["precision"] == "NA" and rec["f1"] == "NA"

    @given(counts, counts, counts, counts)
    def test_exact_agreement_with_oracle(self, tp, tn, fp, fn):
        if tp + tn + fp + fn == 0:
            return
        cm = ConfusionMatrix(tp, tn, fp, fn)
        assert exact_metrics(cm) == formula_metrics(tp, tn, fp, fn)
        for k, v in metrics_from_confusion(cm).as_dict().items():
            if k != "auc_roc":
                want = formula_metrics(tp, tn, fp, fn)[k]
                assert v == (None if want is None else float(want))
                assert v is None or 0.0 <= v <= 1.0

    @given(counts, counts, counts.filter(lambda v: v > 0))
    def test_auc_paper_symmetric_in_tp_and_tn(self, tp, tn, fp):
        a = exact_metrics(ConfusionMatrix(tp, tn, fp, 0))["auc_paper"]
        b = exact_metrics(ConfusionMatrix(tn, tp, fp, 0))["auc_paper"]
        assert a == b

    @given(counts.filter(lambda v: v > 0), counts, counts, counts)
    def test_accuracy_drops_when_a_hit_becomes_a_miss(self, tp, tn, fp, fn):
        before = exact_metrics(ConfusionMatrix(tp, tn, fp, fn))["accuracy"]
        after = exact_metrics(ConfusionMatrix(tp - 1, tn, fp, fn + 1))["accuracy"]
        assert after < before


class TestAuc:
    def test_separated(self):
        assert auc_roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auc_roc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_single_class_is_undefined(self):
        assert auc_roc([0.1, 0.2], [1, 1]) is None

    @given(st.integers(0, 10_000))
    def test_matches_pairwise_count(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, 20)
        # coarse scores so ties actually occur
        scores = rng.integers(0, 6, 20) / 5
        want = pairwise_auc(scores.tolist(), labels.tolist())
        got = auc_roc(scores, labels)
        assert (got is None) if len(set(labels.tolist())) < 2 else got == float(want)


class TestRecord:
    def test_fixed_keys_and_four_decimals(self):
        m = MetricsReport(0.5, 0.75, 3 / 7, 6 / 11, 1 / 3, 17 / 24, None)
        rec = m.to_record()
        assert tuple(rec) == METRIC_KEYS
        assert rec["recall"] == "0.4286" and rec["auc_roc"] == "NA"

    def test_record_round_trip(self):
        m = MetricsReport(0.5, None, 0.25, None, 0.0, 1.0, 0.875)
        assert MetricsReport.from_record(m.to_record()) == m


def test_evaluate_uses_positive_class_probability(small_blobs, small_model):
    rep = evaluate(small_model, small_blobs)
    probs = small_model.forward(small_blobs.features)
    assert rep.auc_roc == auc_roc(probs[:, 1], small_blobs.labels)
    pred = probs.argmax(axis=1)
    assert rep.accuracy == float(Fraction(int((pred == small_blobs.labels).sum()), len(pred)))
