import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgdefend.metrics import (
    ConfusionMatrix,
    MetricsError,
    confusion_matrix,
    f1_scores,
)


def test_perfect_predictions_give_diagonal_matrix():
    labels = np.array([0, 1, 2, 3, 0, 1])
    cm = confusion_matrix(labels, labels)
    assert np.array_equal(cm.counts, np.diag([2, 2, 1, 1]))


def test_hand_counted_pairs():
    truth = [0, 0, 1, 2, 3, 3, 1, 0]
    pred = [0, 1, 1, 2, 3, 0, 2, 0]
    cm = confusion_matrix(pred, truth)
    expected = np.array(
        [
            [2, 1, 0, 0],
            [0, 1, 1, 0],
            [0, 0, 1, 0],
            [1, 0, 0, 1],
        ]
    )
    assert np.array_equal(cm.counts, expected)


def test_total_cells_equal_sample_count():
    rng = np.random.default_rng(0)
    truth = rng.integers(0, 4, size=57)
    pred = rng.integers(0, 4, size=57)
    assert confusion_matrix(pred, truth).total == 57


def test_confusion_accepts_label_names():
    cm = confusion_matrix(["Normal", "AF"], ["Normal", "Noise"])
    assert cm.counts[0, 0] == 1 and cm.counts[3, 1] == 1


def test_confusion_rejects_length_mismatch():
    with pytest.raises(MetricsError):
        confusion_matrix([0, 1], [0])


def test_diagonal_matrix_scores_all_ones():
    report = f1_scores(ConfusionMatrix(np.diag([5, 3, 2, 1])))
    assert report.accuracy == 1.0
    assert all(v == 1.0 for v in report.f1_per_class.values())
    assert report.macro_f1 == 1.0


def test_f1_direct_substitution_case():
    # Normal: 3 on the diagonal, 5 true Normals, 4 predicted Normals.
    counts = np.array(
        [
            [3, 1, 1, 0],
            [1, 2, 0, 0],
            [0, 0, 2, 0],
            [0, 0, 0, 1],
        ]
    )
    report = f1_scores(ConfusionMatrix(counts))
    assert report.f1_per_class["Normal"] == pytest.approx(6 / 9)


def test_absent_class_scores_zero():
    counts = np.zeros((4, 4), dtype=int)
    counts[0, 0] = 4
    counts[1, 1] = 2
    report = f1_scores(ConfusionMatrix(counts))
    assert report.f1_per_class["Other"] == 0.0
    assert report.f1_per_class["Noise"] == 0.0
    assert report.macro_f1 == pytest.approx((1.0 + 1.0 + 0.0 + 0.0) / 4)


def test_macro_is_mean_of_per_class():
    rng = np.random.default_rng(5)
    counts = rng.integers(0, 9, size=(4, 4))
    report = f1_scores(ConfusionMatrix(counts))
    assert report.macro_f1 == pytest.approx(
        np.mean(list(report.f1_per_class.values()))
    )


@given(st.integers(0, 100_000))
@settings(max_examples=60, deadline=None)
def test_f1_matches_independent_library(seed):
    from sklearn.metrics import f1_score

    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    truth = rng.integers(0, 4, size=n)
    pred = rng.integers(0, 4, size=n)
    report = f1_scores(confusion_matrix(pred, truth))
    expected = f1_score(truth, pred, labels=[0, 1, 2, 3], average=None,
                        zero_division=0)
    np.testing.assert_allclose(
        [report.f1_per_class[k] for k in ("Normal", "AF", "Other", "Noise")],
        expected,
        atol=1e-12,
    )
    assert report.accuracy == pytest.approx(np.mean(truth == pred))


def test_drop_reconstructs_clean_accuracy():
    counts = np.diag([4, 4, 4, 4])
    counts[0, 1] = 4  # a quarter of Normals misread
    report = f1_scores(ConfusionMatrix(counts)).with_drop(clean_accuracy=0.95)
    reconstructed = report.accuracy + report.drop_pct / 100.0 * 0.95
    assert abs(reconstructed - 0.95) < 1e-9


def test_negative_counts_rejected():
    with pytest.raises(MetricsError):
        ConfusionMatrix(np.full((4, 4), -1))
