import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridguard.errors import EmptyInput, LengthMismatch, SingleClass
from gridguard.metrics import ConfusionMatrix, confusion, evaluate, roc_auc, table_row


def pairwise_auc(y, s):
    pos = s[y == 1]
    neg = s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_perfect_prediction():
    y = np.array([0, 1, 1, 0, 1])
    cm = confusion(y, y)
    assert cm.accuracy == cm.precision == cm.recall == cm.f1 == 1.0


def test_all_negative_predictions_use_zero_convention():
    cm = confusion([1, 0, 1, 0], [0, 0, 0, 0])
    assert cm.recall == 0.0 and cm.precision == 0.0 and cm.f1 == 0.0


def test_hand_computed_counts():
    # tp=8, fp=2, fn=4, tn=86 laid out explicitly and counted back
    y_true = np.array([1] * 8 + [0] * 2 + [1] * 4 + [0] * 86)
    y_pred = np.array([1] * 8 + [1] * 2 + [0] * 4 + [0] * 86)
    cm = confusion(y_true, y_pred)
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (8, 2, 4, 86)
    assert cm.precision == pytest.approx(0.8)
    assert cm.recall == pytest.approx(2 / 3)
    assert cm.f1 == pytest.approx(0.7272727272727273, abs=1e-12)


def test_errors():
    with pytest.raises(LengthMismatch):
        confusion([0, 1], [0])
    with pytest.raises(EmptyInput):
        confusion([], [])
    with pytest.raises(SingleClass):
        roc_auc([1, 1, 1], [0.1, 0.2, 0.3])


def test_auc_known_values():
    assert roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert roc_auc([0, 1, 0, 1], [3, 3, 3, 3]) == 0.5


@pytest.mark.parametrize("seed", range(20))
def test_auc_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 500))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    s = rng.integers(0, 10, n).astype(float) if seed % 2 else rng.normal(size=n)
    assert abs(roc_auc(y, s) - pairwise_auc(y, s)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(-5, 5)), min_size=2, max_size=60))
def test_auc_symmetry_and_monotone_invariance(pairs):
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs], dtype=float)
    if y.min() == y.max():
        return
    a = roc_auc(y, s)
    assert a == pytest.approx(1 - roc_auc(y, -s), abs=1e-12)
    assert a == pytest.approx(roc_auc(y, np.exp(s / 3.0)), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_confusion_identities(pairs):
    y = [p[0] for p in pairs]
    p = [p[1] for p in pairs]
    cm = confusion(y, p)
    assert cm.total == len(pairs)
    assert cm.accuracy == (cm.tp + cm.tn) / cm.total
    if cm.precision > 0 and cm.recall > 0:
        h = 2 * cm.precision * cm.recall / (cm.precision + cm.recall)
        assert cm.f1 == pytest.approx(h, rel=1e-12)


def test_evaluate_and_table_row_order():
    block = evaluate([0, 1, 1, 0], [0, 1, 0, 0], [0.1, 0.9, 0.4, 0.2])
    assert block["roc_auc"] == 1.0
    row = table_row("Gradient Boosting", block)
    assert list(row) == ["Model", "Accuracy", "F1 Score", "ROC-AUC"]
    assert evaluate([1, 1], [1, 0], [0.3, 0.4])["roc_auc"] is None


def test_false_positive_rate():
    assert ConfusionMatrix(tp=1, fp=1, tn=3, fn=0).false_positive_rate == 0.25
