import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from memrc.errors import DegenerateInputError
from memrc.metrics import accuracy, confusion_matrix, nmse
from memrc.pipelines import evaluate_classifier
from memrc.readout import FcReadout
from memrc.tasks import CLASSES

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_nmse_perfect_and_zero_predictor():
    y = np.array([0.2, 0.3, 0.1])
    assert nmse(y, y, "power") == 0 and nmse(y, y, "variance") == 0
    assert nmse(np.zeros(3), y, "power") == 1.0


def test_nmse_hand_values():
    y = np.array([1.0, 2.0, 3.0])
    p = np.array([1.0, 2.0, 4.0])
    assert nmse(p, y, "power") == pytest.approx(1 / 14)
    assert nmse(p, y, "variance") == pytest.approx(1 / 2)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(2, 40), elements=finite), st.data())
def test_nmse_definitions_agree_on_zero_mean(y, data):
    y = y - y.mean()
    if np.sum(y ** 2) < 1e-9:
        return
    p = data.draw(arrays(float, y.shape, elements=finite))
    a, b = nmse(p, y, "power"), nmse(p, y, "variance")
    assert a == pytest.approx(b, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(1, 40), elements=finite), st.data())
def test_nmse_nonnegative_zero_iff_equal(y, data):
    if np.sum(y ** 2) == 0:
        return
    p = data.draw(arrays(float, y.shape, elements=finite))
    v = nmse(p, y)
    assert v >= 0
    assert (v == 0) == np.array_equal(p, y)


def test_nmse_degenerate_and_shape_errors():
    with pytest.raises(DegenerateInputError):
        nmse(np.zeros(3), np.zeros(3), "power")
    with pytest.raises(DegenerateInputError):
        nmse(np.zeros(3), np.ones(3), "variance")
    with pytest.raises(DegenerateInputError):
        nmse([], [])
    with pytest.raises(ValueError):
        nmse(np.zeros(2), np.ones(3))
    with pytest.raises(ValueError):
        nmse(np.ones(2), np.ones(2), "eq9")


def test_confusion_perfect_and_constant():
    y = np.repeat(np.arange(4), 80)
    cm = confusion_matrix(y, y, CLASSES)
    assert np.array_equal(cm.counts, 80 * np.eye(4, dtype=int)) and cm.accuracy == 1.0
    cm = confusion_matrix(y, np.zeros_like(y), CLASSES)
    assert cm.accuracy == 0.25
    assert cm.counts[:, 0].tolist() == [80] * 4


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=200))
def test_confusion_totals_and_accuracy(pairs):
    t, p = map(np.array, zip(*pairs))
    cm = confusion_matrix(t, p, CLASSES)
    assert cm.counts.sum() == len(t)
    assert np.array_equal(cm.counts.sum(axis=1), np.bincount(t, minlength=4))
    assert cm.accuracy == accuracy(t, p)


def test_evaluate_classifier_standard_split():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(320, 5))
    y = np.repeat(np.arange(4), 80)
    model = FcReadout(rng.normal(size=(4, 5)), np.zeros(4))
    acc, cm = evaluate_classifier(model, X, y)
    assert acc == np.trace(cm.counts) / 320
    assert cm.to_dict()["classes"] == list(CLASSES)
    assert "tonic" in str(cm)
