import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reskws.evaluation import (
    accuracy_from_scores,
    confidence_interval,
    confusion_matrix,
    far_frr,
    interp_frr,
    predictions,
    read_roc_csv,
    report_from_scores,
    roc_sweep,
)


def random_scores(n, seed=0):
    rng = np.random.default_rng(seed)
    scores = rng.dirichlet(np.ones(12), size=n)
    labels = rng.integers(0, 12, n)
    return scores, labels


def test_accuracy_examples():
    scores = np.eye(12)[[0, 1, 2, 3]]
    assert accuracy_from_scores(scores, [0, 1, 2, 3]) == 1.0
    assert accuracy_from_scores(scores, [0, 1, 2, 4]) == 0.75


def test_ties_go_to_lowest_index():
    scores = np.full((2, 12), 1 / 12)
    assert list(predictions(scores)) == [0, 0]
    scores[1, [3, 7]] = 0.5
    assert predictions(scores)[1] == 3


def test_accuracy_of_empty_set():
    with pytest.raises(ValueError):
        accuracy_from_scores(np.zeros((0, 12)), [])


def test_confusion_matrix_agrees_with_accuracy():
    scores, labels = random_scores(500)
    cm = confusion_matrix(predictions(scores), labels)
    assert cm.sum() == 500
    assert np.trace(cm) / 500 == accuracy_from_scores(scores, labels)


def test_far_frr_endpoints():
    s = np.array([0.1, 0.4, 0.6, 0.9])
    target = np.array([False, False, True, True])
    far, frr = far_frr(s, target, [0.0, 0.5, 1.01])
    np.testing.assert_array_equal(far, [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(frr, [0.0, 0.0, 1.0])


def test_curves_monotone_and_span_endpoints():
    scores, labels = random_scores(2000, seed=1)
    curves, avg, excluded = roc_sweep(scores, labels)
    assert excluded == []
    for c in curves.values():
        order = np.argsort(c.thresholds)
        assert np.all(np.diff(c.far[order]) <= 0) and np.all(np.diff(c.frr[order]) >= 0)
        assert c.far.max() == 1.0 and c.frr[c.far == 1.0].min() == 0.0
        assert c.frr.max() == 1.0 and c.far[c.frr == 1.0].min() == 0.0
    assert np.all(np.diff(avg.frr) <= 1e-12)


def test_random_scores_auc_near_half():
    rng = np.random.default_rng(3)
    n = 20_000
    labels = rng.integers(0, 2, n)
    scores = np.zeros((n, 12))
    scores[:, 0] = rng.uniform(size=n)
    curves, _, _ = roc_sweep(scores, labels, keywords=[0])
    assert curves[0].auc == pytest.approx(0.5, abs=0.05)


def test_perfect_scores_auc_zero():
    labels = np.repeat(np.arange(12), 5)
    curves, avg, _ = roc_sweep(np.eye(12)[labels], labels)
    assert avg.auc == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 10_000), st.sampled_from(["square", "sqrt", "affine"]))
@settings(max_examples=20, deadline=None)
def test_monotone_rescale_invariance(seed, kind):
    scores, labels = random_scores(300, seed)
    f = {"square": np.square, "sqrt": np.sqrt, "affine": lambda s: 0.2 + 0.5 * s}[kind]
    _, a, _ = roc_sweep(scores, labels)
    _, b, _ = roc_sweep(f(scores), labels)
    np.testing.assert_allclose(a.frr, b.frr, atol=1e-12)


def test_interpolated_curve_is_lower_envelope():
    scores, labels = random_scores(400, seed=5)
    curves, _, _ = roc_sweep(scores, labels)
    for c in curves.values():
        at_vertices = interp_frr(c.far, c.frr, grid=c.far)
        # every operating point lies on or above the curve, and the best one at each FAR is on it
        assert np.all(at_vertices <= c.frr)
        for f in np.unique(c.far):
            assert at_vertices[c.far == f][0] == c.frr[c.far == f].min()


def test_absent_keyword_excluded():
    scores, labels = random_scores(500, seed=2)
    labels[labels == 4] = 10
    curves, avg, excluded = roc_sweep(scores, labels)
    assert excluded == [4] and 4 not in curves and len(curves) == 9
    assert np.all(np.isfinite(avg.frr))


def test_confidence_interval_examples():
    mean, half = confidence_interval([88, 90, 91, 92, 94])
    # s / sqrt(n) = 1 here, so the half width is t_{0.975, 4}
    assert mean == pytest.approx(91.0, abs=1e-3)
    assert half == pytest.approx(2.776, abs=1e-3)
    assert confidence_interval([5, 5, 5]) == (5.0, 0.0)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=10), st.floats(-50, 50))
@settings(max_examples=50, deadline=None)
def test_confidence_interval_translation(values, c):
    m1, h1 = confidence_interval(values)
    m2, h2 = confidence_interval([v + c for v in values])
    assert m2 == pytest.approx(m1 + c, abs=1e-9)
    assert h2 == pytest.approx(h1, abs=1e-6)


def test_confidence_interval_needs_two():
    with pytest.raises(ValueError):
        confidence_interval([1.0])


def test_report_and_csv_round_trip(tmp_path):
    scores, labels = random_scores(600, seed=4)
    report = report_from_scores(scores, labels)
    assert report.accuracy == accuracy_from_scores(scores, labels)
    assert report.to_dict()["confusion"] == report.confusion.tolist()
    report.write_roc_csv(tmp_path / "roc.csv")
    back = read_roc_csv(tmp_path / "roc.csv")
    assert set(back) == {c.name for c in report.roc.values()} | {"average"}
    np.testing.assert_allclose(back["average"][2], report.roc_average.frr, atol=1e-6)
    yes = report.roc[0]
    np.testing.assert_allclose(back["yes"][1], yes.far, atol=1e-6)
