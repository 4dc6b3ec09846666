"""Comparison-detector tests with hand-computable window fixtures."""

import math

import numpy as np
import pytest

from rapdet.baselines import (
    BaselineVerdict,
    ClusteringDetector,
    ClusteringParams,
    EcodDetector,
    EcodParams,
    ecod_detect,
    kmedoid_detect,
)
from rapdet.errors import WindowTooLarge
from rapdet.model import Scan


def _trace(values, ap="a", t0=0):
    return [Scan(t=t0 + i, rssi={ap: float(v)}) for i, v in enumerate(values)]


def _step_trace():
    # window ending at t=30 covers rows 1..30: 15 readings at -60, 15 at -50
    return _trace([-60.0] * 16 + [-50.0] * 15)


# --- clustering ----------------------------------------------------------------


def test_constant_trace_never_flags():
    det = ClusteringDetector(window=30, theta=5.0)
    verdicts = det.verdicts(_trace([-60.0] * 40))
    assert not any(v.alarm for v in verdicts)
    assert all(v.rogue == frozenset() for v in verdicts)


def test_step_separation_flags_at_theta():
    det = ClusteringDetector(window=30, theta=5.0)
    verdicts = det.verdicts(_step_trace())
    assert [v.alarm for v in verdicts[:-1]] == [False] * 30
    last = verdicts[-1]
    assert last.alarm
    assert last.score == 10.0
    assert last.rogue == frozenset({"a"})


def test_sparse_ap_window_is_skipped():
    # an AP with fewer than 4 readings in the window can never be scored
    trace = _step_trace() + _trace([-55.0] * 4, t0=31)
    for i in (0, 1, 2):
        trace[i] = Scan(t=i, rssi={**trace[i].rssi, "b": -40.0})
    det = ClusteringDetector(window=30, theta=5.0)
    separations, ap_ids = det.profile(trace)
    j = ap_ids.index("b")
    assert np.all(np.isneginf(separations[:, j]))
    assert all("b" not in v.rogue for v in det.verdicts(trace))


def test_medoids_are_input_points():
    # a mean-based split of {0, 2, 10, 12} would separate the centers by 10;
    # medoids stay on the data, so the extremes 0 and 12 survive
    det = ClusteringDetector(window=4, theta=1.0)
    separations, _ = det.profile(_trace([99.0, 0.0, 2.0, 10.0, 12.0]))
    assert separations[4, 0] == 12.0


def test_trace_shorter_than_window_raises():
    det = ClusteringDetector(window=30)
    with pytest.raises(WindowTooLarge):
        det.scores(_trace([-60.0] * 10))


def test_trace_equal_to_window_has_no_eligible_rows():
    det = ClusteringDetector(window=30, theta=5.0)
    scores = det.scores(_trace([-60.0] * 30))
    assert np.all(np.isneginf(scores))


def test_theta_monotone_and_strict():
    trace = _step_trace()
    det = ClusteringDetector(window=30)
    counts = [sum(v.alarm for v in det.verdicts(trace, theta)) for theta in (1.0, 9.99, 10.0, 15.0)]
    assert counts == [1, 1, 0, 0]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_clustering_params_validation():
    with pytest.raises(ValueError):
        ClusteringParams(window=3)
    with pytest.raises(ValueError):
        ClusteringParams(theta=0.0)
    with pytest.raises(ValueError):
        ClusteringParams(max_iterations=0)


def test_kmedoid_wrapper_matches_detector():
    trace = _step_trace()
    params = ClusteringParams(window=30, theta=5.0)
    assert kmedoid_detect(trace, params) == ClusteringDetector(window=30, theta=5.0).verdicts(trace)


def test_ineligible_score_serializes_as_null():
    det = ClusteringDetector(window=30, theta=5.0)
    row = det.verdicts(_step_trace())[0].to_json_dict()
    assert row["score"] is None
    assert set(row) == {"t", "alarm", "score", "rogue"}


# --- ecod ------------------------------------------------------------------------


def test_ecod_constant_trace_scores_zero():
    det = EcodDetector()
    scores = det.scores(_trace([-60.0] * 12))
    assert np.isneginf(scores[0])
    assert np.all(scores[1:] == 0.0)
    assert not any(v.alarm for v in det.verdicts(_trace([-60.0] * 12), 0.0))


def test_ecod_unique_jump_scores_log_of_sample_count():
    # one +20 difference among 19: its right tail probability is 1/19
    trace = _trace([-60.0] * 10 + [-40.0] * 10)
    scores = EcodDetector().scores(trace)
    assert int(np.argmax(scores)) == 10
    assert scores[10] == pytest.approx(math.log(19.0), abs=1e-12)


def test_ecod_identical_differences_score_identically():
    trace = _trace([-60.0] * 5 + [-55.0] * 7 + [-50.0] * 8)
    scores = EcodDetector().scores(trace)
    assert scores[5] == scores[12]


def test_ecod_scores_ignore_time_labels():
    values = [-60.0] * 6 + [-45.0] * 6
    a = EcodDetector().scores(_trace(values))
    b = EcodDetector().scores(_trace(values, t0=100))
    assert np.array_equal(a, b)


def test_ecod_lag_prefix_is_unscored():
    det = EcodDetector(lag=3)
    scores = det.scores(_trace([-60.0, -59.0, -58.0, -57.0, -56.0, -55.0]))
    assert np.all(np.isneginf(scores[:3]))
    assert np.all(np.isfinite(scores[3:]))


def test_ecod_never_attributes():
    trace = _trace([-60.0] * 10 + [-40.0] * 10)
    verdicts = EcodDetector().verdicts(trace, 0.5)
    assert any(v.alarm for v in verdicts)
    assert all(v.rogue == frozenset() for v in verdicts)


def test_ecod_trace_no_longer_than_lag():
    scores = EcodDetector(lag=1).scores(_trace([-60.0]))
    assert np.all(np.isneginf(scores))


def test_ecod_params_validation():
    with pytest.raises(ValueError):
        EcodParams(threshold=-1.0)
    with pytest.raises(ValueError):
        EcodParams(lag=0)


def test_ecod_wrapper_matches_detector():
    trace = _trace([-60.0] * 10 + [-40.0] * 10)
    params = EcodParams(threshold=1.0, lag=1)
    assert ecod_detect(trace, params) == EcodDetector(threshold=1.0, lag=1).verdicts(trace)


def test_threshold_monotone():
    trace = _trace([-60.0] * 10 + [-40.0] * 10)
    det = EcodDetector()
    counts = [sum(v.alarm for v in det.verdicts(trace, k)) for k in (0.1, 1.0, 3.0, 100.0)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == 0


def test_check_trace_ordering_enforced():
    det = EcodDetector()
    bad = [Scan(t=5, rssi={"a": -60.0}), Scan(t=4, rssi={"a": -60.0})]
    with pytest.raises(ValueError):
        det.scores(bad)
