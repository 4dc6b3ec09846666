"""Calibration and measurement-harness tests.

The detection-harness oracles use a step-attack trace whose clustering
response is computable by hand: a 30-sample window needs at least two
readings on each side of the step, so the per-timestamp hit pattern (and
therefore every pooled rate) is exact.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from rapdet import (
    AttackKind,
    AttackSpec,
    GmRaimDetector,
    PathLossModel,
    SceneConfig,
    SubsetPlan,
    Trajectory,
    generate_scene,
    inject,
)
from rapdet.attacks import AttackCase, AttackLabel
from rapdet.base import ScoreThresholdDetector
from rapdet.baselines import ClusteringDetector, EcodDetector
from rapdet.errors import CalibrationError, NonMonotoneDetector
from rapdet.evaluation import (
    MIN_BENIGN_TIMESTAMPS,
    RecoveryReport,
    RocPoint,
    calibrate,
    calibrate_scores,
    evaluate_detection,
    evaluate_exclusion,
    evaluate_recovery,
    fit_positioner,
    over_exclusion_count,
    roc_rows,
    sampling_rows,
    sampling_sweep,
    write_csv,
)
from rapdet.model import Scan
from rapdet.positioning import NlsPositioner

from conftest import BLOB_MODEL, blob_registry, blob_trace


class _FixedScores(ScoreThresholdDetector):
    """Scores an AP-a reading above -50 as hot; knob-free oracle detector."""

    knob_name = "theta"
    knob_bounds = (0.0, 100.0)

    def __init__(self, theta: float = 50.0, hot: float = 100.0) -> None:
        self.theta = theta
        self.hot = hot

    def scores(self, trace):
        return np.array([self.hot if scan.rssi.get("a", -60.0) > -50.0 else 0.0 for scan in trace])


class _NeverScores(_FixedScores):
    def scores(self, trace):
        return np.zeros(len(trace))


class _LumpyDetector(ScoreThresholdDetector):
    """Alarm fraction rises then falls in the knob, breaking the bracket."""

    knob_name = "theta"
    knob_bounds = (0.0, 100.0)

    def __init__(self, theta: float = 50.0) -> None:
        self.theta = theta

    def alarms_at(self, scores, knob):
        scores = np.asarray(scores)
        if knob < 25.0:
            return scores > 50.0
        if knob < 75.0:
            return scores > 10.0
        return scores > 200.0


# --- calibration ---------------------------------------------------------------


def test_target_one_returns_most_sensitive_knob():
    det = _FixedScores()
    knob = calibrate_scores(det, np.full(200, 40.0), 1.0)
    assert knob == 0.0


def test_silent_detector_calibrates_to_most_sensitive_knob():
    knob = calibrate_scores(_NeverScores(), np.zeros(200), 0.01)
    assert knob == 0.0


def test_calibrated_fraction_lands_at_or_under_target():
    rng = np.random.default_rng(0)
    scores = rng.uniform(0.0, 100.0, size=1000)
    det = _FixedScores()
    knob = calibrate_scores(det, scores, 0.05)
    frac = float(np.mean(scores > knob))
    assert 0.03 <= frac <= 0.05


def test_hopeless_floor_raises_calibration_error():
    det = _FixedScores()
    with pytest.raises(CalibrationError):
        calibrate_scores(det, np.full(200, 1000.0), 0.05)


def test_bracket_escape_raises_non_monotone():
    scores = np.linspace(0.0, 100.0, 120)
    with pytest.raises(NonMonotoneDetector):
        calibrate_scores(_LumpyDetector(), scores, 0.05)


def test_calibration_input_validation():
    det = _FixedScores()
    with pytest.raises(ValueError):
        calibrate_scores(det, np.zeros(MIN_BENIGN_TIMESTAMPS - 1), 0.05)
    with pytest.raises(ValueError):
        calibrate_scores(det, np.zeros(200), 1.5)
    with pytest.raises(ValueError):
        calibrate(EcodDetector(), [Scan(t=i, rssi={"a": -60.0}) for i in range(50)], 0.05)


def test_fit_freezes_or_calibrates_the_knob():
    rng = np.random.default_rng(1)
    benign = [Scan(t=i, rssi={"a": float(-60.0 + rng.normal(0, 2))}) for i in range(150)]
    fixed = ClusteringDetector(theta=5.0).fit(benign)
    assert fixed.theta_ == 5.0
    tuned = ClusteringDetector(target_fpr=0.2).fit(benign)
    frac = float(np.mean(tuned.predict(benign)))
    assert frac <= 0.2
    assert tuned.theta_ != 5.0


# --- detection harness -----------------------------------------------------------


def _step_case(n=160, lo=100, hi=130):
    trace = tuple(
        Scan(t=i, rssi={"a": -30.0 if lo <= i < hi else -60.0}) for i in range(n)
    )
    labels = tuple(
        AttackLabel(t=i, active=lo <= i < hi, rogue_aps=frozenset({"a"}) if lo <= i < hi else frozenset())
        for i in range(n)
    )
    spec = AttackSpec(kind=AttackKind.ADDITIVE_GAIN, target_ap="a", rng_seed=0)
    return AttackCase(spec=spec, trace=trace, labels=labels)


def test_oracle_detector_scores_perfect_tpr():
    case = _step_case()
    points = evaluate_detection(_FixedScores(), [case], targets=[0.05])
    (point,) = points[("additive_gain", 2.0)]
    assert point.tpr_detect == 1.0
    assert point.achieved_fpr == 0.0
    assert point.tpr_exclude is None  # score-only detectors never attribute


def test_silent_detector_scores_zero_tpr():
    points = evaluate_detection(_NeverScores(), [_step_case()], targets=[0.05])
    (point,) = points[("additive_gain", 2.0)]
    assert point.tpr_detect == 0.0
    assert point.achieved_fpr == 0.0


def test_clustering_hit_pattern_is_exact():
    # active rows 100..129; a window needs >= 2 samples on each side of the
    # step, so rows 101..127 hit and 100/128/129 miss: TPR 27/30. The decaying
    # tail 131..157 alarms 27 of the 130 benign rows, hence the loose target.
    case = _step_case()
    points = evaluate_detection(ClusteringDetector(window=30), [case], targets=[0.25])
    (point,) = points[("additive_gain", 2.0)]
    assert point.tpr_detect == pytest.approx(27 / 30)
    assert point.tpr_exclude == pytest.approx(27 / 30)
    assert point.achieved_fpr == pytest.approx(27 / 130)
    assert point.knob == 0.0


def test_tight_target_forces_knob_past_the_step():
    # every alarming row scores exactly 30, so a target under 27/130 pushes
    # the knob to the step height and the strict comparison silences it
    points = evaluate_detection(ClusteringDetector(window=30), [_step_case()], targets=[0.01, 0.25])
    low, high = points[("additive_gain", 2.0)]
    assert low.achieved_fpr == 0.0
    assert low.tpr_detect == 0.0
    assert high.tpr_detect > low.tpr_detect
    for point in (low, high):
        if point.tpr_exclude is not None:
            assert point.tpr_exclude <= point.tpr_detect


def test_detection_requires_cases():
    with pytest.raises(ValueError):
        evaluate_detection(_FixedScores(), [], targets=[0.05])


def test_benign_traces_join_the_pool():
    case = _step_case()
    benign = [Scan(t=i, rssi={"a": -60.0}) for i in range(130)]
    points = evaluate_detection(ClusteringDetector(window=30), [case], targets=[0.25], benign_traces=[benign])
    (point,) = points[("additive_gain", 2.0)]
    assert point.achieved_fpr == pytest.approx(27 / 260)


def test_roc_point_rejects_overshoot():
    with pytest.raises(ValueError):
        RocPoint(target_fpr=0.05, achieved_fpr=0.06, tpr_detect=1.0, tpr_exclude=None, knob=1.0)


# --- exclusion scoring ------------------------------------------------------------


def _lab(t, active, *aps):
    return AttackLabel(t=t, active=active, rogue_aps=frozenset(aps))


def test_exclusion_fraction_counts_named_rogues():
    labels = [_lab(0, False), _lab(1, True, "a"), _lab(2, True, "a"), _lab(3, True, "a")]
    verdicts = [
        SimpleNamespace(alarm=False, rogue=frozenset()),
        SimpleNamespace(alarm=True, rogue=frozenset({"a"})),
        SimpleNamespace(alarm=True, rogue=frozenset({"a", "b"})),  # superset still counts
        SimpleNamespace(alarm=True, rogue=frozenset({"b"})),
    ]
    assert evaluate_exclusion(verdicts, labels) == pytest.approx(2 / 3)
    assert over_exclusion_count(verdicts, labels) == 2


def test_exclusion_requires_active_rows_and_alignment():
    labels = [_lab(0, False)]
    verdicts = [SimpleNamespace(alarm=False, rogue=frozenset())]
    with pytest.raises(ValueError):
        evaluate_exclusion(verdicts, labels)
    with pytest.raises(ValueError):
        evaluate_exclusion(verdicts, labels + [_lab(1, True, "a")])


# --- recovery ---------------------------------------------------------------------


@pytest.fixture
def blob_setup(frame):
    registry = blob_registry(frame)
    positioner = NlsPositioner().fit(registry, frame)
    trace = blob_trace(frame)
    spec = AttackSpec(kind=AttackKind.REPLACEMENT, target_ap="ap00", rng_seed=3)
    attacked, labels = inject(trace, spec, registry, BLOB_MODEL)
    return positioner, attacked, labels


def test_exclusion_repairs_the_replacement_window(blob_setup):
    positioner, attacked, labels = blob_setup
    det = GmRaimDetector(positioner, plan=SubsetPlan(min_size=3, max_size=3), exclusion="vote", n_lambda=1.0)
    verdicts = det.verdicts_from_profile(attacked, det.profile_trace(attacked))
    assert evaluate_exclusion(verdicts, labels) == 1.0
    report = evaluate_recovery(positioner, verdicts, attacked, labels)
    n_active = sum(1 for lab in labels if lab.active)
    assert len(report.errors_before) == n_active
    assert report.t == tuple(lab.t for lab in labels if lab.active)
    assert report.rmse_before > 10.0
    assert report.rmse_after < 1e-6


def test_no_exclusion_falls_back_to_before(blob_setup):
    positioner, attacked, labels = blob_setup
    verdicts = [SimpleNamespace(recovered=None) for _ in attacked]
    report = evaluate_recovery(positioner, verdicts, attacked, labels)
    assert report.errors_after == report.errors_before
    assert report.rmse_after == report.rmse_before
    assert report.rmse_before > 10.0  # the corruption stays in place


def test_recovery_needs_truth_and_alignment(blob_setup):
    positioner, attacked, labels = blob_setup
    verdicts = [SimpleNamespace(recovered=None) for _ in attacked]
    with pytest.raises(ValueError):
        evaluate_recovery(positioner, verdicts[:-1], attacked, labels)
    stripped = [Scan(t=s.t, rssi=dict(s.rssi)) for s in attacked]
    with pytest.raises(ValueError, match="ground-truth"):
        evaluate_recovery(positioner, verdicts, stripped, labels)


def test_recovery_report_rejects_bad_errors():
    with pytest.raises(ValueError):
        RecoveryReport(
            rmse_before=1.0, rmse_after=float("nan"), t=(0,), errors_before=(1.0,), errors_after=(1.0,)
        )


# --- sampling sweep ---------------------------------------------------------------


def _sweep_config():
    return SceneConfig(
        width=60.0,
        depth=40.0,
        path_loss=PathLossModel(shadowing_sigma=1.0),
        trajectory=Trajectory(waypoints=((10.0, 10.0), (50.0, 30.0)), speed_mps=1.0, duration=60),
        rng_seed=0,
    )


def test_sampling_sweep_is_deterministic():
    config = _sweep_config()
    first = sampling_sweep(config, seeds=[0, 1], ratios=(0.4, 1.0), traces_per_seed=2)
    second = sampling_sweep(config, seeds=[0, 1], ratios=(0.4, 1.0), traces_per_seed=2)
    assert first == second
    assert [p.ratio for p in first] == [0.4, 1.0]
    assert all(len(p.tprs) == 2 for p in first)
    assert all(0.0 <= p.mean_tpr <= 1.0 for p in first)


def test_sampling_sweep_requires_seeds():
    with pytest.raises(ValueError):
        sampling_sweep(_sweep_config(), seeds=[])


def test_fit_positioner_backend_validation():
    scene = generate_scene(_sweep_config(), include_fingerprints=False)
    assert isinstance(fit_positioner(scene, "distance"), NlsPositioner)
    with pytest.raises(ValueError):
        fit_positioner(scene, "fingerprint")
    with pytest.raises(ValueError, match="backend"):
        fit_positioner(scene, "centroid")


# --- csv ---------------------------------------------------------------------------


def test_write_csv_is_deterministic_text(tmp_path):
    path = tmp_path / "out.csv"
    write_csv(path, ("a", "b"), [{"a": 0.1, "b": None}, {"a": True}])
    assert path.read_text() == "a,b\n0.1,\ntrue,\n"


def test_roc_rows_sorted_by_group():
    grouped = {
        ("replacement", 2.0): [RocPoint(0.05, 0.01, 0.5, None, 1.0)],
        ("additive_gain", 2.0): [RocPoint(0.05, 0.01, 0.9, 0.8, 1.0)],
    }
    rows = roc_rows("gm_raim", grouped)
    assert [r["attack"] for r in rows] == ["additive_gain", "replacement"]
    assert rows[0]["method"] == "gm_raim"
    assert rows[0]["tpr_exclude"] == 0.8


def test_sampling_rows_shape():
    from rapdet.evaluation import SamplingPoint

    rows = sampling_rows([SamplingPoint(ratio=0.4, mean_tpr=0.5, tprs=(0.4, 0.6))])
    assert rows == [{"ratio": 0.4, "mean_tpr": 0.5, "n_seeds": 2, "min_tpr": 0.4, "max_tpr": 0.6}]


def test_min_benign_pool_constant():
    assert MIN_BENIGN_TIMESTAMPS == 100
