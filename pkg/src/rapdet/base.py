"""Shared detector machinery: score-threshold estimators with a calibratable knob.

Every detector in this package reduces a trace to one knob-independent
sensitivity score per timestamp and alarms where score > knob (strict). That
split makes calibration cheap: the expensive per-trace profiling runs once and
the knob search only thresholds cached scores.
"""

from __future__ import annotations

from typing import ClassVar, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .model import Scan


def check_trace(trace: Sequence[Scan]) -> list[Scan]:
    """Validate a trace: non-empty, Scan entries, non-decreasing time index."""
    trace = list(trace)
    if not trace:
        raise ValueError("trace must be non-empty")
    prev = None
    for scan in trace:
        if not isinstance(scan, Scan):
            raise ValueError(f"trace entries must be Scan, got {type(scan).__name__}")
        if prev is not None and scan.t < prev:
            raise ValueError(f"trace time indexes must be non-decreasing (t={scan.t} after {prev})")
        prev = scan.t
    return trace


class ScoreThresholdDetector(BaseEstimator):
    """Base class: detectors score timestamps and alarm where score > knob.

    Subclasses define ``knob_name`` (the constructor parameter searched during
    calibration), ``knob_bounds``, and ``scores``. ``fit`` calibrates the knob
    on a benign trace when ``target_fpr`` is set, else freezes the constructor
    value; either way the fitted value lands in ``<knob_name>_``.
    """

    knob_name: ClassVar[str]
    knob_bounds: ClassVar[tuple[float, float]]

    def scores(self, trace: Sequence[Scan]) -> np.ndarray:
        """Knob-independent sensitivity score per timestamp, shape (len(trace),)."""
        raise NotImplementedError

    def alarms_at(self, scores: np.ndarray, knob: float) -> np.ndarray:
        """Alarm decisions for precomputed scores at a knob value (strict >)."""
        return np.asarray(scores) > knob

    def knob(self) -> float:
        """Fitted knob when available, else the constructor value."""
        return float(getattr(self, self.knob_name + "_", getattr(self, self.knob_name)))

    def fit(self, trace: Sequence[Scan], y=None) -> "ScoreThresholdDetector":
        """Calibrate on a benign trace (if target_fpr is set) and freeze the knob."""
        from .evaluation import calibrate  # local import: evaluation depends on this module

        trace = check_trace(trace)
        target = getattr(self, "target_fpr", None)
        if target is None:
            value = float(getattr(self, self.knob_name))
        else:
            value = calibrate(self, trace, target)
        setattr(self, self.knob_name + "_", value)
        return self

    def predict(self, trace: Sequence[Scan]) -> np.ndarray:
        """Boolean alarm per timestamp at the current knob."""
        return self.alarms_at(self.scores(check_trace(trace)), self.knob())
