"""Comparison detectors: per-AP 2-medoid clustering and ECDF tail scoring.

Both reduce a trace to one knob-independent score per timestamp (see base.py):

  clustering  max over APs of the medoid separation of that AP's last-W
              readings, where a window only counts if it has >= 4 present
              samples and both clusters keep >= 2 members
  ecod        per-timestamp outlier score of the lag-difference matrix,
              aggregating -log empirical tail probabilities across APs

Neither uses randomness: k-medoids starts from the window min/max and accepts
the first-best strictly improving swap, so results are reproducible bit for
bit. The PAM loop runs in lockstep across every (window, AP) pair in the
trace; per-window Python loops would dominate the whole pipeline.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import skew

from .base import ScoreThresholdDetector, check_trace
from .errors import WindowTooLarge
from .model import ApId, Scan

_PAM_CHUNK = 2048  # rows per lockstep PAM batch, bounds the (rows, W, W) buffer


@dataclass(frozen=True, slots=True)
class ClusteringParams:
    window: int = 30
    theta: float = 5.0
    max_iterations: int = 50

    def __post_init__(self) -> None:
        if self.window < 4:
            raise ValueError(f"window must be >= 4, got {self.window}")
        if not self.theta > 0.0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True, slots=True)
class EcodParams:
    threshold: float = 10.0
    lag: int = 1

    def __post_init__(self) -> None:
        if self.threshold < 0.0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.lag < 1:
            raise ValueError(f"lag must be >= 1, got {self.lag}")


@dataclass(frozen=True, slots=True)
class BaselineVerdict:
    t: int
    alarm: bool
    score: float
    rogue: frozenset[ApId]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "alarm": self.alarm,
            "score": self.score if math.isfinite(self.score) else None,
            "rogue": sorted(self.rogue),
        }


def _trace_matrix(trace: Sequence[Scan]) -> tuple[np.ndarray, tuple[ApId, ...]]:
    """(T, J) RSSI matrix over the sorted union of AP ids, NaN where absent."""
    ids: set[ApId] = set()
    for scan in trace:
        ids.update(scan.rssi)
    ap_ids = tuple(sorted(ids))
    index = {ap: j for j, ap in enumerate(ap_ids)}
    out = np.full((len(trace), len(ap_ids)), np.nan)
    for i, scan in enumerate(trace):
        for ap, value in scan.rssi.items():
            out[i, index[ap]] = value
    return out, ap_ids


def _pam_chunk(values: np.ndarray, max_iterations: int) -> tuple[np.ndarray, np.ndarray]:
    """Converge 2-medoid PAM on each row of values (R, W), NaN = missing.

    Returns (separation (R,), valid (R,)). A row is valid when it has >= 4
    present samples and the final clusters both keep >= 2 members. Medoids
    start at the row min/max; each iteration applies the best strictly
    improving single-medoid swap (first candidate on ties: medoid-1 swaps
    before medoid-2, lower point index first).
    """
    rows, width = values.shape
    present = np.isfinite(values)
    n_present = present.sum(axis=1)
    ok = n_present >= 4

    lo = np.where(present, values, np.inf)
    hi = np.where(present, values, -np.inf)
    i1 = lo.argmin(axis=1)
    i2 = hi.argmax(axis=1)
    v1 = np.where(ok, values[np.arange(rows), i1], 0.0)
    v2 = np.where(ok, values[np.arange(rows), i2], 0.0)

    active = ok.copy()
    for _ in range(max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        va = values[idx]
        pa = present[idx]
        d1 = np.abs(va - v1[idx, None])
        d2 = np.abs(va - v2[idx, None])
        cost = np.nansum(np.minimum(d1, d2), axis=1)
        pair = np.abs(va[:, :, None] - va[:, None, :])
        new1 = np.nansum(np.minimum(pair, d2[:, None, :]), axis=2)
        new2 = np.nansum(np.minimum(pair, d1[:, None, :]), axis=2)
        new1[~pa] = np.inf
        new2[~pa] = np.inf
        sub = np.arange(idx.size)
        new1[sub, i2[idx]] = np.inf  # a medoid pair must be two distinct points
        new2[sub, i1[idx]] = np.inf
        both = np.concatenate([new1, new2], axis=1)
        best = both.argmin(axis=1)
        improved = both[sub, best] < cost
        take = idx[improved]
        cand = best[improved]
        first = cand < width
        c1 = take[first]
        i1[c1] = cand[first]
        v1[c1] = values[c1, cand[first]]
        c2 = take[~first]
        i2[c2] = cand[~first] - width
        v2[c2] = values[c2, cand[~first] - width]
        active[idx] = improved

    swap = v1 > v2
    v1_, v2_ = np.where(swap, v2, v1), np.where(swap, v1, v2)
    d1 = np.abs(values - v1_[:, None])
    d2 = np.abs(values - v2_[:, None])
    to_first = (d1 < d2) | (d1 == d2)  # distance ties go to the lower-valued medoid
    count1 = (to_first & present).sum(axis=1)
    count2 = n_present - count1
    separation = np.abs(v2_ - v1_)
    return separation, ok & (count1 >= 2) & (count2 >= 2)


def _separation_matrix(matrix: np.ndarray, window: int, max_iterations: int) -> np.ndarray:
    """(T, J) medoid separations; -inf where ineligible (t < window) or invalid."""
    n, n_aps = matrix.shape
    if n < window:
        raise WindowTooLarge(f"trace length {n} is shorter than the window {window}")
    out = np.full((n, n_aps), -np.inf)
    if n == window:
        return out
    # window ending at index i covers rows i-window+1 .. i, defined for i >= window
    runs = sliding_window_view(matrix, window, axis=0)[1:]  # (n-window, J, W)
    flat = runs.reshape(-1, window)
    sep = np.empty(flat.shape[0])
    valid = np.empty(flat.shape[0], dtype=bool)
    for start in range(0, flat.shape[0], _PAM_CHUNK):
        stop = min(start + _PAM_CHUNK, flat.shape[0])
        sep[start:stop], valid[start:stop] = _pam_chunk(np.ascontiguousarray(flat[start:stop]), max_iterations)
    block = np.where(valid, sep, -np.inf).reshape(n - window, n_aps)
    out[window:] = block
    return out


def _ecod_scores(diffs: np.ndarray) -> np.ndarray:
    """Outlier score per row of a (N, J) difference matrix with NaN missing.

    Per column: left/right ECDF over the present samples (denominator = the
    present count). Per row: three aggregates over its present columns
    (sum of -log left tails, sum of -log right tails, and the per-column
    skewness-selected mix); the score is the max of the three.
    """
    n_rows, n_cols = diffs.shape
    left = np.zeros(n_rows)
    right = np.zeros(n_rows)
    mixed = np.zeros(n_rows)
    for j in range(n_cols):
        col = diffs[:, j]
        mask = np.isfinite(col)
        vals = col[mask]
        if vals.size == 0:
            continue
        order = np.sort(vals)
        f_left = np.searchsorted(order, vals, side="right") / vals.size
        f_right = (vals.size - np.searchsorted(order, vals, side="left")) / vals.size
        term_left = -np.log(f_left)
        term_right = -np.log(f_right)
        col_skew = float(skew(vals)) if order[0] != order[-1] else 0.0
        left[mask] += term_left
        right[mask] += term_right
        mixed[mask] += term_left if col_skew < 0.0 else term_right
    return np.maximum(np.maximum(left, right), mixed)


class ClusteringDetector(ScoreThresholdDetector):
    """Per-AP sliding-window 2-medoid separation, thresholded at theta."""

    knob_name = "theta"
    knob_bounds = (0.0, 100.0)

    def __init__(
        self,
        window: int = 30,
        theta: float = 5.0,
        max_iterations: int = 50,
        target_fpr: float | None = None,
    ) -> None:
        self.window = window
        self.theta = theta
        self.max_iterations = max_iterations
        self.target_fpr = target_fpr

    def _params(self) -> ClusteringParams:
        return ClusteringParams(window=self.window, theta=self.theta, max_iterations=self.max_iterations)

    def profile(self, trace: Sequence[Scan]) -> tuple[np.ndarray, tuple[ApId, ...]]:
        """((T, J) per-AP separations with -inf for ineligible, AP id order)."""
        self._params()
        trace = check_trace(trace)
        matrix, ap_ids = _trace_matrix(trace)
        return _separation_matrix(matrix, self.window, self.max_iterations), ap_ids

    def scores(self, trace: Sequence[Scan]) -> np.ndarray:
        separations, _ = self.profile(trace)
        return separations.max(axis=1)

    def verdicts(self, trace: Sequence[Scan], theta: float | None = None) -> list[BaselineVerdict]:
        trace = check_trace(trace)
        knob = self.knob() if theta is None else float(theta)
        separations, ap_ids = self.profile(trace)
        out = []
        for i, scan in enumerate(trace):
            hot = np.flatnonzero(separations[i] > knob)
            out.append(
                BaselineVerdict(
                    t=scan.t,
                    alarm=bool(hot.size),
                    score=float(separations[i].max()),
                    rogue=frozenset(ap_ids[j] for j in hot),
                )
            )
        return out


class EcodDetector(ScoreThresholdDetector):
    """Aggregated ECDF-tail outlier score on per-AP lag differences.

    Scores every timestamp from lag onward; earlier rows get -inf (no
    difference exists yet). Attribution to individual APs is out of scope:
    verdict rogue sets are always empty.
    """

    knob_name = "threshold"
    knob_bounds = (0.0, 1e6)

    def __init__(self, threshold: float = 10.0, lag: int = 1, target_fpr: float | None = None) -> None:
        self.threshold = threshold
        self.lag = lag
        self.target_fpr = target_fpr

    def scores(self, trace: Sequence[Scan]) -> np.ndarray:
        EcodParams(lag=self.lag)
        trace = check_trace(trace)
        matrix, _ = _trace_matrix(trace)
        out = np.full(len(trace), -np.inf)
        if len(trace) <= self.lag:
            return out
        diffs = matrix[self.lag :] - matrix[: -self.lag]
        out[self.lag :] = _ecod_scores(diffs)
        return out

    def verdicts(self, trace: Sequence[Scan], threshold: float | None = None) -> list[BaselineVerdict]:
        trace = check_trace(trace)
        knob = self.knob() if threshold is None else float(threshold)
        scores = self.scores(trace)
        return [
            BaselineVerdict(t=scan.t, alarm=bool(scores[i] > knob), score=float(scores[i]), rogue=frozenset())
            for i, scan in enumerate(trace)
        ]


def kmedoid_detect(trace: Sequence[Scan], params: ClusteringParams) -> list[BaselineVerdict]:
    """Clustering detection at a fixed theta; alarm iff any AP's separation > theta."""
    det = ClusteringDetector(window=params.window, theta=params.theta, max_iterations=params.max_iterations)
    return det.verdicts(trace)


def ecod_detect(trace: Sequence[Scan], params: EcodParams) -> list[BaselineVerdict]:
    """Tail-probability detection at a fixed threshold; rogue sets stay empty."""
    det = EcodDetector(threshold=params.threshold, lag=params.lag)
    return det.verdicts(trace)
