"""Calibration to fixed false-positive rates and the measurement harness.

Calibration binary-searches a detector's knob for the largest sensitivity
whose benign alarm fraction stays at or under the target. Because every
detector reduces a trace to knob-independent scores, the expensive profiling
runs once per trace and each probe of the search just re-thresholds cached
scores.

Rates are pooled over timestamps (not averaged per trace): benign pools mix
the out-of-window timestamps of attacked traces with fully benign traces, and
true-positive rates pool the labeled-active timestamps of a whole attack kind.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from .attacks import AttackCase, AttackKind, AttackLabel, make_attack_suite
from .base import ScoreThresholdDetector, check_trace
from .baselines import ClusteringDetector, EcodDetector
from .errors import AllSubsetsFailed, CalibrationError, NonMonotoneDetector
from .model import Scan
from .positioning import NlsPositioner, WknnPositioner
from .raim import GmRaimDetector
from .scene import Scene, SceneConfig, generate_scene
from .subsets import SubsetPlan

ROC_COLUMNS = ("method", "attack", "sigma_adv", "target_fpr", "achieved_fpr", "tpr_detect", "tpr_exclude", "knob")
RECOVERY_COLUMNS = ("case", "attack", "sigma_adv", "target_fpr", "knob", "active_count", "rmse_before", "rmse_after")
SAMPLING_COLUMNS = ("ratio", "mean_tpr", "n_seeds", "min_tpr", "max_tpr")

MIN_BENIGN_TIMESTAMPS = 100


@dataclass(frozen=True, slots=True)
class RocPoint:
    """One calibrated operating point of one detector on one attack kind."""

    target_fpr: float
    achieved_fpr: float
    tpr_detect: float
    tpr_exclude: float | None
    knob: float

    def __post_init__(self) -> None:
        if self.achieved_fpr > self.target_fpr + 0.005:
            raise ValueError(
                f"achieved FPR {self.achieved_fpr} exceeds target {self.target_fpr} by more than 0.005"
            )


@dataclass(frozen=True, slots=True)
class RecoveryReport:
    """Positioning error with and without the voted exclusions applied."""

    rmse_before: float
    rmse_after: float
    t: tuple[int, ...]
    errors_before: tuple[float, ...]
    errors_after: tuple[float, ...]

    def __post_init__(self) -> None:
        for err in (*self.errors_before, *self.errors_after, self.rmse_before, self.rmse_after):
            if not math.isfinite(err) or err < 0.0:
                raise ValueError(f"errors must be finite and >= 0, got {err}")


def _alarm_fraction(detector: ScoreThresholdDetector, scores: np.ndarray, knob: float) -> float:
    return float(np.mean(detector.alarms_at(scores, knob)))


def calibrate_scores(
    detector: ScoreThresholdDetector,
    benign_scores: np.ndarray,
    target_fpr: float,
    *,
    iterations: int = 60,
) -> float:
    """Binary-search the knob for the most sensitive value with FPR <= target.

    The search direction is discovered from the two knob bounds, so a knob
    whose sensitivity grows in either direction is handled; a probe whose
    alarm fraction falls outside the current bracket raises
    NonMonotoneDetector, and CalibrationError means even the least sensitive
    knob misses the target.
    """
    scores = np.asarray(benign_scores, dtype=float)
    if scores.size < MIN_BENIGN_TIMESTAMPS:
        raise ValueError(f"calibration needs >= {MIN_BENIGN_TIMESTAMPS} benign timestamps, got {scores.size}")
    if not 0.0 <= target_fpr <= 1.0:
        raise ValueError(f"target_fpr must be in [0, 1], got {target_fpr}")
    lo, hi = detector.knob_bounds
    f_lo = _alarm_fraction(detector, scores, lo)
    f_hi = _alarm_fraction(detector, scores, hi)
    if f_lo >= f_hi:
        sens, cons, f_sens, f_cons = lo, hi, f_lo, f_hi
    else:
        sens, cons, f_sens, f_cons = hi, lo, f_hi, f_lo
    if f_sens <= target_fpr:
        return float(sens)
    if f_cons > target_fpr:
        raise CalibrationError(
            f"benign alarm fraction {f_cons:.4f} at the least sensitive knob exceeds the target {target_fpr}"
        )
    a, f_a = sens, f_sens  # fraction above target
    b, f_b = cons, f_cons  # fraction at or below target
    for _ in range(iterations):
        mid = 0.5 * (a + b)
        f_mid = _alarm_fraction(detector, scores, mid)
        if not min(f_a, f_b) <= f_mid <= max(f_a, f_b):
            raise NonMonotoneDetector(
                f"benign alarm fraction {f_mid:.4f} at knob {mid!r} leaves the bracket [{f_b:.4f}, {f_a:.4f}]"
            )
        if f_mid <= target_fpr:
            b, f_b = mid, f_mid
        else:
            a, f_a = mid, f_mid
    return float(b)


def calibrate(detector: ScoreThresholdDetector, benign_trace: Sequence[Scan], target_fpr: float) -> float:
    """Calibrate on one benign trace (>= 100 timestamps)."""
    trace = check_trace(benign_trace)
    if len(trace) < MIN_BENIGN_TIMESTAMPS:
        raise ValueError(f"calibration needs >= {MIN_BENIGN_TIMESTAMPS} benign timestamps, got {len(trace)}")
    return calibrate_scores(detector, detector.scores(trace), target_fpr)


# --- per-trace artifacts -----------------------------------------------------
#
# The harness computes whatever expensive state a detector needs exactly once
# per trace, then reuses it across every calibration target. Exclusion sets
# are only defined for detectors that attribute alarms to APs.


def _trace_artifacts(detector: ScoreThresholdDetector, trace: list[Scan]) -> tuple[str, Any]:
    if isinstance(detector, GmRaimDetector):
        return ("gm", detector.profile_trace(trace))
    if isinstance(detector, ClusteringDetector):
        return ("clustering", detector.profile(trace))
    return ("scores", detector.scores(trace))


def _artifact_scores(artifact: tuple[str, Any]) -> np.ndarray:
    kind, payload = artifact
    if kind == "gm":
        return payload.zmax
    if kind == "clustering":
        separations, _ = payload
        return separations.max(axis=1)
    return payload


def _artifact_rogues(
    detector: ScoreThresholdDetector, artifact: tuple[str, Any], trace: list[Scan], knob: float
) -> list[frozenset] | None:
    kind, payload = artifact
    if kind == "gm":
        return [dec.rogue for dec in detector.decisions_from_profile(payload, knob)]
    if kind == "clustering":
        separations, ap_ids = payload
        return [frozenset(ap_ids[j] for j in np.flatnonzero(row > knob)) for row in separations]
    return None


def evaluate_detection(
    detector: ScoreThresholdDetector,
    cases: Sequence[AttackCase],
    targets: Iterable[float],
    benign_traces: Sequence[Sequence[Scan]] = (),
) -> dict[tuple[str, float], list[RocPoint]]:
    """Calibrated ROC points per (attack kind, sigma_adv) group.

    One knob per target, calibrated on the pooled benign timestamps of all
    cases plus the extra benign traces; TPRs pool the labeled-active
    timestamps within each group. Timestamps a detector cannot score (warmup
    of sliding windows, first lag rows) still count toward both pools.
    """
    if not cases:
        raise ValueError("cases must be non-empty")
    traces = [check_trace(case.trace) for case in cases]
    artifacts = [_trace_artifacts(detector, trace) for trace in traces]
    case_scores = [_artifact_scores(art) for art in artifacts]
    active_masks = [np.array([lab.active for lab in case.labels], dtype=bool) for case in cases]
    pool_parts = [s[~m] for s, m in zip(case_scores, active_masks)]
    pool_parts += [_artifact_scores(_trace_artifacts(detector, check_trace(b))) for b in benign_traces]
    pool = np.concatenate(pool_parts)

    groups: dict[tuple[str, float], list[int]] = {}
    for i, case in enumerate(cases):
        groups.setdefault((case.spec.kind.value, case.spec.sigma_adv), []).append(i)

    out: dict[tuple[str, float], list[RocPoint]] = {key: [] for key in groups}
    for target in targets:
        knob = calibrate_scores(detector, pool, float(target))
        achieved = _alarm_fraction(detector, pool, knob)
        for key, idxs in groups.items():
            tp = 0
            n_active = 0
            excl_tp: int | None = 0
            for i in idxs:
                alarms = detector.alarms_at(case_scores[i], knob)
                rogues = _artifact_rogues(detector, artifacts[i], traces[i], knob)
                for j, label in enumerate(cases[i].labels):
                    if not label.active:
                        continue
                    n_active += 1
                    if alarms[j]:
                        tp += 1
                        if rogues is not None and excl_tp is not None and label.rogue_aps <= rogues[j]:
                            excl_tp += 1
                if rogues is None:
                    excl_tp = None
            out[key].append(
                RocPoint(
                    target_fpr=float(target),
                    achieved_fpr=achieved,
                    tpr_detect=tp / n_active,
                    tpr_exclude=None if excl_tp is None else excl_tp / n_active,
                    knob=knob,
                )
            )
    return out


def evaluate_exclusion(verdicts: Sequence[Any], labels: Sequence[AttackLabel]) -> float:
    """Fraction of labeled-active timestamps with an alarm naming the true rogue."""
    if len(verdicts) != len(labels):
        raise ValueError("verdicts and labels must align")
    n_active = sum(1 for lab in labels if lab.active)
    if n_active == 0:
        raise ValueError("labels mark no active timestamps")
    tp = sum(
        1
        for verdict, lab in zip(verdicts, labels)
        if lab.active and verdict.alarm and lab.rogue_aps <= frozenset(verdict.rogue)
    )
    return tp / n_active


def over_exclusion_count(verdicts: Sequence[Any], labels: Sequence[AttackLabel]) -> int:
    """Total APs excluded beyond the true rogue set, over active timestamps."""
    if len(verdicts) != len(labels):
        raise ValueError("verdicts and labels must align")
    return sum(
        len(frozenset(verdict.rogue) - lab.rogue_aps)
        for verdict, lab in zip(verdicts, labels)
        if lab.active
    )


def evaluate_recovery(
    positioner: WknnPositioner | NlsPositioner,
    verdicts: Sequence[Any],
    trace: Sequence[Scan],
    labels: Sequence[AttackLabel] | None = None,
) -> RecoveryReport:
    """Horizontal RMSE vs truth before and after exclusion.

    Scope: the labeled-active timestamps (the whole trace when labels are
    absent or mark nothing). "Before" positions each scoped scan with all its
    APs; "after" takes the verdict's recovered position, falling back to the
    before-position when no exclusion happened, which is what a consumer of
    the verdict stream experiences.
    """
    trace = check_trace(trace)
    if len(verdicts) != len(trace):
        raise ValueError("verdicts and trace must align")
    if labels is not None and len(labels) != len(trace):
        raise ValueError("labels and trace must align")
    if labels is not None and any(lab.active for lab in labels):
        scope = [i for i, lab in enumerate(labels) if lab.active]
    else:
        scope = list(range(len(trace)))
    for i in scope:
        if trace[i].truth is None:
            raise ValueError(f"t={trace[i].t}: recovery evaluation needs ground-truth positions")
    queries = [trace[i] for i in scope]
    batches = positioner.position_subsets_trace(queries, [[scan.ap_ids()] for scan in queries])
    t_list: list[int] = []
    before: list[float] = []
    after: list[float] = []
    for i, batch in zip(scope, batches):
        if not batch.ok[0]:
            raise AllSubsetsFailed(f"t={trace[i].t}: full-AP positioning failed")
        truth = positioner.frame_.to_local(trace[i].truth)
        bx, by = float(batch.positions[0][0]), float(batch.positions[0][1])
        err_before = math.hypot(bx - truth.east, by - truth.north)
        rec = verdicts[i].recovered
        if rec is not None:
            err_after = math.hypot(rec.position.east - truth.east, rec.position.north - truth.north)
        else:
            err_after = err_before
        t_list.append(trace[i].t)
        before.append(err_before)
        after.append(err_after)
    return RecoveryReport(
        rmse_before=math.sqrt(sum(e * e for e in before) / len(before)),
        rmse_after=math.sqrt(sum(e * e for e in after) / len(after)),
        t=tuple(t_list),
        errors_before=tuple(before),
        errors_after=tuple(after),
    )


# --- sampling-ratio sweep ----------------------------------------------------


@dataclass(frozen=True, slots=True)
class SamplingPoint:
    ratio: float
    mean_tpr: float
    tprs: tuple[float, ...]


def fit_positioner(scene: Scene, backend: str) -> WknnPositioner | NlsPositioner:
    """Bind the chosen positioning backend to a generated scene."""
    if backend == "distance":
        return NlsPositioner().fit(scene.registry, scene.frame)
    if backend == "fingerprint":
        if scene.fingerprints is None:
            raise ValueError("scene was generated without fingerprints; regenerate with the fingerprint backend")
        return WknnPositioner().fit(scene.fingerprints, scene.frame)
    raise ValueError(f"backend must be 'distance' or 'fingerprint', got {backend!r}")


def _sweep_seed_task(args: tuple) -> list[float]:
    scene_config, seed, ratios, target_fpr, sigma_adv, traces_per_seed, backend = args
    config = replace(scene_config, rng_seed=int(seed))
    scene = generate_scene(config, include_fingerprints=(backend == "fingerprint"))
    positioner = fit_positioner(scene, backend)
    suite = make_attack_suite(
        scene,
        seeds=[int(seed) * 1000 + i for i in range(traces_per_seed)],
        sigma_adv=sigma_adv,
        kinds=(AttackKind.ADDITIVE_GAIN,),
    )
    tprs: list[float] = []
    for ratio in ratios:
        detector = GmRaimDetector(positioner, plan=SubsetPlan(ratio=float(ratio), rng_seed=int(seed)))
        case_scores = [detector.profile_trace(list(case.trace)).zmax for case in suite]
        masks = [np.array([lab.active for lab in case.labels], dtype=bool) for case in suite]
        pool_parts = [s[~m] for s, m in zip(case_scores, masks)]
        pool_parts.append(detector.profile_trace(list(scene.trace)).zmax)
        knob = calibrate_scores(detector, np.concatenate(pool_parts), target_fpr)
        active = np.concatenate([s[m] for s, m in zip(case_scores, masks)])
        tprs.append(_alarm_fraction(detector, active, knob))
    return tprs


def run_tasks(fn, argses: Sequence, workers: int = 1) -> list:
    """Run tasks in order; results are independent of the worker count."""
    if workers <= 1:
        return [fn(a) for a in argses]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, argses))


def sampling_sweep(
    scene_config: SceneConfig,
    seeds: Sequence[int],
    ratios: Sequence[float] = (0.25, 0.4, 0.7, 1.0),
    *,
    target_fpr: float = 0.05,
    sigma_adv: float = 2.0,
    traces_per_seed: int = 4,
    backend: str = "distance",
    workers: int = 1,
) -> list[SamplingPoint]:
    """Detection TPR of the subset detector at several sampling ratios.

    Each seed builds its own scene and an additive-gain attack suite; every
    ratio is calibrated to the target FPR on that seed's pooled benign
    timestamps. Returns one point per ratio with per-seed TPRs attached.
    """
    if not seeds:
        raise ValueError("seeds must be non-empty")
    args = [
        (scene_config, seed, tuple(ratios), target_fpr, sigma_adv, traces_per_seed, backend)
        for seed in seeds
    ]
    per_seed = run_tasks(_sweep_seed_task, args, workers)
    out = []
    for k, ratio in enumerate(ratios):
        tprs = tuple(row[k] for row in per_seed)
        out.append(SamplingPoint(ratio=float(ratio), mean_tpr=sum(tprs) / len(tprs), tprs=tprs))
    return out


# --- CSV output ---------------------------------------------------------------


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> None:
    """Deterministic CSV: fixed column order, repr floats, '' for missing."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(col)) for col in columns])


def roc_rows(
    method: str, grouped: dict[tuple[str, float], list[RocPoint]]
) -> list[dict[str, Any]]:
    """Flatten evaluate_detection output into roc.csv rows."""
    rows = []
    for (attack, sigma_adv) in sorted(grouped):
        for point in grouped[(attack, sigma_adv)]:
            rows.append(
                {
                    "method": method,
                    "attack": attack,
                    "sigma_adv": sigma_adv,
                    "target_fpr": point.target_fpr,
                    "achieved_fpr": point.achieved_fpr,
                    "tpr_detect": point.tpr_detect,
                    "tpr_exclude": point.tpr_exclude,
                    "knob": point.knob,
                }
            )
    return rows


def sampling_rows(points: Sequence[SamplingPoint]) -> list[dict[str, Any]]:
    return [
        {
            "ratio": p.ratio,
            "mean_tpr": p.mean_tpr,
            "n_seeds": len(p.tprs),
            "min_tpr": min(p.tprs),
            "max_tpr": max(p.tprs),
        }
        for p in points
    ]
