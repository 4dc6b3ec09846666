"""Subset-consistency rogue AP detection.

Per timestamp: position every sampled AP subset, fuse the estimates with
inverse-sigma weights, flag subsets whose deviation from the fused point
exceeds mean + n_lambda * std (population), vote flagged membership against
unflagged membership to name rogue APs, and re-position without them.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np

from .base import ScoreThresholdDetector, check_trace
from .errors import AllSubsetsFailed, EmptyMixture, TooFewAps
from .geo import LocalPoint
from .model import ApId, PositionEstimate, Scan
from .positioning import NlsPositioner, WknnPositioner
from .subsets import SubsetPlan, enumerate_subsets, sample_subsets


@dataclass(frozen=True, slots=True)
class RaimParams:
    """Detector-core knobs.

    variance_convention is pinned to "population" (the threshold uses the
    uncorrected variance of the deviations); the field exists so configs state
    it explicitly. strict_inequality=False flags deviations equal to the
    threshold as well, which only matters in zero-variance corners.
    """

    n_lambda: float = 3.0
    variance_convention: str = "population"
    strict_inequality: bool = True
    exclusion: str = "vote"

    def __post_init__(self) -> None:
        if self.n_lambda < 0.0:
            raise ValueError(f"n_lambda must be >= 0, got {self.n_lambda}")
        if self.variance_convention != "population":
            raise ValueError(f"variance_convention must be 'population', got {self.variance_convention!r}")
        if self.exclusion not in ("vote", "intersection"):
            raise ValueError(f"exclusion must be 'vote' or 'intersection', got {self.exclusion!r}")


def _fuse_arrays(positions: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Inverse-sigma weighted mean: (sum p/sigma) / (sum 1/sigma), per axis.

    positions (L, 3); sigmas (L, 3) or (L,) broadcast to all axes.
    """
    if positions.ndim != 2 or positions.shape[0] == 0:
        raise EmptyMixture("cannot fuse zero estimates")
    sig = np.asarray(sigmas, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    inv = 1.0 / sig
    return (positions * inv).sum(axis=0) / (inv * np.ones_like(positions)).sum(axis=0)


def fuse(estimates: Sequence[PositionEstimate]) -> LocalPoint:
    """Fuse subset estimates into one position (inverse-sigma weights)."""
    if not estimates:
        raise EmptyMixture("cannot fuse zero estimates")
    pos = np.array([e.position.as_tuple() for e in estimates])
    sig = np.array([e.sigma for e in estimates])
    fused = _fuse_arrays(pos, sig)
    return LocalPoint(*(float(x) for x in fused))


def deviations(estimates: Sequence[PositionEstimate], fused: LocalPoint) -> np.ndarray:
    """Euclidean 3-D distance of each subset estimate from the fused point."""
    pos = np.array([e.position.as_tuple() for e in estimates])
    return np.linalg.norm(pos - np.array(fused.as_tuple()), axis=1)


def deviation_threshold(ds: Iterable[float], n_lambda: float) -> float:
    """Lambda = mean(d) + n_lambda * sqrt(population variance of d)."""
    arr = np.asarray(list(ds), dtype=float)
    if arr.size == 0:
        raise ValueError("deviation list must be non-empty")
    if n_lambda < 0.0:
        raise ValueError(f"n_lambda must be >= 0, got {n_lambda}")
    return float(arr.mean() + n_lambda * math.sqrt(float(arr.var())))


def flag_subsets(ds: Iterable[float], threshold: float, *, strict: bool = True) -> set[int]:
    """1-based indexes of deviations above the threshold (strictly by default)."""
    if strict:
        return {l + 1 for l, d in enumerate(ds) if d > threshold}
    return {l + 1 for l, d in enumerate(ds) if d >= threshold}


def exclude_intersection(subsets: Sequence[Iterable[ApId]], flagged: Iterable[int]) -> frozenset[ApId]:
    """APs common to every flagged subset (1-based indexes); empty if none flagged."""
    flagged = sorted(set(flagged))
    if not flagged:
        return frozenset()
    result: set[ApId] | None = None
    for l in flagged:
        aps = set(subsets[l - 1])
        result = aps if result is None else result & aps
    return frozenset(result or set())


def exclude_vote(subsets: Sequence[Iterable[ApId]], flagged: Iterable[int]) -> frozenset[ApId]:
    """APs whose flagged-subset membership strictly outnumbers unflagged membership."""
    flagged_set = set(flagged)
    counts: dict[ApId, list[int]] = {}
    for l, subset in enumerate(subsets, start=1):
        hit = l in flagged_set
        for ap in subset:
            a_b = counts.setdefault(ap, [0, 0])
            a_b[0 if hit else 1] += 1
    return frozenset(ap for ap, (a, b) in counts.items() if a > b)


class TimestepDecision(NamedTuple):
    """Knob-dependent part of a verdict, derived from a cached profile."""

    threshold: float
    flagged: tuple[int, ...]  # 1-based indexes into the timestep's subset list
    rogue: frozenset[ApId]


@dataclass(frozen=True, slots=True)
class TimestepVerdict:
    """Detection outcome for one timestamp."""

    t: int
    alarm: bool
    fused: LocalPoint
    threshold: float
    deviations: tuple[float | None, ...]  # None where positioning failed
    flagged: tuple[int, ...]  # 1-based indexes into `subsets`
    rogue: frozenset[ApId]
    subsets: tuple[tuple[ApId, ...], ...]
    failed: tuple[int, ...]  # 1-based indexes of dropped subsets
    recovered: PositionEstimate | None = None

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "t": self.t,
            "alarm": self.alarm,
            "fused": [self.fused.east, self.fused.north, self.fused.up],
            "lambda": self.threshold,
            "flagged": list(self.flagged),
            "rogue": sorted(self.rogue),
        }
        if self.recovered is not None:
            p = self.recovered.position
            out["recovered"] = [p.east, p.north, p.up]
        return out


@dataclass(slots=True)
class GmTraceProfile:
    """Knob-independent per-timestep detection state for one trace."""

    t: np.ndarray  # (T,) time indexes
    subsets_per_t: list[list[tuple[ApId, ...]]]
    ds: list[np.ndarray]  # per t: (L_t,) deviations, NaN where failed
    ok: list[np.ndarray]  # per t: (L_t,) bool
    fused: np.ndarray  # (T, 3)
    zmax: np.ndarray  # (T,) max standardized deviation; +-inf when degenerate

    def __len__(self) -> int:
        return len(self.t)


class GmRaimDetector(ScoreThresholdDetector):
    """Subset-mixture consistency detector with voting exclusion and recovery.

    positioner: a fitted WknnPositioner or NlsPositioner. The calibration knob
    is n_lambda (higher = fewer alarms), searched in [0, 10].
    """

    knob_name = "n_lambda"
    knob_bounds = (0.0, 10.0)

    def __init__(
        self,
        positioner: WknnPositioner | NlsPositioner,
        plan: SubsetPlan | None = None,
        n_lambda: float = 3.0,
        exclusion: str = "vote",
        strict_inequality: bool = True,
        target_fpr: float | None = None,
    ) -> None:
        self.positioner = positioner
        self.plan = plan
        self.n_lambda = n_lambda
        self.exclusion = exclusion
        self.strict_inequality = strict_inequality
        self.target_fpr = target_fpr
        # sampling is deterministic in (plan.rng_seed, salt), so draws can be
        # reused across traces that share an AP set and time index
        self._enum_cache: dict = {}
        self._sample_cache: dict = {}

    @classmethod
    def from_params(
        cls,
        positioner: WknnPositioner | NlsPositioner,
        params: RaimParams,
        plan: SubsetPlan | None = None,
        target_fpr: float | None = None,
    ) -> "GmRaimDetector":
        return cls(
            positioner,
            plan=plan,
            n_lambda=params.n_lambda,
            exclusion=params.exclusion,
            strict_inequality=params.strict_inequality,
            target_fpr=target_fpr,
        )

    def alarms_at(self, scores: np.ndarray, knob: float) -> np.ndarray:
        s = np.asarray(scores)
        return s > knob if self.strict_inequality else s >= knob

    def _plan(self) -> SubsetPlan:
        return self.plan if self.plan is not None else SubsetPlan()

    def _subsets_for(self, scan: Scan) -> list[tuple[ApId, ...]]:
        plan = self._plan()
        ap_ids = scan.ap_ids()
        if len(ap_ids) < plan.min_size:
            raise TooFewAps(f"t={scan.t}: {len(ap_ids)} APs visible, need >= {plan.min_size}")
        if plan.ratio >= 1.0:
            full = self._enum_cache.get(ap_ids)
            if full is None:
                full = self._enum_cache[ap_ids] = enumerate_subsets(ap_ids, plan)
            return full
        key = (ap_ids, scan.t)
        sampled = self._sample_cache.get(key)
        if sampled is None:
            full = self._enum_cache.get(ap_ids)
            if full is None:
                full = self._enum_cache[ap_ids] = enumerate_subsets(ap_ids, plan)
            sampled = self._sample_cache[key] = sample_subsets(full, plan, salt=scan.t)
        return sampled

    def profile_trace(self, trace: Sequence[Scan]) -> GmTraceProfile:
        """Position all subsets, fuse, and compute deviations for a whole trace."""
        trace = check_trace(trace)
        if self.exclusion not in ("vote", "intersection"):
            raise ValueError(f"exclusion must be 'vote' or 'intersection', got {self.exclusion!r}")
        subsets_per_t = [self._subsets_for(scan) for scan in trace]
        batches = self.positioner.position_subsets_trace(trace, subsets_per_t)
        n = len(trace)
        fused = np.empty((n, 3))
        zmax = np.empty(n)
        ds_list: list[np.ndarray] = []
        ok_list: list[np.ndarray] = []
        for i, (scan, batch) in enumerate(zip(trace, batches)):
            ok = batch.ok
            if not ok.any():
                raise AllSubsetsFailed(f"t={scan.t}: every subset failed to position")
            pos_ok = batch.positions[ok]
            f = _fuse_arrays(pos_ok, batch.sigmas[ok])
            fused[i] = f
            d = np.full(len(ok), np.nan)
            d[ok] = np.linalg.norm(pos_ok - f, axis=1)
            ds_list.append(d)
            ok_list.append(ok)
            d_ok = d[ok]
            std = float(d_ok.std())
            if std > 0.0:
                zmax[i] = (float(d_ok.max()) - float(d_ok.mean())) / std
            else:
                # all deviations equal: no knob can flag strictly, any flags non-strictly
                zmax[i] = -math.inf if self.strict_inequality else math.inf
        return GmTraceProfile(
            t=np.array([s.t for s in trace]),
            subsets_per_t=subsets_per_t,
            ds=ds_list,
            ok=ok_list,
            fused=fused,
            zmax=zmax,
        )

    def scores(self, trace: Sequence[Scan]) -> np.ndarray:
        """Max standardized deviation per timestamp (alarm iff score > n_lambda)."""
        return self.profile_trace(trace).zmax

    def decisions_from_profile(
        self, profile: GmTraceProfile, n_lambda: float | None = None
    ) -> list[TimestepDecision]:
        """Threshold, flag, and vote each timestep of a cached profile at a knob.

        Failed subsets take part in neither the threshold nor the vote. The
        vote is computed as counts through a subset-membership matrix; it
        agrees with exclude_vote / exclude_intersection on the same inputs.
        """
        knob = self.knob() if n_lambda is None else float(n_lambda)
        if knob < 0.0:
            raise ValueError(f"n_lambda must be >= 0, got {knob}")
        strict = self.strict_inequality
        vote = self.exclusion == "vote"
        memb_cache: dict[tuple[tuple[ApId, ...], ...], tuple[tuple[ApId, ...], np.ndarray]] = {}
        out: list[TimestepDecision] = []
        for i in range(len(profile)):
            subsets = profile.subsets_per_t[i]
            ok_idx = np.flatnonzero(profile.ok[i])
            d_ok = profile.ds[i][ok_idx]
            # same formula as deviation_threshold (population std), kept inline
            # because this runs once per timestep per calibration target
            lam = float(d_ok.mean() + knob * d_ok.std())
            hits = (d_ok > lam) if strict else (d_ok >= lam)
            key = tuple(subsets)
            entry = memb_cache.get(key)
            if entry is None:
                ap_order = tuple(sorted({ap for s in subsets for ap in s}))
                ap_pos = {ap: j for j, ap in enumerate(ap_order)}
                memb = np.zeros((len(subsets), len(ap_order)))
                for l, subset in enumerate(subsets):
                    for ap in subset:
                        memb[l, ap_pos[ap]] = 1.0
                entry = (ap_order, memb)
                memb_cache[key] = entry
            ap_order, memb = entry
            memb_ok = memb[ok_idx]
            a = hits.astype(float) @ memb_ok
            if vote:
                rogue_mask = a > (memb_ok.sum(axis=0) - a)
            else:
                n_flagged = int(hits.sum())
                rogue_mask = (a == n_flagged) & (n_flagged > 0)
            out.append(
                TimestepDecision(
                    threshold=lam,
                    flagged=tuple(int(l) + 1 for l in ok_idx[hits]),
                    rogue=frozenset(ap_order[j] for j in np.flatnonzero(rogue_mask)),
                )
            )
        return out

    def verdicts_from_profile(
        self,
        trace: Sequence[Scan],
        profile: GmTraceProfile,
        n_lambda: float | None = None,
        *,
        with_recovery: bool = True,
    ) -> list[TimestepVerdict]:
        """Apply a knob value to a cached profile; optionally re-position survivors."""
        trace = check_trace(trace)
        if len(trace) != len(profile):
            raise ValueError("trace and profile lengths differ")
        decisions = self.decisions_from_profile(profile, n_lambda)
        plan = self._plan()
        recovery_queries: list[Scan] = []
        recovery_subsets: list[list[tuple[ApId, ...]]] = []
        recovery_slots: list[int] = []
        if with_recovery:
            for i, (scan, dec) in enumerate(zip(trace, decisions)):
                remaining = tuple(sorted(set(scan.ap_ids()) - dec.rogue))
                if len(remaining) >= plan.min_size:
                    recovery_queries.append(scan)
                    recovery_subsets.append([remaining])
                    recovery_slots.append(i)
        recovered: dict[int, PositionEstimate] = {}
        if recovery_queries:
            rec = self.positioner.position_subsets_trace(recovery_queries, recovery_subsets)
            for slot, batch in zip(recovery_slots, rec):
                if batch.ok[0]:
                    e, n, u = batch.positions[0]
                    s = float(batch.sigmas[0])
                    recovered[slot] = PositionEstimate(
                        position=LocalPoint(float(e), float(n), float(u)), sigma=(s, s, s)
                    )
        out = []
        for i, (scan, dec) in enumerate(zip(trace, decisions)):
            subsets = profile.subsets_per_t[i]
            ok = profile.ok[i]
            d = profile.ds[i]
            out.append(
                TimestepVerdict(
                    t=scan.t,
                    alarm=bool(dec.flagged),
                    fused=LocalPoint(*(float(x) for x in profile.fused[i])),
                    threshold=dec.threshold,
                    deviations=tuple(float(d[l]) if ok[l] else None for l in range(len(subsets))),
                    flagged=dec.flagged,
                    rogue=dec.rogue,
                    subsets=tuple(tuple(s) for s in subsets),
                    failed=tuple(int(l) + 1 for l in np.flatnonzero(~ok)),
                    recovered=recovered.get(i),
                )
            )
        return out

    def detect_trace(self, trace: Sequence[Scan], *, with_recovery: bool = True) -> list[TimestepVerdict]:
        trace = check_trace(trace)
        profile = self.profile_trace(trace)
        return self.verdicts_from_profile(trace, profile, with_recovery=with_recovery)

    def detect_timestep(self, scan: Scan) -> TimestepVerdict:
        """Full detection pipeline for a single scan."""
        return self.detect_trace([scan])[0]
