"""Positioning backends: fingerprint WKNN and weighted-distance least squares.

Both are sklearn-style estimators: ``fit`` binds the reference data (fingerprint
database / AP registry) and a local frame; ``estimate`` positions one AP subset
of one scan; ``position_subsets_trace`` runs whole traces of subset mixtures
through vectorized kernels (the subset detector's hot path).
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from .errors import AllScoresZero, ApNotInRegistry, SubsetTooSmall
from .geo import LocalFrame, LocalPoint
from .model import ApId, ApRegistry, FingerprintDatabase, PositionEstimate, Scan


class SubsetBatch(NamedTuple):
    """Positions for one timestep's subsets; rows align with the subset list."""

    positions: np.ndarray  # (L, 3) local ENU, NaN rows where ok is False
    sigmas: np.ndarray  # (L,) isotropic per-axis sigma
    ok: np.ndarray  # (L,) bool


def similarity(
    query: Mapping[ApId, float],
    fingerprint: Mapping[ApId, float] | Scan,
    d_min: float = 1.0,
) -> float:
    """Sum over shared APs of 1 / max(|query - fingerprint|, d_min).

    ``query`` should already be restricted to the AP subset under test.
    APs absent from either side contribute zero, so the result is >= 0 and
    bounded by len(query) / d_min.
    """
    if d_min <= 0.0:
        raise ValueError(f"d_min must be > 0, got {d_min}")
    fp = fingerprint.rssi if isinstance(fingerprint, Scan) else fingerprint
    total = 0.0
    for ap, value in query.items():
        if ap in fp:
            total += 1.0 / max(abs(value - fp[ap]), d_min)
    return total


def _check_fitted(estimator: BaseEstimator, attr: str) -> None:
    if not hasattr(estimator, attr):
        raise RuntimeError(f"{type(estimator).__name__} must be fit before use")


def _top_k_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row, ties broken by lower column index.

    scores: (C, N) with N >= k. Returns (C, k). Fast path is argpartition; only
    rows where the k-th value ties across the boundary pay for the exact
    resolution, and those are handled as one vectorized batch.
    """
    n_rows, n = scores.shape
    if k >= n:
        return np.tile(np.arange(n), (n_rows, 1))
    part = np.argpartition(scores, (n - k - 1, n - k), axis=1)
    top = np.ascontiguousarray(part[:, n - k :])
    # positions n-k-1 and n-k hold the (k+1)-th and k-th largest values; a
    # boundary tie exists exactly when they are equal
    edge = np.take_along_axis(scores, part[:, n - k - 1 : n - k + 1], axis=1)
    ambiguous = np.flatnonzero(edge[:, 0] == edge[:, 1])
    if ambiguous.size:
        sub = scores[ambiguous]
        v = edge[ambiguous, 1][:, None]
        greater = sub > v
        equal = sub == v
        # fill the slots left by strict winners with the lowest-index ties
        need = k - greater.sum(axis=1)
        keep = equal & (np.cumsum(equal, axis=1) <= need[:, None])
        top[ambiguous] = np.nonzero(greater | keep)[1].reshape(ambiguous.size, k)
    return top


class WknnPositioner(BaseEstimator):
    """Weighted K-nearest-neighbor positioning over a fingerprint database.

    Fingerprints are scored by ``similarity``; the position is the score-weighted
    mean of the top-k fingerprint positions and the per-axis sigma is the
    reciprocal of the mean top-k score, clamped to ``sigma_bounds``.
    """

    def __init__(
        self,
        k: int = 3,
        d_min: float = 1.0,
        sigma_bounds: tuple[float, float] = (1e-3, 1e3),
        time_block: int = 16,
    ) -> None:
        self.k = k
        self.d_min = d_min
        self.sigma_bounds = sigma_bounds
        self.time_block = time_block

    def fit(self, database: FingerprintDatabase, frame: LocalFrame) -> "WknnPositioner":
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.d_min <= 0.0:
            raise ValueError(f"d_min must be > 0, got {self.d_min}")
        if len(database) < self.k:
            raise ValueError(f"database has {len(database)} entries but k={self.k}")
        ids = database.ap_ids()
        index = {ap: j for j, ap in enumerate(ids)}
        rssi = np.full((len(database), len(ids)), np.nan)
        pos = np.empty((len(database), 3))
        for i, scan in enumerate(database):
            for ap, value in scan.rssi.items():
                rssi[i, index[ap]] = value
            p = frame.to_local(scan.truth)
            pos[i] = (p.east, p.north, p.up)
        self.ap_ids_ = ids
        self.ap_index_ = index
        self.fp_rssi_ = rssi
        self.fp_pos_ = pos
        self.frame_ = frame
        return self

    def _query_row(self, rssi: Mapping[ApId, float]) -> np.ndarray:
        q = np.full(len(self.ap_ids_), np.nan)
        for ap, value in rssi.items():
            j = self.ap_index_.get(ap)
            if j is not None:
                q[j] = value
        return q

    def _contributions(self, queries: np.ndarray) -> np.ndarray:
        """(B, J, N) per-AP similarity contributions; zero where either side is absent."""
        diff = np.abs(queries[:, :, None] - self.fp_rssi_.T[None, :, :])
        with np.errstate(invalid="ignore"):
            contrib = 1.0 / np.maximum(diff, self.d_min)
        return np.nan_to_num(contrib, nan=0.0, posinf=0.0)

    def _positions_from_scores(self, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """scores (C, N) -> positions (C, 3), sigmas (C,), ok (C,)."""
        top = _top_k_rows(scores, self.k)
        f = np.take_along_axis(scores, top, axis=1)  # (C, k)
        sum_f = f.sum(axis=1)
        ok = sum_f > 0.0
        safe = np.where(ok, sum_f, 1.0)
        pos = np.einsum("ck,ckd->cd", f, self.fp_pos_[top]) / safe[:, None]
        pos[~ok] = np.nan
        lo, hi = self.sigma_bounds
        with np.errstate(divide="ignore"):
            sigma = np.clip(1.0 / np.maximum(f.mean(axis=1), 1e-300), lo, hi)
        return pos, sigma, ok

    def position_subsets(self, rssi: Mapping[ApId, float], subsets: Sequence[tuple[ApId, ...]]) -> SubsetBatch:
        return self.position_subsets_trace([rssi], [list(subsets)])[0]

    def position_subsets_trace(
        self,
        queries: Sequence[Mapping[ApId, float] | Scan],
        subsets_per_t: Sequence[Sequence[tuple[ApId, ...]]],
    ) -> list[SubsetBatch]:
        """Vectorized positioning of every subset of every timestep."""
        _check_fitted(self, "fp_rssi_")
        if len(queries) != len(subsets_per_t):
            raise ValueError("queries and subsets_per_t must have equal length")
        n_aps = len(self.ap_ids_)
        out: list[SubsetBatch | None] = [None] * len(queries)
        block = max(1, int(self.time_block))
        mask_cache: dict[tuple[tuple[ApId, ...], ...], np.ndarray] = {}
        for start in range(0, len(queries), block):
            idx = range(start, min(start + block, len(queries)))
            rows = []
            masks = []
            for i in idx:
                scan = queries[i]
                rssi = scan.rssi if isinstance(scan, Scan) else scan
                rows.append(self._query_row(rssi))
                key = tuple(subsets_per_t[i])
                mask = mask_cache.get(key)
                if mask is None:
                    mask = np.zeros((len(key), n_aps))
                    for l, subset in enumerate(key):
                        for ap in subset:
                            j = self.ap_index_.get(ap)
                            if j is not None:
                                mask[l, j] = 1.0
                    mask_cache[key] = mask
                masks.append(mask)
            l_max = max(m.shape[0] for m in masks)
            padded = np.zeros((len(masks), l_max, n_aps))
            for b, m in enumerate(masks):
                padded[b, : m.shape[0], :] = m
            contrib = self._contributions(np.asarray(rows))  # (B, J, N)
            scores = np.matmul(padded, contrib)  # (B, L_max, N)
            b_size, _, n_fp = scores.shape
            pos, sigma, ok = self._positions_from_scores(scores.reshape(b_size * l_max, n_fp))
            for b, i in enumerate(idx):
                n_subsets = masks[b].shape[0]
                sl = slice(b * l_max, b * l_max + n_subsets)
                out[i] = SubsetBatch(positions=pos[sl], sigmas=sigma[sl], ok=ok[sl].copy())
        return [batch for batch in out if batch is not None]

    def estimate(self, rssi: Mapping[ApId, float] | Scan, subset: Iterable[ApId]) -> PositionEstimate:
        """Position one subset of one scan; raises AllScoresZero on no overlap."""
        _check_fitted(self, "fp_rssi_")
        rssi = rssi.rssi if isinstance(rssi, Scan) else rssi
        subset = tuple(subset)
        if not subset:
            raise SubsetTooSmall("subset must be non-empty")
        missing = [ap for ap in subset if ap not in rssi]
        if missing:
            raise ValueError(f"subset APs absent from the query scan: {missing}")
        batch = self.position_subsets({ap: rssi[ap] for ap in subset}, [subset])
        if not batch.ok[0]:
            raise AllScoresZero(f"no fingerprint shares an AP with subset {subset}")
        e, n, u = batch.positions[0]
        s = float(batch.sigmas[0])
        return PositionEstimate(position=LocalPoint(float(e), float(n), float(u)), sigma=(s, s, s))


def _solve_weighted_gn(
    anchors: np.ndarray,
    weights: np.ndarray,
    *,
    damping: float,
    step_tol: float,
    max_iterations: int,
    init: np.ndarray | None = None,
    track_costs: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Damped Gauss-Newton on f(p) = sum_j (w_j * ||a_j - p||)^2, batched.

    anchors: (B, m, 2), weights: (B, m). Starts from the w^2-weighted centroid
    unless ``init`` overrides it (property tests). Steps are only applied when
    they do not increase the cost; damping is multiplied up on rejection and
    relaxed on acceptance. Iteration stops per-problem when the computed step
    norm falls below step_tol. Returns (positions (B,2), costs (B,), history).
    """
    w2 = weights * weights
    sum_w2 = w2.sum(axis=1)
    if init is None:
        p = (w2[:, :, None] * anchors).sum(axis=1) / sum_w2[:, None]
    else:
        p = np.array(init, dtype=float, copy=True)

    def cost_at(points: np.ndarray) -> np.ndarray:
        d2 = ((points[:, None, :] - anchors) ** 2).sum(axis=2)
        return (w2 * d2).sum(axis=1)

    cost = cost_at(p)
    history = [cost.copy()] if track_costs else []
    lam = np.full(len(p), damping)
    active = np.ones(len(p), dtype=bool)
    for _ in range(max_iterations):
        if not active.any():
            break
        diff = p[:, None, :] - anchors  # (B, m, 2)
        dist = np.sqrt((diff**2).sum(axis=2))
        safe = np.maximum(dist, 1e-12)
        r = weights * dist
        jx = weights * diff[:, :, 0] / safe
        jy = weights * diff[:, :, 1] / safe
        g1 = (jx * r).sum(axis=1)
        g2 = (jy * r).sum(axis=1)
        h11 = (jx * jx).sum(axis=1) + lam
        h22 = (jy * jy).sum(axis=1) + lam
        h12 = (jx * jy).sum(axis=1)
        det = h11 * h22 - h12 * h12
        dx = -(h22 * g1 - h12 * g2) / det
        dy = -(h11 * g2 - h12 * g1) / det
        step = np.hypot(dx, dy)
        trial = p + np.where(active[:, None], np.column_stack([dx, dy]), 0.0)
        trial_cost = cost_at(trial)
        accept = active & (trial_cost <= cost)
        p = np.where(accept[:, None], trial, p)
        cost = np.where(accept, trial_cost, cost)
        lam = np.where(accept, np.maximum(lam * 0.1, 1e-12), np.where(active, lam * 10.0, lam))
        active = active & ~(step < step_tol)
        if track_costs:
            history.append(cost.copy())
    return p, cost, history


class NlsPositioner(BaseEstimator):
    """Weighted least squares against surveyed AP positions.

    Minimizes sum_j (w_j * ||a_j - p||)^2 with w_j = 1/(RSS_j - rss_floor) over
    the horizontal plane; height is pinned to the w^2-weighted mean AP height.
    The per-axis sigma is sqrt(cost / max(m - 2, 1)) clamped to sigma_bounds.
    """

    def __init__(
        self,
        rss_floor: float = -100.0,
        max_iterations: int = 100,
        step_tol: float = 1e-4,
        damping: float = 1e-3,
        sigma_bounds: tuple[float, float] = (1e-3, 1e3),
    ) -> None:
        self.rss_floor = rss_floor
        self.max_iterations = max_iterations
        self.step_tol = step_tol
        self.damping = damping
        self.sigma_bounds = sigma_bounds

    def fit(self, registry: ApRegistry, frame: LocalFrame) -> "NlsPositioner":
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.step_tol <= 0.0 or self.damping <= 0.0:
            raise ValueError("step_tol and damping must be > 0")
        ids = registry.ap_ids()
        self.ap_ids_ = ids
        self.ap_index_ = {ap: j for j, ap in enumerate(ids)}
        xyz = np.empty((len(ids), 3))
        for j, ap in enumerate(ids):
            p = frame.to_local(registry[ap])
            xyz[j] = (p.east, p.north, p.up)
        self.ap_xyz_ = xyz
        self.frame_ = frame
        return self

    def _weights_row(self, rssi: Mapping[ApId, float]) -> np.ndarray:
        """Strengths above the floor for the fitted AP universe; NaN where unusable."""
        w = np.full(len(self.ap_ids_), np.nan)
        for ap, value in rssi.items():
            j = self.ap_index_.get(ap)
            if j is not None and value > self.rss_floor:
                w[j] = 1.0 / (value - self.rss_floor)
        return w

    def position_subsets(self, rssi: Mapping[ApId, float], subsets: Sequence[tuple[ApId, ...]]) -> SubsetBatch:
        return self.position_subsets_trace([rssi], [list(subsets)])[0]

    def position_subsets_trace(
        self,
        queries: Sequence[Mapping[ApId, float] | Scan],
        subsets_per_t: Sequence[Sequence[tuple[ApId, ...]]],
    ) -> list[SubsetBatch]:
        """Vectorized positioning of every subset of every timestep.

        Subsets referencing APs missing from the registry or readings at/below
        rss_floor come back with ok=False instead of raising; single-subset
        ``estimate`` raises the typed errors.
        """
        _check_fitted(self, "ap_xyz_")
        if len(queries) != len(subsets_per_t):
            raise ValueError("queries and subsets_per_t must have equal length")
        weight_rows = []
        for scan in queries:
            rssi = scan.rssi if isinstance(scan, Scan) else scan
            weight_rows.append(self._weights_row(rssi))
        weight_matrix = np.asarray(weight_rows) if weight_rows else np.empty((0, len(self.ap_ids_)))

        index_cache: dict[tuple[tuple[ApId, ...], ...], list[tuple[int, np.ndarray, np.ndarray]]] = {}
        by_size: dict[int, list[np.ndarray]] = {}
        by_size_t: dict[int, list[np.ndarray]] = {}
        by_size_pos: dict[int, list[np.ndarray]] = {}
        n_subsets_per_t = []
        for t, subsets in enumerate(subsets_per_t):
            key = tuple(subsets)
            n_subsets_per_t.append(len(key))
            groups = index_cache.get(key)
            if groups is None:
                sizes: dict[int, tuple[list[list[int]], list[int]]] = {}
                for l, subset in enumerate(key):
                    row = [self.ap_index_.get(ap, -1) for ap in subset]
                    idx_rows, orig = sizes.setdefault(len(subset), ([], []))
                    idx_rows.append(row)
                    orig.append(l)
                groups = [
                    (k, np.asarray(rows, dtype=np.intp), np.asarray(orig, dtype=np.intp))
                    for k, (rows, orig) in sizes.items()
                ]
                index_cache[key] = groups
            for k, rows, orig in groups:
                by_size.setdefault(k, []).append(rows)
                by_size_t.setdefault(k, []).append(np.full(len(rows), t, dtype=np.intp))
                by_size_pos.setdefault(k, []).append(orig)

        offsets = np.concatenate([[0], np.cumsum(n_subsets_per_t)])
        total = int(offsets[-1])
        flat_pos = np.full((total, 3), np.nan)
        flat_sigma = np.full(total, np.nan)
        flat_ok = np.zeros(total, dtype=bool)
        lo, hi = self.sigma_bounds
        for k, idx_list in by_size.items():
            if k < 3:
                continue  # too small for the solver: recorded as failed in batch mode
            idx = np.concatenate(idx_list)  # (B, k)
            t_row = np.concatenate(by_size_t[k])
            orig = np.concatenate(by_size_pos[k])
            known = (idx >= 0).all(axis=1)
            w = np.where(known[:, None], weight_matrix[t_row[:, None], np.maximum(idx, 0)], np.nan)
            valid = known & np.isfinite(w).all(axis=1)
            if not valid.any():
                continue
            anchors = self.ap_xyz_[idx[valid]]  # (B', k, 3)
            wv = w[valid]
            xy, cost, _ = _solve_weighted_gn(
                anchors[:, :, :2],
                wv,
                damping=self.damping,
                step_tol=self.step_tol,
                max_iterations=self.max_iterations,
            )
            w2 = wv * wv
            up = (w2 * anchors[:, :, 2]).sum(axis=1) / w2.sum(axis=1)
            sigma = np.clip(np.sqrt(cost / max(k - 2, 1)), lo, hi)
            flat_idx = offsets[t_row[valid]] + orig[valid]
            flat_pos[flat_idx, 0] = xy[:, 0]
            flat_pos[flat_idx, 1] = xy[:, 1]
            flat_pos[flat_idx, 2] = up
            flat_sigma[flat_idx] = sigma
            flat_ok[flat_idx] = True
        return [
            SubsetBatch(
                positions=flat_pos[offsets[t] : offsets[t + 1]],
                sigmas=flat_sigma[offsets[t] : offsets[t + 1]],
                ok=flat_ok[offsets[t] : offsets[t + 1]],
            )
            for t in range(len(n_subsets_per_t))
        ]

    def estimate(self, rssi: Mapping[ApId, float] | Scan, subset: Iterable[ApId]) -> PositionEstimate:
        """Position one subset of one scan with typed validation errors."""
        _check_fitted(self, "ap_xyz_")
        rssi = rssi.rssi if isinstance(rssi, Scan) else rssi
        subset = tuple(subset)
        if len(subset) < 3:
            raise SubsetTooSmall(f"distance solver needs >= 3 APs, got {len(subset)}")
        for ap in subset:
            if ap not in self.ap_index_:
                raise ApNotInRegistry(f"AP {ap!r} has no surveyed position")
            if ap not in rssi:
                raise ValueError(f"subset AP {ap!r} absent from the query scan")
            if rssi[ap] <= self.rss_floor:
                raise ValueError(f"rssi[{ap!r}]={rssi[ap]} must be above rss_floor={self.rss_floor}")
        batch = self.position_subsets({ap: rssi[ap] for ap in subset}, [subset])
        e, n, u = batch.positions[0]
        s = float(batch.sigmas[0])
        return PositionEstimate(position=LocalPoint(float(e), float(n), float(u)), sigma=(s, s, s))
