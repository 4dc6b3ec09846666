"""Positioning backend tests: fingerprint WKNN and weighted least squares."""

import numpy as np
import pytest

from rapdet import PathLossModel, SceneConfig, Trajectory, generate_scene
from rapdet.errors import AllScoresZero, SubsetTooSmall
from rapdet.geo import GeoPoint, LocalFrame, LocalPoint
from rapdet.model import ApRegistry, FingerprintDatabase, Scan
from rapdet.positioning import NlsPositioner, WknnPositioner, similarity

FRAME = LocalFrame(origin=GeoPoint(47.0, 8.0, 0.0))


def _fp(t, rssi, east, north, up=0.0):
    return Scan(t=t, rssi=rssi, truth=FRAME.to_geo(LocalPoint(east, north, up)))


# --- similarity ------------------------------------------------------------


def test_similarity_mixed_differences():
    q = {"1": -50.0, "2": -60.0}
    fp = {"1": -50.0, "2": -65.0, "3": -80.0}
    assert similarity(q, fp, d_min=1.0) == pytest.approx(1.2)


def test_similarity_identical_clamps_to_d_min():
    q = {"a": -40.0, "b": -55.0, "c": -70.0, "d": -82.0}
    assert similarity(q, dict(q), d_min=1.0) == pytest.approx(4.0)
    assert similarity(q, dict(q), d_min=0.5) == pytest.approx(8.0)


def test_similarity_disjoint_is_zero():
    assert similarity({"a": -40.0}, {"b": -40.0}) == 0.0


def test_similarity_shrinks_with_growing_difference():
    q = {"a": -50.0}
    scores = [similarity(q, {"a": -50.0 - delta}) for delta in (0.0, 1.0, 2.0, 5.0, 20.0)]
    assert all(x >= y for x, y in zip(scores, scores[1:]))


# --- WKNN ------------------------------------------------------------------


def test_wknn_two_neighbor_weighted_mean():
    """Scores 1 and 3 at (0,0,0) and (2,0,0) average to (1.5,0,0), sigma 1/2."""
    db = FingerprintDatabase(
        entries=(
            _fp(0, {"a": -53.0, "b": -63.0, "c": -73.0}, 0.0, 0.0),
            _fp(1, {"a": -50.0, "b": -60.0, "c": -70.0}, 2.0, 0.0),
        )
    )
    pos = WknnPositioner(k=2, d_min=1.0).fit(db, FRAME)
    est = pos.estimate({"a": -50.0, "b": -60.0, "c": -70.0}, ("a", "b", "c"))
    assert est.position.east == pytest.approx(1.5)
    assert est.position.north == pytest.approx(0.0)
    assert est.position.up == pytest.approx(0.0)
    assert est.sigma == pytest.approx((0.5, 0.5, 0.5))


def test_wknn_coincident_neighbors():
    db = FingerprintDatabase(
        entries=(
            _fp(0, {"a": -50.0}, 7.0, -3.0, 1.0),
            _fp(1, {"a": -58.0}, 7.0, -3.0, 1.0),
        )
    )
    pos = WknnPositioner(k=2).fit(db, FRAME)
    est = pos.estimate({"a": -51.0}, ("a",))
    assert (est.position.east, est.position.north, est.position.up) == pytest.approx((7.0, -3.0, 1.0))


def test_wknn_exact_match_k1():
    db = FingerprintDatabase(
        entries=(
            _fp(0, {"a": -50.0, "b": -60.0}, 1.0, 2.0),
            _fp(1, {"a": -70.0, "b": -80.0}, 9.0, 9.0),
        )
    )
    pos = WknnPositioner(k=1).fit(db, FRAME)
    est = pos.estimate({"a": -70.0, "b": -80.0}, ("a", "b"))
    assert (est.position.east, est.position.north) == pytest.approx((9.0, 9.0))


def test_wknn_tie_prefers_earlier_fingerprint():
    # same score at t=0 and t=1; k=1 must take t=0
    db = FingerprintDatabase(
        entries=(
            _fp(0, {"a": -50.0}, 0.0, 0.0),
            _fp(1, {"a": -50.0}, 10.0, 0.0),
        )
    )
    pos = WknnPositioner(k=1).fit(db, FRAME)
    est = pos.estimate({"a": -50.0}, ("a",))
    assert est.position.east == pytest.approx(0.0)


def test_wknn_no_overlap_raises():
    db = FingerprintDatabase(entries=(_fp(0, {"a": -50.0}, 0.0, 0.0),))
    pos = WknnPositioner(k=1).fit(db, FRAME)
    with pytest.raises(AllScoresZero):
        pos.estimate({"zz": -50.0}, ("zz",))


# --- NLS -------------------------------------------------------------------


def _registry(points):
    return ApRegistry(
        {name: FRAME.to_geo(LocalPoint(e, n, u)) for name, (e, n, u) in points.items()}
    )


def test_nls_equal_weights_find_centroid():
    reg = _registry({"a": (0.0, 0.0, 0.0), "b": (10.0, 0.0, 0.0), "c": (5.0, 10.0, 0.0)})
    pos = NlsPositioner().fit(reg, FRAME)
    est = pos.estimate({"a": -60.0, "b": -60.0, "c": -60.0}, ("a", "b", "c"))
    assert est.position.east == pytest.approx(5.0, abs=1e-3)
    assert est.position.north == pytest.approx(10.0 / 3.0, abs=1e-3)


def test_nls_local_minimum_probes():
    """Objective rises for half-meter probes along each axis."""
    reg = _registry({"a": (0.0, 0.0, 0.0), "b": (10.0, 0.0, 0.0), "c": (5.0, 10.0, 0.0)})
    pos = NlsPositioner().fit(reg, FRAME)
    rssi = {"a": -55.0, "b": -65.0, "c": -62.0}
    est = pos.estimate(rssi, ("a", "b", "c"))
    anchors = np.array([[0.0, 0.0], [10.0, 0.0], [5.0, 10.0]])
    w = np.array([1.0 / (rssi[ap] + 100.0) for ap in ("a", "b", "c")])

    def cost(pt):
        return float(np.sum((w * np.hypot(*(anchors - pt).T)) ** 2))

    center = np.array([est.position.east, est.position.north])
    base = cost(center)
    for probe in ([0.5, 0.0], [-0.5, 0.0], [0.0, 0.5], [0.0, -0.5]):
        assert cost(center + probe) > base


def test_nls_duplicate_anchors_converge():
    reg = _registry({"a": (0.0, 0.0, 0.0), "b": (0.0, 0.0, 0.0), "c": (10.0, 0.0, 0.0)})
    pos = NlsPositioner().fit(reg, FRAME)
    est = pos.estimate({"a": -50.0, "b": -80.0, "c": -60.0}, ("a", "b", "c"))
    assert np.isfinite([est.position.east, est.position.north, est.position.up]).all()
    assert est.sigma[0] > 1e-3  # conflicting readings leave residual


def test_nls_rejects_small_subsets():
    reg = _registry({"a": (0.0, 0.0, 0.0), "b": (10.0, 0.0, 0.0), "c": (5.0, 10.0, 0.0)})
    pos = NlsPositioner().fit(reg, FRAME)
    with pytest.raises(SubsetTooSmall):
        pos.estimate({"a": -50.0, "b": -60.0}, ("a", "b"))


def test_nls_height_is_weighted_ap_mean():
    reg = _registry({"a": (0.0, 0.0, 4.0), "b": (10.0, 0.0, 4.0), "c": (5.0, 10.0, 4.0)})
    pos = NlsPositioner().fit(reg, FRAME)
    est = pos.estimate({"a": -60.0, "b": -60.0, "c": -60.0}, ("a", "b", "c"))
    assert est.position.up == pytest.approx(4.0, abs=1e-6)


def test_nls_inverse_distance_weights_recover_truth():
    """With exact 1/d weights the solution lands within 1 m of ground truth.

    A 0.25 m brute-force grid over the scene rectangle doubles as the oracle
    for both the bound and the solver's agreement with the global minimizer.
    The scan is one where the client passes near an AP, so the inverse-square
    weights concentrate on an anchor that is itself near the truth.
    """
    cfg = SceneConfig(
        path_loss=PathLossModel(shadowing_sigma=0.0),
        trajectory=Trajectory(waypoints=((30.0, 20.0), (140.0, 70.0)), speed_mps=1.2, duration=101),
        rng_seed=5,
    )
    scene = generate_scene(cfg, include_fingerprints=False)
    pos = NlsPositioner().fit(scene.registry, scene.frame)
    scan = scene.trace[39]
    truth = scene.frame.to_local(scan.truth)
    anchors, weights = [], []
    rssi = {}
    for ap in scene.registry.ap_ids():
        p = scene.frame.to_local(scene.registry[ap])
        d = float(np.hypot(p.east - truth.east, p.north - truth.north))
        rssi[ap] = pos.rss_floor + d  # makes w_j exactly 1/d_j
        anchors.append((p.east, p.north))
        weights.append(1.0 / d)
    est = pos.estimate(rssi, tuple(scene.registry.ap_ids()))
    err = np.hypot(est.position.east - truth.east, est.position.north - truth.north)
    assert err < 1.0

    anchors = np.array(anchors)
    weights = np.array(weights)
    xs = np.arange(0.0, cfg.width + 0.25, 0.25)
    ys = np.arange(0.0, cfg.depth + 0.25, 0.25)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    costs = np.zeros(len(grid))
    for (ax, ay), w in zip(anchors, weights):
        costs += (w * np.hypot(grid[:, 0] - ax, grid[:, 1] - ay)) ** 2
    best = grid[int(np.argmin(costs))]
    assert np.hypot(best[0] - truth.east, best[1] - truth.north) < 1.0
    assert np.hypot(best[0] - est.position.east, best[1] - est.position.north) < 0.5


def test_backends_are_deterministic():
    reg = _registry({"a": (0.0, 0.0, 3.0), "b": (10.0, 0.0, 3.0), "c": (5.0, 10.0, 3.0)})
    pos = NlsPositioner().fit(reg, FRAME)
    rssi = {"a": -48.0, "b": -66.0, "c": -59.0}
    e1 = pos.estimate(rssi, ("a", "b", "c"))
    e2 = pos.estimate(rssi, ("a", "b", "c"))
    assert e1.position == e2.position
    assert e1.sigma == e2.sigma
