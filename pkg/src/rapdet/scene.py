"""Synthetic indoor scene generator: APs, fingerprint grid, and a walked trace.

Signal model is log-distance path loss with log-normal shadowing:

    RSS(d) = rss_at_1m - 10 * exponent * log10(max(d, min_distance)) + sigma * z

Scenes are fully determined by their config (including the seed): two runs with
the same config produce byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .geo import GeoPoint, LocalFrame, LocalPoint
from .model import ApRegistry, FingerprintDatabase, Scan


@dataclass(frozen=True, slots=True)
class PathLossModel:
    rss_at_1m: float = -40.0
    exponent: float = 3.0
    shadowing_sigma: float = 2.0
    min_distance: float = 1.0

    def __post_init__(self) -> None:
        if not 1.5 <= self.exponent <= 6.0:
            raise ValueError(f"exponent must be in [1.5, 6], got {self.exponent}")
        if self.shadowing_sigma < 0.0:
            raise ValueError(f"shadowing_sigma must be >= 0, got {self.shadowing_sigma}")
        if self.min_distance <= 0.0:
            raise ValueError(f"min_distance must be > 0, got {self.min_distance}")


def rss_from_distance(model: PathLossModel, distance, noise_draw=0.0):
    """Received power in dBm at a distance (meters). Accepts scalars or arrays.

    noise_draw is a standard-normal draw; it is scaled by the model's
    shadowing sigma here so callers can feed raw RNG output.
    """
    d = np.maximum(np.asarray(distance, dtype=float), model.min_distance)
    rss = model.rss_at_1m - 10.0 * model.exponent * np.log10(d)
    rss = rss + model.shadowing_sigma * np.asarray(noise_draw, dtype=float)
    if np.ndim(rss) == 0:
        return float(rss)
    return rss


@dataclass(frozen=True, slots=True)
class Trajectory:
    """Client path: explicit waypoints, or seeded random waypoints.

    Positions are sampled at 1 Hz while moving along the waypoint polyline at
    walking speed. With random waypoints, `duration` bounds the trace length;
    with explicit waypoints the walk ends at the final waypoint.
    """

    waypoints: tuple[tuple[float, float], ...] = ()
    random_waypoints: int = 0
    duration: int | None = None
    speed_mps: float = 1.2
    margin: float = 10.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "waypoints", tuple((float(x), float(y)) for x, y in self.waypoints))
        if bool(self.waypoints) == bool(self.random_waypoints):
            raise ValueError("exactly one of waypoints / random_waypoints must be set")
        if self.waypoints and len(self.waypoints) < 2:
            raise ValueError("need at least two waypoints")
        if self.random_waypoints and self.random_waypoints < 2:
            raise ValueError("random_waypoints must be >= 2")
        if self.speed_mps <= 0.0:
            raise ValueError(f"speed_mps must be > 0, got {self.speed_mps}")


@dataclass(frozen=True, slots=True)
class SceneConfig:
    width: float = 170.0
    depth: float = 90.0
    ap_count: int = 8
    ap_placement: str = "uniform"  # or "perimeter"
    ap_height_range: tuple[float, float] = (3.0, 12.0)
    origin: GeoPoint = field(default_factory=lambda: GeoPoint(30.528, 114.35, 0.0))
    path_loss: PathLossModel = field(default_factory=PathLossModel)
    visibility_floor_dbm: float = -95.0
    fingerprint_grid_step: float = 2.0
    fingerprint_samples: int = 10
    client_height: float = 1.5
    trajectory: Trajectory = field(
        default_factory=lambda: Trajectory(waypoints=((10.0, 10.0), (160.0, 10.0), (160.0, 80.0), (10.0, 80.0)))
    )
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.width <= 0.0 or self.depth <= 0.0:
            raise ValueError("scene width and depth must be > 0")
        if self.ap_count < 4:
            raise ValueError(f"ap_count must be >= 4, got {self.ap_count}")
        if self.ap_placement not in ("uniform", "perimeter"):
            raise ValueError(f"ap_placement must be 'uniform' or 'perimeter', got {self.ap_placement!r}")
        lo, hi = self.ap_height_range
        if lo > hi:
            raise ValueError("ap_height_range must be (low, high) with low <= high")
        if self.fingerprint_grid_step <= 0.0:
            raise ValueError("fingerprint_grid_step must be > 0")
        if self.fingerprint_samples < 1:
            raise ValueError("fingerprint_samples must be >= 1")


@dataclass(frozen=True, slots=True)
class Scene:
    """Generated artifacts plus the frame tying local meters to the origin.

    fingerprints is None when the scene was generated without the grid.
    """

    config: SceneConfig
    registry: ApRegistry
    fingerprints: FingerprintDatabase | None
    trace: tuple[Scan, ...]
    frame: LocalFrame

    def meta(self) -> dict[str, Any]:
        origin = self.frame.origin
        return {
            "origin": [origin.lat, origin.lon, origin.height],
            "seed": self.config.rng_seed,
            "config": scene_config_to_dict(self.config),
        }


def scene_config_to_dict(config: SceneConfig) -> dict[str, Any]:
    traj = config.trajectory
    return {
        "width": config.width,
        "depth": config.depth,
        "ap_count": config.ap_count,
        "ap_placement": config.ap_placement,
        "ap_height_range": list(config.ap_height_range),
        "origin": [config.origin.lat, config.origin.lon, config.origin.height],
        "path_loss": {
            "rss_at_1m": config.path_loss.rss_at_1m,
            "exponent": config.path_loss.exponent,
            "shadowing_sigma": config.path_loss.shadowing_sigma,
            "min_distance": config.path_loss.min_distance,
        },
        "visibility_floor_dbm": config.visibility_floor_dbm,
        "fingerprint_grid_step": config.fingerprint_grid_step,
        "fingerprint_samples": config.fingerprint_samples,
        "client_height": config.client_height,
        "trajectory": {
            "waypoints": [list(w) for w in traj.waypoints],
            "random_waypoints": traj.random_waypoints,
            "duration": traj.duration,
            "speed_mps": traj.speed_mps,
            "margin": traj.margin,
        },
        "rng_seed": config.rng_seed,
    }


def _ap_layout(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """(ap_count, 3) local AP positions."""
    n = config.ap_count
    lo, hi = config.ap_height_range
    heights = rng.uniform(lo, hi, size=n)
    if config.ap_placement == "uniform":
        east = rng.uniform(0.0, config.width, size=n)
        north = rng.uniform(0.0, config.depth, size=n)
        return np.column_stack([east, north, heights])
    # perimeter: equally spaced along the rectangle boundary, deterministic order
    perimeter = 2.0 * (config.width + config.depth)
    offsets = (np.arange(n) + 0.5) / n * perimeter
    east = np.empty(n)
    north = np.empty(n)
    for i, s in enumerate(offsets):
        if s < config.width:
            east[i], north[i] = s, 0.0
        elif s < config.width + config.depth:
            east[i], north[i] = config.width, s - config.width
        elif s < 2.0 * config.width + config.depth:
            east[i], north[i] = 2.0 * config.width + config.depth - s, config.depth
        else:
            east[i], north[i] = 0.0, perimeter - s
    return np.column_stack([east, north, heights])


def _grid_centers(config: SceneConfig) -> np.ndarray:
    """(n_cells, 2) fingerprint cell centers covering the whole rectangle."""
    step = config.fingerprint_grid_step
    nx = max(1, math.ceil(config.width / step))
    ny = max(1, math.ceil(config.depth / step))
    xs = (np.arange(nx) + 0.5) * step
    ys = (np.arange(ny) + 0.5) * step
    xs = np.minimum(xs, config.width)
    ys = np.minimum(ys, config.depth)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _trajectory_points(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """(T, 2) client positions sampled at 1 Hz along the waypoint polyline."""
    traj = config.trajectory
    if traj.waypoints:
        waypoints = np.asarray(traj.waypoints, dtype=float)
    else:
        m = traj.margin
        waypoints = np.column_stack(
            [
                rng.uniform(min(m, config.width / 2), max(config.width - m, config.width / 2), size=traj.random_waypoints),
                rng.uniform(min(m, config.depth / 2), max(config.depth - m, config.depth / 2), size=traj.random_waypoints),
            ]
        )
    seg = np.diff(waypoints, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])
    if total <= 0.0:
        raise ValueError("trajectory waypoints have zero total length")
    n_steps = int(total / traj.speed_mps) + 1
    if traj.duration is not None:
        n_steps = min(n_steps, int(traj.duration))
    if n_steps < 1:
        raise ValueError("trajectory too short for even one sample")
    arc = np.minimum(np.arange(n_steps) * traj.speed_mps, total)
    seg_idx = np.minimum(np.searchsorted(cum, arc, side="right") - 1, len(seg_len) - 1)
    frac = np.where(seg_len[seg_idx] > 0, (arc - cum[seg_idx]) / np.where(seg_len[seg_idx] > 0, seg_len[seg_idx], 1.0), 0.0)
    return waypoints[seg_idx] + frac[:, None] * seg[seg_idx]


def _visible_rss(
    config: SceneConfig,
    ap_xyz: np.ndarray,
    points_xyz: np.ndarray,
    noise: np.ndarray,
) -> np.ndarray:
    """(n_points, n_aps) RSSI with NaN below the visibility floor.

    Visibility is decided on the noise-free model value so that which APs a
    position sees is a property of the scene, not of the shadowing draw.
    """
    d = np.linalg.norm(points_xyz[:, None, :] - ap_xyz[None, :, :], axis=2)
    mean_rss = rss_from_distance(config.path_loss, d, 0.0)
    rss = mean_rss + config.path_loss.shadowing_sigma * noise
    return np.where(mean_rss > config.visibility_floor_dbm, rss, np.nan)


def _ap_names(n: int) -> list[str]:
    return [f"ap{idx:02d}" for idx in range(n)]


def generate_scene(config: SceneConfig, *, include_fingerprints: bool = True) -> Scene:
    """Build registry, fingerprint grid, and a benign walked trace.

    include_fingerprints=False skips the grid (distance-backend pipelines never
    read it) and reuses the same RNG streams, so the registry and trace are
    identical either way.
    """
    root = np.random.SeedSequence(config.rng_seed)
    ap_seq, fp_seq, traj_seq, trace_seq = root.spawn(4)
    frame = LocalFrame(config.origin)

    ap_xyz = _ap_layout(config, np.random.default_rng(ap_seq))
    names = _ap_names(config.ap_count)
    registry = ApRegistry(
        {name: frame.to_geo(LocalPoint(*xyz)) for name, xyz in zip(names, ap_xyz.tolist())}
    )

    if include_fingerprints:
        centers = _grid_centers(config)
        cells_xyz = np.column_stack([centers, np.full(len(centers), config.client_height)])
        fp_rng = np.random.default_rng(fp_seq)
        draws = fp_rng.standard_normal((len(centers), config.ap_count, config.fingerprint_samples))
        rss = _visible_rss(config, ap_xyz, cells_xyz, draws.mean(axis=2))
        entries = []
        for i, cell in enumerate(cells_xyz):
            visible = {names[j]: float(rss[i, j]) for j in range(config.ap_count) if not np.isnan(rss[i, j])}
            if not visible:
                continue
            entries.append(Scan(t=i, rssi=visible, truth=frame.to_geo(LocalPoint(*cell))))
        fingerprints = FingerprintDatabase(tuple(entries))
    else:
        fingerprints = None

    points = _trajectory_points(config, np.random.default_rng(traj_seq))
    points_xyz = np.column_stack([points, np.full(len(points), config.client_height)])
    trace_rng = np.random.default_rng(trace_seq)
    noise = trace_rng.standard_normal((len(points), config.ap_count))
    rss = _visible_rss(config, ap_xyz, points_xyz, noise)
    trace = []
    for t, pos in enumerate(points_xyz):
        visible = {names[j]: float(rss[t, j]) for j in range(config.ap_count) if not np.isnan(rss[t, j])}
        if not visible:
            raise ValueError(f"trajectory point t={t} sees no APs; raise the visibility floor or move APs")
        trace.append(Scan(t=t, rssi=visible, truth=frame.to_geo(LocalPoint(*pos))))

    return Scene(config=config, registry=registry, fingerprints=fingerprints, trace=tuple(trace), frame=frame)
