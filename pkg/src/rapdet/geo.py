"""WGS-84 coordinates and the local east/north/up frame used for positioning.

All positioning math runs in a local metric frame anchored at a scene origin.
The projection is equirectangular on a spherical Earth, which is accurate to
well under a centimeter at building scale and exactly invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0

_DEG_TO_M = EARTH_RADIUS_M * math.pi / 180.0


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A WGS-84 position: latitude/longitude in degrees, height in meters."""

    lat: float
    lon: float
    height: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.lat) or not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"lat must be in [-90, 90], got {self.lat}")
        if not math.isfinite(self.lon) or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"lon must be in [-180, 180], got {self.lon}")
        if not math.isfinite(self.height):
            raise ValueError(f"height must be finite, got {self.height}")


@dataclass(frozen=True, slots=True)
class LocalPoint:
    """A point in a local east/north/up frame, meters."""

    east: float
    north: float
    up: float = 0.0

    def __post_init__(self) -> None:
        for field in ("east", "north", "up"):
            if not math.isfinite(getattr(self, field)):
                raise ValueError(f"{field} must be finite, got {getattr(self, field)}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.east, self.north, self.up)


@dataclass(frozen=True, slots=True)
class LocalFrame:
    """Converter between geodetic coordinates and a local ENU frame.

    east  = (lon - lon0) * cos(lat0) * R * pi/180
    north = (lat - lat0) * R * pi/180
    up    = height - height0
    """

    origin: GeoPoint

    def to_local(self, point: GeoPoint) -> LocalPoint:
        cos_lat0 = math.cos(math.radians(self.origin.lat))
        return LocalPoint(
            east=(point.lon - self.origin.lon) * cos_lat0 * _DEG_TO_M,
            north=(point.lat - self.origin.lat) * _DEG_TO_M,
            up=point.height - self.origin.height,
        )

    def to_geo(self, point: LocalPoint) -> GeoPoint:
        cos_lat0 = math.cos(math.radians(self.origin.lat))
        return GeoPoint(
            lat=self.origin.lat + point.north / _DEG_TO_M,
            lon=self.origin.lon + point.east / (cos_lat0 * _DEG_TO_M),
            height=self.origin.height + point.up,
        )


def to_local(origin: GeoPoint, point: GeoPoint) -> LocalPoint:
    return LocalFrame(origin).to_local(point)


def from_local(origin: GeoPoint, point: LocalPoint) -> GeoPoint:
    return LocalFrame(origin).to_geo(point)


def local_distance(a: GeoPoint, b: GeoPoint) -> float:
    """3-D distance in meters between two nearby geodetic points.

    Uses the ENU frame anchored at ``a``; only valid at building/site scale.
    """
    p = LocalFrame(a).to_local(b)
    return math.sqrt(p.east**2 + p.north**2 + p.up**2)
