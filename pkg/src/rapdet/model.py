"""Domain types: scans, fingerprint databases, AP registries, position estimates."""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field

from .geo import GeoPoint, LocalPoint

ApId = str


@dataclass(frozen=True, slots=True)
class Scan:
    """One RSSI observation epoch.

    rssi maps AP id to received power in dBm. Keys are unique by construction
    (dict); values must be finite. truth is the client's ground-truth position
    when known (required for fingerprints, optional for runtime traces).
    """

    t: int
    rssi: Mapping[ApId, float]
    truth: GeoPoint | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.t, int):
            raise ValueError(f"t must be an int, got {type(self.t).__name__}")
        if not self.rssi:
            raise ValueError(f"scan t={self.t}: rssi must be non-empty")
        for ap, value in self.rssi.items():
            if not isinstance(ap, str) or not ap:
                raise ValueError(f"scan t={self.t}: AP ids must be non-empty strings")
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"scan t={self.t}: rssi[{ap!r}] must be finite, got {value!r}")

    def ap_ids(self) -> tuple[ApId, ...]:
        return tuple(sorted(self.rssi))


@dataclass(frozen=True, slots=True)
class FingerprintDatabase:
    """Reference scans taken at known positions, strictly ordered by time index."""

    entries: tuple[Scan, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("fingerprint database must be non-empty")
        prev = None
        for scan in self.entries:
            if scan.truth is None:
                raise ValueError(f"fingerprint t={scan.t}: truth position is required")
            if prev is not None and scan.t <= prev:
                raise ValueError(f"fingerprint t={scan.t}: entries must be strictly increasing in t")
            prev = scan.t

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Scan]:
        return iter(self.entries)

    def ap_ids(self) -> tuple[ApId, ...]:
        """Sorted union of AP ids appearing anywhere in the database."""
        ids: set[ApId] = set()
        for scan in self.entries:
            ids.update(scan.rssi)
        return tuple(sorted(ids))


@dataclass(frozen=True, slots=True)
class ApRegistry:
    """Surveyed AP positions keyed by AP id."""

    positions: Mapping[ApId, GeoPoint] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", dict(self.positions))
        if not self.positions:
            raise ValueError("AP registry must be non-empty")
        for ap, pos in self.positions.items():
            if not isinstance(ap, str) or not ap:
                raise ValueError("AP ids must be non-empty strings")
            if not isinstance(pos, GeoPoint):
                raise ValueError(f"registry[{ap!r}] must be a GeoPoint")

    def __contains__(self, ap: object) -> bool:
        return ap in self.positions

    def __getitem__(self, ap: ApId) -> GeoPoint:
        return self.positions[ap]

    def __len__(self) -> int:
        return len(self.positions)

    def ap_ids(self) -> tuple[ApId, ...]:
        return tuple(sorted(self.positions))


@dataclass(frozen=True, slots=True)
class PositionEstimate:
    """A position in the local frame with a per-axis 1-sigma uncertainty."""

    position: LocalPoint
    sigma: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.sigma) != 3:
            raise ValueError("sigma must have three components")
        object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))
        for s in self.sigma:
            if not math.isfinite(s) or s <= 0.0:
                raise ValueError(f"sigma components must be finite and > 0, got {s}")
