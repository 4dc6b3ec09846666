"""Shared fixtures: a reference frame and a hand-built degenerate scene.

The degenerate scene puts seven anchors at exactly one point C and one far
anchor Z whose true signal sits below the usable floor. Every clean subset
then estimates exactly C, so the mixture has zero benign spread and the
replacement attack produces an analytically exact two-cluster split.
"""

import numpy as np
import pytest

from rapdet import PathLossModel
from rapdet.geo import GeoPoint, LocalFrame, LocalPoint
from rapdet.model import ApRegistry, Scan

ORIGIN = GeoPoint(47.0, 8.0, 0.0)

BLOB_C = (20.0, 20.0, 3.0)
BLOB_Z = (80.0, 20.0, 3.0)
BLOB_MODEL = PathLossModel(rss_at_1m=-30.0, exponent=4.0, shadowing_sigma=0.0)


@pytest.fixture
def frame():
    return LocalFrame(origin=ORIGIN)


def blob_positions():
    """Seven co-located anchors plus one 60 m east; ap00 is the far one."""
    positions = {f"ap{i:02d}": BLOB_C for i in range(1, 8)}
    positions["ap00"] = BLOB_Z
    return positions


def blob_registry(frame):
    return ApRegistry(
        {ap: frame.to_geo(LocalPoint(*p)) for ap, p in blob_positions().items()}
    )


def blob_rss(position):
    d = float(np.linalg.norm(np.subtract(position, BLOB_C)))
    return BLOB_MODEL.rss_at_1m - 10.0 * BLOB_MODEL.exponent * float(
        np.log10(max(d, BLOB_MODEL.min_distance))
    )


def blob_trace(frame, n_steps=30):
    """Static client at C; the far AP reads its true (unusable) level."""
    truth = frame.to_geo(LocalPoint(*BLOB_C))
    base = {ap: blob_rss(p) for ap, p in blob_positions().items()}
    return [Scan(t=t, rssi=dict(base), truth=truth) for t in range(n_steps)]
