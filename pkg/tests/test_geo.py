"""Coordinate frame and file round-trip tests."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rapdet.errors import TraceFormatError
from rapdet.geo import GeoPoint, LocalFrame, LocalPoint, from_local, local_distance, to_local
from rapdet.io import load_registry, load_trace, save_registry, save_trace
from rapdet.model import ApRegistry, Scan

ORIGIN = GeoPoint(47.0, 8.0, 400.0)
R_EARTH = 6_371_000.0


def test_origin_maps_to_zero():
    p = to_local(ORIGIN, ORIGIN)
    assert (p.east, p.north, p.up) == (0.0, 0.0, 0.0)


def test_pure_height_offset():
    p = to_local(ORIGIN, GeoPoint(ORIGIN.lat, ORIGIN.lon, ORIGIN.height + 12.0))
    assert (p.east, p.north, p.up) == (0.0, 0.0, 12.0)


def test_one_millidegree_north():
    # 0.001 deg * R * pi/180 = 111.1949 m
    p = to_local(ORIGIN, GeoPoint(ORIGIN.lat + 0.001, ORIGIN.lon, ORIGIN.height))
    assert abs(p.north - 111.19) < 0.01
    assert p.east == 0.0


def test_from_local_identity():
    g = from_local(ORIGIN, LocalPoint(0.0, 0.0, 0.0))
    assert (g.lat, g.lon, g.height) == (ORIGIN.lat, ORIGIN.lon, ORIGIN.height)


def test_from_local_millidegree_inverse():
    g = from_local(ORIGIN, LocalPoint(0.0, 111.19, 0.0))
    assert abs((g.lat - ORIGIN.lat) - 0.001) < 1e-6


@settings(max_examples=300)
@given(
    east=st.floats(-1000.0, 1000.0),
    north=st.floats(-1000.0, 1000.0),
    up=st.floats(-100.0, 100.0),
)
def test_round_trip_within_a_kilometer(east, north, up):
    """from_local then to_local restores coordinates to 1e-9 degrees."""
    g = from_local(ORIGIN, LocalPoint(east, north, up))
    back = to_local(ORIGIN, g)
    assert abs(back.east - east) < 1e-3
    assert abs(back.north - north) < 1e-3
    g2 = from_local(ORIGIN, back)
    assert abs(g2.lat - g.lat) < 1e-9
    assert abs(g2.lon - g.lon) < 1e-9


def _haversine(a, b):
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * R_EARTH * math.asin(math.sqrt(h))


def test_planar_error_under_200m():
    """Projection distance error stays below 0.1% out to 200 m."""
    for east, north in [(200.0, 0.0), (0.0, 200.0), (141.4, 141.4), (-120.0, 90.0), (35.0, -180.0)]:
        g = from_local(ORIGIN, LocalPoint(east, north, 0.0))
        planar = math.hypot(east, north)
        great_circle = _haversine(ORIGIN, g)
        assert abs(planar - great_circle) / planar < 1e-3


def test_local_distance_matches_norm():
    a = from_local(ORIGIN, LocalPoint(3.0, 4.0, 0.0))
    assert abs(local_distance(ORIGIN, a) - 5.0) < 1e-6


def test_geopoint_rejects_bad_latitude():
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, 181.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, 0.0, float("nan"))


def test_scan_rejects_empty_rssi():
    with pytest.raises(ValueError):
        Scan(t=0, rssi={})
    with pytest.raises(ValueError):
        Scan(t=0, rssi={"ap": float("inf")})


# --- file I/O ------------------------------------------------------------


def test_empty_trace_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_trace(path) == []


def test_three_line_trace_in_order(tmp_path):
    path = tmp_path / "trace.jsonl"
    path.write_text(
        '{"t": 0, "rssi": {"a": -40.0}}\n'
        '{"t": 1, "rssi": {"a": -41.5, "b": -60.0}}\n'
        '{"t": 2, "rssi": {"b": -59.25}}\n'
    )
    scans = load_trace(path)
    assert [s.t for s in scans] == [0, 1, 2]
    assert scans[1].rssi == {"a": -41.5, "b": -60.0}


def test_duplicate_apid_names_the_ap(tmp_path):
    path = tmp_path / "dup.jsonl"
    path.write_text('{"t": 0, "rssi": {"evil": -40.0, "evil": -42.0}}\n')
    with pytest.raises(TraceFormatError, match="evil"):
        load_trace(path)


def test_parse_error_carries_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"t": 0, "rssi": {"a": -40.0}}\nnot json\n')
    with pytest.raises(TraceFormatError, match="line 2"):
        load_trace(path)


def test_trace_round_trip_bit_identical(tmp_path):
    scans = [
        Scan(t=0, rssi={"a": -40.123456789012345, "b": -61.0}),
        Scan(t=1, rssi={"a": -40.000000000000014}, truth=GeoPoint(47.0, 8.0, 1.25)),
    ]
    path = tmp_path / "trace.jsonl"
    save_trace(path, scans)
    back = load_trace(path)
    assert [s.t for s in back] == [0, 1]
    for orig, loaded in zip(scans, back):
        assert loaded.rssi == orig.rssi  # exact float equality
    assert back[1].truth == scans[1].truth


def test_registry_round_trip(tmp_path):
    reg = ApRegistry({"ap0": GeoPoint(47.0, 8.0, 3.5), "ap1": GeoPoint(47.0001, 8.0001, 6.0)})
    path = tmp_path / "registry.csv"
    save_registry(path, reg)
    back = load_registry(path)
    assert back.ap_ids() == reg.ap_ids()
    for ap in reg.ap_ids():
        assert back[ap] == reg[ap]


def test_fingerprint_file_requires_truth(tmp_path):
    from rapdet.io import load_fingerprints

    path = tmp_path / "fp.jsonl"
    path.write_text('{"t": 0, "rssi": {"a": -40.0}}\n')
    with pytest.raises(TraceFormatError, match="truth"):
        load_fingerprints(path)
