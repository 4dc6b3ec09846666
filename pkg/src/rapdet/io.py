"""File formats: JSON-lines traces/fingerprints/labels/verdicts, CSV registries.

Trace line:        {"t": 12, "rssi": {"ap01": -61.2, ...}, "truth": [lat, lon, h]}
                   ("truth" optional in traces, required in fingerprint files)
Registry CSV:      header "apid,lat,lon,height", one AP per row
Scene metadata:    JSON object with at least {"origin": [lat, lon, h]}
Label line:        {"t": 12, "active": true, "rogue": ["ap03"]}
Verdict line:      {"t": 12, "alarm": true, "fused": [e, n, u], "lambda": 3.1,
                    "flagged": [5, 9], "rogue": ["ap03"], "recovered": [e, n, u]}

All writers produce deterministic bytes for identical inputs (no timestamps,
fixed key order, shortest-repr floats), and load(save(x)) round-trips values
bit-exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

from .errors import TraceFormatError
from .geo import GeoPoint
from .model import ApRegistry, FingerprintDatabase, Scan


def _reject_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise ValueError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _parse_truth(raw: Any, where: str) -> GeoPoint:
    if not isinstance(raw, list) or len(raw) != 3:
        raise TraceFormatError(f"{where}: truth must be a [lat, lon, height] triple")
    try:
        return GeoPoint(float(raw[0]), float(raw[1]), float(raw[2]))
    except ValueError as exc:
        raise TraceFormatError(f"{where}: {exc}") from exc


def _parse_scan_line(line: str, lineno: int, *, require_truth: bool) -> Scan:
    where = f"line {lineno}"
    try:
        raw = json.loads(line, object_pairs_hook=_reject_duplicate_keys)
    except ValueError as exc:
        raise TraceFormatError(f"{where}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise TraceFormatError(f"{where}: expected a JSON object")
    unknown = set(raw) - {"t", "rssi", "truth"}
    if unknown:
        raise TraceFormatError(f"{where}: unknown fields {sorted(unknown)}")
    if "t" not in raw or "rssi" not in raw:
        raise TraceFormatError(f"{where}: fields 't' and 'rssi' are required")
    t = raw["t"]
    if not isinstance(t, int) or isinstance(t, bool):
        raise TraceFormatError(f"{where}: t must be an integer")
    rssi = raw["rssi"]
    if not isinstance(rssi, dict) or not rssi:
        raise TraceFormatError(f"{where}: rssi must be a non-empty object")
    clean: dict[str, float] = {}
    for ap, value in rssi.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            raise TraceFormatError(f"{where}: rssi[{ap!r}] must be a finite number")
        clean[ap] = float(value)
    truth = None
    if "truth" in raw and raw["truth"] is not None:
        truth = _parse_truth(raw["truth"], where)
    elif require_truth:
        raise TraceFormatError(f"{where}: truth is required in fingerprint entries")
    try:
        return Scan(t=t, rssi=clean, truth=truth)
    except ValueError as exc:
        raise TraceFormatError(f"{where}: {exc}") from exc


def _iter_lines(path: Path) -> list[tuple[int, str]]:
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if line.strip():
            out.append((lineno, line))
    return out


def load_trace(path: str | Path) -> list[Scan]:
    """Read a JSON-lines trace. Empty file -> empty list."""
    return [_parse_scan_line(line, n, require_truth=False) for n, line in _iter_lines(Path(path))]


def load_fingerprints(path: str | Path) -> FingerprintDatabase:
    scans = [_parse_scan_line(line, n, require_truth=True) for n, line in _iter_lines(Path(path))]
    if not scans:
        raise TraceFormatError(f"{path}: fingerprint file is empty")
    try:
        return FingerprintDatabase(tuple(scans))
    except ValueError as exc:
        raise TraceFormatError(f"{path}: {exc}") from exc


def _scan_to_dict(scan: Scan) -> dict[str, Any]:
    out: dict[str, Any] = {"t": scan.t, "rssi": {ap: scan.rssi[ap] for ap in sorted(scan.rssi)}}
    if scan.truth is not None:
        out["truth"] = [scan.truth.lat, scan.truth.lon, scan.truth.height]
    return out


def save_trace(path: str | Path, scans: list[Scan] | FingerprintDatabase) -> None:
    lines = [json.dumps(_scan_to_dict(s), separators=(",", ":")) for s in scans]
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_registry(path: str | Path) -> ApRegistry:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError(f"{path}: registry file is empty") from None
        if [h.strip() for h in header] != ["apid", "lat", "lon", "height"]:
            raise TraceFormatError(f"{path}: line 1: header must be 'apid,lat,lon,height'")
        positions: dict[str, GeoPoint] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise TraceFormatError(f"{path}: line {lineno}: expected 4 columns, got {len(row)}")
            apid = row[0].strip()
            if not apid:
                raise TraceFormatError(f"{path}: line {lineno}: empty apid")
            if apid in positions:
                raise TraceFormatError(f"{path}: line {lineno}: duplicate apid {apid!r}")
            try:
                positions[apid] = GeoPoint(float(row[1]), float(row[2]), float(row[3]))
            except ValueError as exc:
                raise TraceFormatError(f"{path}: line {lineno}: {exc}") from exc
    if not positions:
        raise TraceFormatError(f"{path}: registry has no APs")
    return ApRegistry(positions)


def save_registry(path: str | Path, registry: ApRegistry) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["apid", "lat", "lon", "height"])
        for ap in registry.ap_ids():
            pos = registry[ap]
            writer.writerow([ap, repr(pos.lat), repr(pos.lon), repr(pos.height)])


def load_scene_meta(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
    except ValueError as exc:
        raise TraceFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(meta, dict) or "origin" not in meta:
        raise TraceFormatError(f"{path}: scene metadata must contain 'origin'")
    origin = meta["origin"]
    if not isinstance(origin, list) or len(origin) != 3:
        raise TraceFormatError(f"{path}: origin must be [lat, lon, height]")
    return meta


def scene_origin(meta: dict[str, Any]) -> GeoPoint:
    lat, lon, height = meta["origin"]
    return GeoPoint(float(lat), float(lon), float(height))


def save_json(path: str | Path, payload: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def save_jsonl(path: str | Path, rows: list[dict[str, Any]]) -> None:
    lines = [json.dumps(row, separators=(",", ":")) for row in rows]
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_jsonl(path: str | Path) -> list[dict[str, Any]]:
    out = []
    for lineno, line in _iter_lines(Path(path)):
        try:
            row = json.loads(line)
        except ValueError as exc:
            raise TraceFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(row, dict):
            raise TraceFormatError(f"line {lineno}: expected a JSON object")
        out.append(row)
    return out
